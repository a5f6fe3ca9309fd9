"""Stochastic gradient method with Robbins-Monro steps t_n = theta / n^s,
trajectory recording, and the finite-horizon rate and boundedness checks."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .oracle import ProblemSpec, SaaSet, evaluate_sample, saa_evaluate
from .pde_solver import SolverError
from .rand_field import draw_sample, rng_streams, zero_sample


class OptimizerError(RuntimeError):
    pass


@dataclass(frozen=True)
class StepSchedule:
    theta: float
    s: float = 1.0

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if not (self.s > 0 and math.isfinite(self.s)):
            raise ValueError("exponent s must lie in (0, inf)")

    def step(self, n: int) -> float:
        return self.theta / n ** self.s

    def steps(self, n_max: int) -> np.ndarray:
        return self.theta / np.arange(1, n_max + 1, dtype=float) ** self.s

    @property
    def rm_valid(self) -> bool:
        """sum t_n = inf and sum t_n^2 < inf."""
        return 0.5 < self.s <= 1.0

    @property
    def rate_condition_valid(self) -> bool:
        """sum_j t_j / sum_{k<=j} t_k = inf (holds for every s <= 1)."""
        return self.s <= 1.0


@dataclass
class ScheduleReport:
    horizon: int
    sum_t: float
    sum_t2: float
    sum_ratio: float
    rm_valid: bool | None
    rate_condition_valid: bool | None


def validate_schedule(schedule, horizon: int = 10 ** 6) -> ScheduleReport:
    """Partial sums up to ``horizon``; analytic flags for power schedules.

    ``schedule`` is a StepSchedule or any callable n -> t_n.
    """
    if horizon < 10:
        raise ValueError("horizon must be >= 10")
    if isinstance(schedule, StepSchedule):
        t = schedule.steps(horizon)
        rm, rate = schedule.rm_valid, schedule.rate_condition_valid
    else:
        t = np.array([float(schedule(n)) for n in range(1, horizon + 1)])
        if np.any(t < 0):
            raise ValueError("steps must be nonnegative")
        rm = rate = None
    cum = np.cumsum(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(cum > 0, t / cum, 0.0)
    return ScheduleReport(horizon, float(cum[-1]), float(np.sum(t * t)),
                          float(np.sum(ratio)), rm, rate)


@dataclass
class IterationRecord:
    n: int
    t_n: float
    j_saa: float
    grad_norm_sq: float
    min_grad_norm_sq: float
    cum_step_sum: float
    u_norm: float
    sample_index: int
    wall_ms: float
    noise_norm: float = math.nan
    newton_residual: float = math.nan


@dataclass
class Trajectory:
    records: list
    final_control: np.ndarray
    controls: list = field(default_factory=list)
    terminated_early: bool = False
    last_sample: object = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def full_gradient_records(self) -> list:
        return [r for r in self.records if not math.isnan(r.grad_norm_sq)]

    def running_min_at(self, n: int) -> float:
        """Running minimum of ||grad j_N||^2 over iterations <= n."""
        vals = [r.min_grad_norm_sq for r in self.records if r.n <= n and not math.isnan(r.min_grad_norm_sq)]
        return vals[-1] if vals else math.nan


@dataclass
class RunConfig:
    problem: ProblemSpec
    schedule: StepSchedule
    n_iters: int
    saa: SaaSet
    u1: np.ndarray | None = None
    cadence: int = 1
    seed: int = 10
    streaming: bool = False
    bias_schedule: bool = False
    warm_start: bool = True
    store_controls: bool = True

    def __post_init__(self):
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")

    def initial_control(self) -> np.ndarray:
        n = self.problem.mesh.n_nodes
        u = np.ones(n) if self.u1 is None else np.array(self.u1, dtype=float)
        if u.shape != (n,):
            raise ValueError("initial control does not live on the mesh")
        return u


def _finite(n, **vals):
    for k, v in vals.items():
        if not np.all(np.isfinite(v)):
            raise OptimizerError(f"non-finite {k} at iteration {n}")


def run_sgd(config: RunConfig) -> Trajectory:
    """Algorithm: u_{n+1} = u_n - t_n G(u_n, xi_n), xi_n drawn uniformly
    (with replacement) from the SAA set, or fresh per iteration in
    streaming mode. Every ``cadence`` iterations the full SAA gradient is
    evaluated for the rate statistic."""
    sched = config.schedule
    if not sched.rm_valid:
        raise ValueError(f"schedule with s={sched.s} violates the Robbins-Monro conditions")
    spec = config.problem
    space = spec.space
    saa = config.saa
    streams = rng_streams(config.seed)
    idx_rng = streams["index"]
    field_rng = streams["field"]
    u = config.initial_control()
    warm: dict | None = {} if config.warm_start else None
    records, controls = [], []
    cum = 0.0
    run_min = math.inf
    last_sample = None
    t_start = time.perf_counter()
    for n in range(1, config.n_iters + 1):
        t_n = sched.step(n)
        tol = spec.tolerances
        if config.bias_schedule:
            tol = tol.with_newton_tol(tol.newton_tol / n ** 2)
        if config.streaming:
            sample = draw_sample(field_rng, spec.kl, seed_id=n)
            idx = -1
        else:
            idx = int(idx_rng.integers(saa.N))
            sample = saa[idx]
        last_sample = sample
        try:
            j_val = gn2 = noise = math.nan
            newton_res = math.nan
            full = None
            if (n - 1) % config.cadence == 0:
                full = saa_evaluate(spec, u, saa, tol, warm)
                j_val = full.value
                gn2 = space.l2_inner(full.gradient, full.gradient)
                newton_res = full.max_newton_residual
                _finite(n, j_saa=j_val, grad_norm_sq=gn2)
                run_min = min(run_min, gn2)
            y0 = None if warm is None or idx < 0 else warm.get(idx)
            ev = evaluate_sample(spec, u, sample, tol, y0)
            g = ev.gradient
            if warm is not None and idx >= 0:
                warm[idx] = ev.state
        except SolverError as exc:
            raise OptimizerError(f"solver failure at iteration {n}: {exc}") from exc
        _finite(n, gradient=g)
        if full is not None:
            noise = space.l2_norm(g - full.gradient)
        cum += t_n
        u_norm = space.l2_norm(u)
        if config.store_controls:
            controls.append(u.copy())
        records.append(IterationRecord(
            n=n, t_n=t_n, j_saa=j_val, grad_norm_sq=gn2,
            min_grad_norm_sq=run_min if math.isfinite(run_min) else math.nan,
            cum_step_sum=cum, u_norm=u_norm, sample_index=idx,
            wall_ms=(time.perf_counter() - t_start) * 1e3,
            noise_norm=noise, newton_residual=newton_res))
        u = u - t_n * g
        _finite(n, control=u)
    return Trajectory(records, u, controls, False, last_sample)


def run_deterministic(config: RunConfig, threshold: float = 1e-8) -> Trajectory:
    """Plain gradient descent on the problem with a = a0 (all xi zero).

    Stops once the running minimum of ||grad j||^2 is <= ``threshold``.
    """
    sched = config.schedule
    spec = config.problem
    space = spec.space
    det = SaaSet([zero_sample(spec.kl)])
    u = config.initial_control()
    warm: dict = {}
    records, controls = [], []
    cum = 0.0
    run_min = math.inf
    t_start = time.perf_counter()
    stopped = False
    for n in range(1, config.n_iters + 1):
        t_n = sched.step(n)
        try:
            full = saa_evaluate(spec, u, det, spec.tolerances, warm)
        except SolverError as exc:
            raise OptimizerError(f"solver failure at iteration {n}: {exc}") from exc
        gn2 = space.l2_inner(full.gradient, full.gradient)
        _finite(n, j=full.value, grad_norm_sq=gn2)
        run_min = min(run_min, gn2)
        cum += t_n
        if config.store_controls:
            controls.append(u.copy())
        records.append(IterationRecord(
            n=n, t_n=t_n, j_saa=full.value, grad_norm_sq=gn2, min_grad_norm_sq=run_min,
            cum_step_sum=cum, u_norm=space.l2_norm(u), sample_index=0,
            wall_ms=(time.perf_counter() - t_start) * 1e3,
            newton_residual=full.max_newton_residual))
        if run_min <= threshold:
            stopped = True
            break
        u = u - t_n * full.gradient
        _finite(n, control=u)
    return Trajectory(records, u, controls, stopped, det[0])


# --- rate verdict -------------------------------------------------------------

@dataclass
class RateVerdict:
    passed: bool
    early_median: float
    late_median: float
    ratio: float
    iters: np.ndarray
    cum_step: np.ndarray
    product: np.ndarray

    @property
    def label(self) -> str:
        return "PASS" if self.passed else "FAIL"


def rate_check(trajectory_or_arrays, min_records: int = 20, factor: float = 0.5) -> RateVerdict:
    """Finite-horizon surrogate for min ||grad j||^2 = o(1 / sum t_j).

    P_n = (running min ||grad||^2) * (sum_{j<=n} t_j). PASS when the median of
    P over the last 10% of full-gradient records is at most ``factor`` times
    the median over records 5%-15%.

    Accepts a Trajectory or a tuple (iters, grad_norm_sq, cum_step_sum).
    """
    if isinstance(trajectory_or_arrays, Trajectory):
        recs = trajectory_or_arrays.full_gradient_records()
        iters = np.array([r.n for r in recs], dtype=float)
        gn2 = np.array([r.grad_norm_sq for r in recs])
        cum = np.array([r.cum_step_sum for r in recs])
    else:
        iters, gn2, cum = (np.asarray(a, dtype=float) for a in trajectory_or_arrays)
        keep = ~np.isnan(gn2)
        iters, gn2, cum = iters[keep], gn2[keep], cum[keep]
    R = gn2.size
    if R < min_records:
        raise ValueError(f"rate check needs >= {min_records} full-gradient records, got {R}")
    product = np.minimum.accumulate(gn2) * cum
    lo, hi = int(0.05 * R), max(int(0.05 * R) + 1, int(math.ceil(0.15 * R)))
    tail = R - max(1, int(0.10 * R))
    early = float(np.median(product[lo:hi]))
    late = float(np.median(product[tail:]))
    ratio = late / early if early > 0 else (0.0 if late == 0 else math.inf)
    return RateVerdict(late <= factor * early, early, late, ratio, iters, cum, product)


# --- boundedness ---------------------------------------------------------------

@dataclass
class BoundednessReport:
    max_u_norm: float
    gamma_probe: float
    probe_inner_products: list
    min_inner_product: float
    angle_condition_ok: bool
    growing: bool


def boundedness_monitor(trajectory: Trajectory, spec: ProblemSpec | None = None,
                        saa: SaaSet | None = None, probe_count: int = 5,
                        growth_factor: float = 2.0) -> BoundednessReport:
    """Diagnostic only: sup ||u_n|| and the angle condition
    inf_{||u||^2 >= gamma} (grad j(u), u) >= 0 probed at rescaled iterates
    with ||u||^2 = gamma = 4 max ||u_n||^2."""
    norms = trajectory.column("u_norm")
    max_norm = float(norms.max()) if norms.size else 0.0
    q = max(1, norms.size // 4)
    growing = bool(norms.size >= 4 and norms[-q:].max() > growth_factor * max(norms[:q].max(), 1e-300))
    gamma = 4.0 * max_norm ** 2
    inners = []
    if spec is not None and saa is not None and max_norm > 0 and probe_count > 0 and trajectory.controls:
        ctrls = trajectory.controls
        picks = np.unique(np.linspace(0, len(ctrls) - 1, probe_count).round().astype(int))
        for k in picks:
            u = ctrls[k]
            nu = spec.space.l2_norm(u)
            if nu == 0:
                continue
            u = u * (math.sqrt(gamma) / nu)
            g = saa_evaluate(spec, u, saa).gradient
            inners.append(spec.space.l2_inner(g, u))
    mn = min(inners) if inners else math.nan
    return BoundednessReport(max_norm, gamma, inners, mn,
                             bool(inners) and mn >= 0, growing)


# --- descent-in-expectation proxy ---------------------------------------------

def descent_proxy(problem: ProblemSpec, saa: SaaSet, schedule: StepSchedule,
                  seeds, n_iters: int, u1=None) -> dict:
    """Statistical diagnostic of
    E[j(u_{n+1})] - j(u_n) + t_n ||grad j(u_n)||^2 <= (L/2) t_n^2 M
    with L estimated from gradient differences and M from mean ||G||^2."""
    lhs_rows = []
    g2_stoch = []
    lip = 0.0
    space = problem.space
    for seed in seeds:
        cfg = RunConfig(problem, schedule, n_iters + 1, saa, u1=u1, seed=seed)
        traj = run_sgd(cfg)
        j = traj.column("j_saa")
        gn2 = traj.column("grad_norm_sq")
        t = traj.column("t_n")
        lhs_rows.append(j[1:] - j[:-1] + t[:-1] * gn2[:-1])
        ctrl = traj.controls
        for n in range(len(ctrl) - 1):
            du = space.l2_norm(ctrl[n + 1] - ctrl[n])
            g2_stoch.append((du / t[n]) ** 2)
        # gradient Lipschitz estimate from consecutive full gradients
        grads = [saa_evaluate(problem, c, saa).gradient for c in (ctrl[0], ctrl[-1])]
        du = space.l2_norm(ctrl[-1] - ctrl[0])
        if du > 0:
            lip = max(lip, space.l2_norm(grads[1] - grads[0]) / du)
    lhs = np.mean(np.array(lhs_rows), axis=0)
    sem = np.std(np.array(lhs_rows), axis=0, ddof=1) / math.sqrt(len(lhs_rows)) if len(lhs_rows) > 1 else np.zeros_like(lhs)
    m_hat = float(np.mean(g2_stoch))
    t = schedule.steps(n_iters)
    rhs = 0.5 * lip * t ** 2 * m_hat
    return {"lhs_mean": lhs, "lhs_sem": sem, "rhs": rhs, "L_hat": lip, "M_hat": m_hat,
            "fraction_within_2sem": float(np.mean(lhs <= rhs + 2 * sem))}
