"""Per-sample objective, adjoint-based stochastic gradient and their sample
averages over a frozen sample set.

Controls and gradients are nodal P1 vectors; a gradient is the L2 Riesz
representative lambda*u - p, so <G, d>_L2 = G^T M d is the directional
derivative of the objective.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .mesh_fem import Mesh, build_mesh, interpolate
from .pde_solver import SemilinearModel, SolverError, SolverTolerances
from .rand_field import KlSpec, RandomSample, build_kl_spec, draw_samples


def desired_state(x):
    """Target state 60 + 160 (x1 (x1 - 1) + x2 (x2 - 1))."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return 60.0 + 160.0 * (x1 * (x1 - 1.0) + x2 * (x2 - 1.0))


@dataclass(eq=False)
class ProblemSpec:
    kl: KlSpec
    mesh: Mesh
    y_target: np.ndarray
    lam: float
    tolerances: SolverTolerances = field(default_factory=SolverTolerances)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        self.y_target = np.asarray(self.y_target, dtype=float)
        if self.y_target.shape != (self.mesh.n_nodes,):
            raise ValueError("y_target does not live on the mesh")

    @cached_property
    def model(self) -> SemilinearModel:
        return SemilinearModel(self.mesh, self.kl)

    @property
    def space(self):
        return self.model.space

    def with_lambda(self, lam: float) -> "ProblemSpec":
        """Same discretization, different regularization (operators are shared)."""
        other = ProblemSpec(self.kl, self.mesh, self.y_target, lam, self.tolerances)
        if "model" in self.__dict__:
            other.__dict__["model"] = self.model
        return other


def make_problem(n_div: int = 25, lam: float = 1.0, y_target=desired_state,
                 kl: KlSpec | None = None,
                 tolerances: SolverTolerances | None = None) -> ProblemSpec:
    mesh = build_mesh(n_div)
    kl = kl or build_kl_spec(20, 0.5, 1.0)
    yt = interpolate(mesh, y_target) if callable(y_target) else np.asarray(y_target, float)
    return ProblemSpec(kl, mesh, yt, lam, tolerances or SolverTolerances())


@dataclass(frozen=True)
class SaaSet:
    samples: tuple[RandomSample, ...]

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if len(self.samples) < 1:
            raise ValueError("an SAA set needs at least one sample")

    @property
    def N(self) -> int:
        return len(self.samples)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def __add__(self, other: "SaaSet") -> "SaaSet":
        return SaaSet(self.samples + other.samples)


def draw_saa_set(rng: np.random.Generator, kl: KlSpec, n: int) -> SaaSet:
    return SaaSet(draw_samples(rng, kl, n))


def _tol(spec: ProblemSpec, tol):
    return spec.tolerances if tol is None else tol


def objective_sample(spec: ProblemSpec, u, sample: RandomSample, tol=None, y0=None) -> float:
    """0.5 ||y_u - y_D||^2 + 0.5 lam ||u||^2 for one coefficient sample."""
    y = spec.model.solve_state(u, sample, _tol(spec, tol), y0=y0).y
    return _objective_from_state(spec, u, y)


def _objective_from_state(spec, u, y):
    sp = spec.space
    return 0.5 * sp.l2_inner(y - spec.y_target, y - spec.y_target) + 0.5 * spec.lam * sp.l2_inner(u, u)


@dataclass
class SampleEvaluation:
    value: float
    gradient: np.ndarray
    state: np.ndarray
    adjoint: np.ndarray
    newton_residual: float


def evaluate_sample(spec: ProblemSpec, u, sample: RandomSample, tol=None,
                    y0=None) -> SampleEvaluation:
    """State solve, adjoint solve, objective value and stochastic gradient."""
    tol = _tol(spec, tol)
    u = np.asarray(u, dtype=float)
    rep = spec.model.solve_state(u, sample, tol, y0=y0)
    p = spec.model.solve_adjoint(rep.y, sample, spec.y_target, tol)
    return SampleEvaluation(
        value=_objective_from_state(spec, u, rep.y),
        gradient=spec.lam * u - p,
        state=rep.y,
        adjoint=p,
        newton_residual=rep.final_residual,
    )


def stochastic_gradient(spec: ProblemSpec, u, sample: RandomSample, tol=None, y0=None) -> np.ndarray:
    return evaluate_sample(spec, u, sample, tol, y0).gradient


@dataclass
class SaaEvaluation:
    value: float
    gradient: np.ndarray
    states: list
    max_newton_residual: float


def saa_evaluate(spec: ProblemSpec, u, saa: SaaSet, tol=None, warm: dict | None = None) -> SaaEvaluation:
    """Mean objective and gradient over the frozen set, summed in sample order.

    ``warm`` maps sample index to a previous state used as the Newton start;
    it is updated in place with the new states.
    """
    u = np.asarray(u, dtype=float)
    total = 0.0
    grad = np.zeros_like(u)
    states = []
    worst = 0.0
    for i, s in enumerate(saa.samples):
        y0 = None if warm is None else warm.get(i)
        try:
            ev = evaluate_sample(spec, u, s, tol, y0)
        except SolverError as exc:
            raise SolverError(f"sample {i}: {exc}", exc.report) from exc
        total += ev.value
        grad += ev.gradient
        states.append(ev.state)
        worst = max(worst, ev.newton_residual)
        if warm is not None:
            warm[i] = ev.state
    n = saa.N
    return SaaEvaluation(total / n, grad / n, states, worst)


def saa_objective(spec: ProblemSpec, u, saa: SaaSet, tol=None) -> float:
    u = np.asarray(u, dtype=float)
    total = 0.0
    for i, s in enumerate(saa.samples):
        try:
            total += objective_sample(spec, u, s, tol)
        except SolverError as exc:
            raise SolverError(f"sample {i}: {exc}", exc.report) from exc
    return total / saa.N


def saa_gradient(spec: ProblemSpec, u, saa: SaaSet, tol=None) -> np.ndarray:
    return saa_evaluate(spec, u, saa, tol).gradient


def grad_norm(spec: ProblemSpec, g) -> float:
    """Control-space (L2) norm sqrt(g^T M g)."""
    return spec.space.l2_norm(g)


# --- finite-difference certification ---------------------------------------

@dataclass
class GradCheckRecord:
    control: int
    sample: int
    direction: int
    adjoint: float
    fd: float
    rel_error: float


@dataclass
class GradCheckResult:
    records: list
    threshold: float

    @property
    def worst(self) -> float:
        return max(r.rel_error for r in self.records)

    @property
    def passed(self) -> bool:
        return self.worst < self.threshold


def fd_directional(fun, u, d, h: float = 1e-4) -> float:
    return (fun(u + h * d) - fun(u - h * d)) / (2.0 * h)


def gradient_check(spec: ProblemSpec, rng: np.random.Generator, n_controls: int = 5,
                   n_samples: int = 3, n_dirs: int = 5, h: float = 1e-4,
                   newton_tol: float = 1e-12, threshold: float = 1e-5,
                   fault: str | None = None) -> GradCheckResult:
    """Compare <G, d>_L2 with central differences of the per-sample objective.

    ``fault='sign-flip'`` negates the adjoint gradient (mutation check).
    """
    tol = spec.tolerances.with_newton_tol(newton_tol)
    n = spec.mesh.n_nodes
    samples = draw_samples(rng, spec.kl, n_samples)
    records = []
    for ci in range(n_controls):
        u = rng.normal(0.0, 2.0, size=n) + rng.uniform(-2.0, 2.0)
        for si, s in enumerate(samples):
            g = evaluate_sample(spec, u, s, tol).gradient
            if fault == "sign-flip":
                g = -g
            elif fault is not None:
                raise ValueError(f"unknown fault mode {fault!r}")
            for di in range(n_dirs):
                d = rng.normal(size=n)
                d /= spec.space.l2_norm(d)
                adj = spec.space.l2_inner(g, d)
                fd = fd_directional(lambda v: objective_sample(spec, v, s, tol), u, d, h)
                err = abs(adj - fd) / max(1.0, abs(fd))
                records.append(GradCheckRecord(ci, si, di, adj, fd, err))
    return GradCheckResult(records, threshold)


def gradient_variance(spec: ProblemSpec, u, saa: SaaSet, d, tol=None) -> dict:
    """Empirical mean and variance of <G(u, xi), d> over the sample set."""
    vals = np.array([spec.space.l2_inner(stochastic_gradient(spec, u, s, tol), d)
                     for s in saa.samples])
    return {"mean": float(vals.mean()), "variance": float(vals.var(ddof=1)) if vals.size > 1 else 0.0}
