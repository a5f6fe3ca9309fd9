"""Batch front-end.

Subcommands: run, grad-check, rate-check, armijo-demo, deterministic.
A ``--config`` file holds flat ``key=value`` lines using the long flag names
(``lambda=1,0.1``); command-line flags override it.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .armijo_demo import ArmijoParams, simulate_armijo, simulate_rm_1d
from .oracle import SaaSet, draw_saa_set, gradient_check, make_problem
from .optimizer import (RunConfig, StepSchedule, Trajectory, boundedness_monitor,
                        rate_check, run_deterministic, run_sgd)
from .pde_solver import SolverError
from .rand_field import rng_streams, zero_sample

CSV_HEADER = "iter,t_n,j_saa,grad_norm_sq,min_grad_norm_sq,cum_step_sum,u_norm,sample_index,wall_ms"

DEFAULTS = {
    "seed": 10, "ndiv": 10, "nsaa": 200, "iters": 300, "lambda": "1,0.1,0.01",
    "theta": None, "s": 1.0, "out": "results", "cadence": 1,
    "epsilon": 0.1, "beta": 1.0, "armijo_t": 0.5, "armijo_c": 0.5, "nseeds": 20,
    "fault": None,
}
COMMAND_DEFAULTS = {
    "grad-check": {"ndiv": 6, "lambda": "0.1"},
    "armijo-demo": {"iters": 10_000, "theta": 0.5},
    "deterministic": {"lambda": "0.01", "iters": 5000},
}
CASTS = {"seed": int, "ndiv": int, "nsaa": int, "iters": int, "cadence": int, "nseeds": int,
         "theta": float, "s": float, "epsilon": float, "beta": float, "armijo_t": float,
         "armijo_c": float, "lambda": str, "out": str, "fault": str}


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else format(x, ".17g")


def trajectory_rows(traj: Trajectory):
    for r in traj.records:
        yield ",".join([
            str(r.n), fmt(r.t_n), fmt(r.j_saa), fmt(r.grad_norm_sq), fmt(r.min_grad_norm_sq),
            fmt(r.cum_step_sum), fmt(r.u_norm), str(r.sample_index), fmt(r.wall_ms)])


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in trajectory_rows(traj):
            fh.write(row + "\n")


def read_trajectory_csv(path) -> dict:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ConfigError(f"{path}: unexpected header {header!r}")
        cols = {k: [] for k in CSV_HEADER.split(",")}
        for line in fh:
            if not line.strip():
                continue
            for k, v in zip(cols, line.rstrip("\n").split(",")):
                cols[k].append(float(v) if v else math.nan)
    return {k: np.array(v) for k, v in cols.items()}


def write_fields_csv(mesh, control, state, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("x,y,control,state\n")
        for (x, y), u, s in zip(mesh.nodes, control, state):
            fh.write(f"{fmt(x)},{fmt(y)},{fmt(u)},{fmt(s)}\n")


def load_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, val = (p.strip() for p in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in CASTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = val
    return out


def resolve(args) -> dict:
    cfg = dict(DEFAULTS)
    cfg.update(COMMAND_DEFAULTS.get(args.command, {}))
    if args.config:
        cfg.update(load_config(args.config))
    for key in CASTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    try:
        for key, cast in CASTS.items():
            if cfg.get(key) is not None:
                cfg[key] = cast(cfg[key])
        cfg["lambdas"] = [float(v) for v in str(cfg["lambda"]).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not cfg["lambdas"]:
        raise ConfigError("empty lambda list")
    for key in ("ndiv", "nsaa", "iters", "cadence", "nseeds"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    return cfg


def _theta(cfg, lam):
    if cfg["theta"] is not None:
        return cfg["theta"]
    if lam <= 0:
        raise ConfigError("theta defaults to 2/lambda and needs lambda > 0")
    return 2.0 / lam


def _prepare_out(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out):
            pass
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    return out


def cmd_run(cfg) -> int:
    out = _prepare_out(cfg["out"])
    base = make_problem(cfg["ndiv"], cfg["lambdas"][0])
    saa = draw_saa_set(rng_streams(cfg["seed"])["field"], base.kl, cfg["nsaa"])
    written = []
    status = 0
    try:
        for lam in cfg["lambdas"]:
            spec = base.with_lambda(lam)
            sched = StepSchedule(_theta(cfg, lam), cfg["s"])
            conf = RunConfig(spec, sched, cfg["iters"], saa, cadence=cfg["cadence"], seed=cfg["seed"])
            traj = run_sgd(conf)
            d = out / f"lambda_{lam:g}"
            d.mkdir(exist_ok=True)
            p = d / "trajectory.csv"
            written.append(p)
            write_trajectory_csv(traj, p)
            verdict = rate_check(traj)
            bound = boundedness_monitor(traj, spec, saa, probe_count=3)
            p = d / "rate.txt"
            written.append(p)
            with open(p, "w") as fh:
                fh.write(f"# verdict {verdict.label}\n")
                fh.write(f"# early_median {fmt(verdict.early_median)} late_median {fmt(verdict.late_median)}\n")
                fh.write(f"# max_u_norm {fmt(bound.max_u_norm)} min_angle_inner {fmt(bound.min_inner_product)} "
                         f"angle_ok {bound.angle_condition_ok} growing {bound.growing}\n")
                fh.write("# cum_step_sum min_grad_norm_sq\n")
                recs = traj.full_gradient_records()
                for r in recs:
                    fh.write(f"{fmt(r.cum_step_sum)} {fmt(r.min_grad_norm_sq)}\n")
            state = spec.model.solve_state(traj.final_control, traj.last_sample).y
            p = d / "fields.csv"
            written.append(p)
            write_fields_csv(spec.mesh, traj.final_control, state, p)
            print(f"lambda={lam:g} rate={verdict.label} ratio={verdict.ratio:.3g} "
                  f"min_grad_norm_sq={traj.records[-1].min_grad_norm_sq:.6g} max_u_norm={bound.max_u_norm:.6g}")
            if not verdict.passed:
                status = 1
    except BaseException:
        for p in written:
            try:
                os.remove(p)
            except OSError:
                pass
        raise
    return status


def cmd_grad_check(cfg) -> int:
    spec = make_problem(cfg["ndiv"], cfg["lambdas"][0])
    rng = rng_streams(cfg["seed"])["field"]
    res = gradient_check(spec, rng, fault=cfg["fault"])
    label = "PASS" if res.passed else "FAIL"
    print(f"grad-check {label} worst_rel_error={res.worst:.3e} threshold={res.threshold:g} "
          f"checks={len(res.records)}")
    return 0 if res.passed else 1


def cmd_rate_check(cfg, path) -> int:
    cols = read_trajectory_csv(path)
    verdict = rate_check((cols["iter"], cols["grad_norm_sq"], cols["cum_step_sum"]))
    print(f"rate-check {verdict.label} early_median={verdict.early_median:.6g} "
          f"late_median={verdict.late_median:.6g} ratio={verdict.ratio:.3g}")
    return 0 if verdict.passed else 1


def cmd_armijo(cfg) -> int:
    out = _prepare_out(cfg["out"])
    params = ArmijoParams(cfg["beta"], cfg["armijo_t"], cfg["armijo_c"])
    n = cfg["iters"]
    arm_final, rm_final, violations = [], [], 0
    first = None
    for seed in range(cfg["seed"], cfg["seed"] + cfg["nseeds"]):
        rep = simulate_armijo(params, cfg["epsilon"], n, seed)
        rm = simulate_rm_1d(cfg["theta"], cfg["s"], n, seed)
        violations += rep.violations
        arm_final.append(abs(rep.final_u))
        rm_final.append(abs(rm[-1]))
        if first is None:
            first = (rep.iterates, rm)
    with open(out / "armijo.csv", "w", newline="\n") as fh:
        fh.write("iter,u_armijo,u_rm\n")
        for i, (a, r) in enumerate(zip(*first), 1):
            fh.write(f"{i},{fmt(a)},{fmt(r)}\n")
    med_a, med_r = float(np.median(arm_final)), float(np.median(rm_final))
    print(f"armijo-demo alpha={rep.alpha:g} epsilon={cfg['epsilon']:g} violations={violations} "
          f"median_final_abs_u_armijo={med_a:.4g} median_final_abs_u_rm={med_r:.4g}")
    return 0 if violations == 0 else 1


def cmd_deterministic(cfg) -> int:
    out = _prepare_out(cfg["out"])
    lam = cfg["lambdas"][0]
    spec = make_problem(cfg["ndiv"], lam)
    sched = StepSchedule(_theta(cfg, lam), cfg["s"])
    det = SaaSet([zero_sample(spec.kl)])
    traj = run_deterministic(RunConfig(spec, sched, cfg["iters"], det, seed=cfg["seed"]))
    d = out / f"deterministic_lambda_{lam:g}"
    d.mkdir(exist_ok=True)
    write_trajectory_csv(traj, d / "trajectory.csv")
    state = spec.model.solve_state(traj.final_control, traj.last_sample).y
    write_fields_csv(spec.mesh, traj.final_control, state, d / "fields.csv")
    last = traj.records[-1]
    if traj.terminated_early:
        print(f"deterministic lambda={lam:g} terminated at iteration {last.n} "
              f"with min_grad_norm_sq={last.min_grad_norm_sq:.3e} <= 1e-08")
    else:
        print(f"deterministic lambda={lam:g} ran {last.n} iterations, "
              f"min_grad_norm_sq={last.min_grad_norm_sq:.3e} (threshold not reached)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--seed", type=int)
    common.add_argument("--ndiv", type=int)
    common.add_argument("--nsaa", type=int)
    common.add_argument("--iters", type=int)
    common.add_argument("--lambda", dest="lambda", metavar="CSV")
    common.add_argument("--theta", type=float, help="step scale (default 2/lambda)")
    common.add_argument("--s", type=float, help="step exponent (default 1.0)")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--cadence", type=int, help="full SAA gradient every k iterations")
    p = argparse.ArgumentParser(prog="stochgrad-pde", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="SGD runs over a lambda list")
    g = sub.add_parser("grad-check", parents=[common], help="adjoint gradient vs finite differences")
    g.add_argument("--fault", choices=["sign-flip"], help=argparse.SUPPRESS)
    r = sub.add_parser("rate-check", parents=[common], help="rate verdict for a trajectory CSV")
    r.add_argument("trajectory")
    a = sub.add_parser("armijo-demo", parents=[common], help="scalar Armijo counterexample")
    a.add_argument("--epsilon", type=float)
    a.add_argument("--beta", type=float)
    a.add_argument("--armijo-t", dest="armijo_t", type=float)
    a.add_argument("--armijo-c", dest="armijo_c", type=float)
    a.add_argument("--nseeds", type=int)
    sub.add_parser("deterministic", parents=[common], help="gradient descent with a = a0")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "grad-check":
            return cmd_grad_check(cfg)
        if args.command == "rate-check":
            return cmd_rate_check(cfg, args.trajectory)
        if args.command == "armijo-demo":
            return cmd_armijo(cfg)
        return cmd_deterministic(cfg)
    except (ConfigError, SolverError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
