"""Scalar counterexample: Armijo backtracking driven by single-sample
gradients of J(u, xi) = (u + xi)^2 with xi = +-1 keeps jumping out of every
small ball around the minimizer u = 0 of E[J], while Robbins-Monro steps
converge."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ArmijoParams:
    beta: float = 1.0
    t: float = 0.5
    c: float = 0.5

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not 0 < self.t < 1:
            raise ValueError("t must lie in (0, 1)")
        if not 0 < self.c < 1:
            raise ValueError("c must lie in (0, 1)")


def objective(u, xi):
    return (u + xi) ** 2


def gradient(u, xi):
    return 2.0 * (u + xi)


def armijo_alpha(params: ArmijoParams) -> float:
    """Closed form: beta * t^m for the smallest m >= 0 with beta t^m <= 1 - c."""
    alpha = params.beta
    while alpha > 1.0 - params.c:
        alpha *= params.t
    return alpha


def armijo_search(u: float, xi: float, params: ArmijoParams, max_m: int = 10_000) -> float:
    """Backtracking by literally testing the sufficient-decrease condition."""
    g = gradient(u, xi)
    p = -g
    f0 = objective(u, xi)
    alpha = params.beta
    for _ in range(max_m):
        if objective(u + alpha * p, xi) <= f0 + params.c * alpha * g * p:
            return alpha
        alpha *= params.t
    raise RuntimeError("no admissible step found")


def armijo_step(u: float, xi: float, params: ArmijoParams) -> tuple[float, float]:
    alpha = armijo_alpha(params)
    return alpha, u - alpha * gradient(u, xi)


def escape_radius(alpha: float) -> float:
    """Largest eps for which |u| < eps forces |u - 2 alpha (u + xi)| > eps.

    alpha/(1-alpha) when alpha <= 1/2; for larger steps the contraction
    factor 1 - 2 alpha changes sign and the radius saturates at 1.
    """
    return min(alpha / (1.0 - alpha), 1.0)


def _coins(rng: np.random.Generator, n: int) -> np.ndarray:
    # unbiased +-1 from a bit stream
    return np.where(rng.integers(0, 2, size=n) == 1, 1.0, -1.0)


@dataclass
class EscapeReport:
    alpha: float
    epsilon: float
    n_iters: int
    entries: int
    violations: int
    inside_fraction: float
    final_u: float
    iterates: np.ndarray


def simulate_armijo(params: ArmijoParams, epsilon: float, n_iters: int, seed: int,
                    u1: float = 0.0, forced_xi: float | None = None) -> EscapeReport:
    """Run the Armijo iteration and check: |u_n| < eps  =>  |u_{n+1}| > eps."""
    alpha = armijo_alpha(params)
    bound = escape_radius(alpha)
    if not 0 < epsilon < bound:
        raise ValueError(f"need 0 < epsilon < {bound:.6g} for alpha = {alpha:.6g}")
    if forced_xi is None:
        xis = _coins(np.random.default_rng(seed), n_iters)
    else:
        xis = np.full(n_iters, float(forced_xi))
    u = np.empty(n_iters + 1)
    u[0] = u1
    for n in range(n_iters):
        u[n + 1] = armijo_step(u[n], xis[n], params)[1]
    inside = np.abs(u[:-1]) < epsilon
    violations = int(np.count_nonzero(inside & ~(np.abs(u[1:]) > epsilon)))
    return EscapeReport(alpha, epsilon, n_iters, int(inside.sum()), violations,
                        float(np.mean(np.abs(u) < epsilon)), float(u[-1]), u)


def simulate_rm_1d(theta: float, s: float, n_iters: int, seed: int, u1: float = 1.0,
                   noise: bool = True) -> np.ndarray:
    """u_{n+1} = u_n - (theta / n^s) * 2 (u_n + xi_n); returns u_1..u_{n_iters+1}."""
    if not 0.5 < s <= 1.0 or not theta > 0:
        raise ValueError("step schedule violates the Robbins-Monro conditions")
    xis = _coins(np.random.default_rng(seed), n_iters) if noise else np.zeros(n_iters)
    u = np.empty(n_iters + 1)
    u[0] = u1
    for n in range(1, n_iters + 1):
        u[n] = u[n - 1] - theta / n ** s * gradient(u[n - 1], xis[n - 1])
    return u
