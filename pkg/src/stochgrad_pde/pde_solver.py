"""Damped Newton solver for -div(a grad y) + y + y^5 = u with Neumann
boundary conditions, the matching linear adjoint solve, and numerical checks
of the a priori estimates for both.

The diffusion matrix is affine in the random vector xi, so it is assembled
once per expansion term and recombined per sample. The nonlinear term is
integrated with the three-point edge-midpoint rule; the Newton Jacobian uses
the same rule, so it is the exact derivative of the discrete residual.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh_fem import Mesh, P1Space, SpdSolver, mass_data, stiffness_data
from .rand_field import KlSpec, RandomSample, tight_lower_bound


class SolverError(RuntimeError):
    """A state or adjoint solve failed."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass(frozen=True)
class Nonlinearity:
    """Pointwise monotone nonlinearity N(y) with derivative N'(y)."""

    value: callable
    derivative: callable


QUINTIC = Nonlinearity(value=lambda y: y ** 5, derivative=lambda y: 5.0 * y ** 4)


@dataclass(frozen=True)
class SolverTolerances:
    newton_tol: float = 1e-10
    newton_max_iters: int = 100
    linear_tol: float = 1e-12
    shrink: float = 0.5
    min_step: float = 2.0 ** -20

    def __post_init__(self):
        if not (self.newton_tol > 0 and self.linear_tol > 0 and self.min_step > 0):
            raise ValueError("tolerances must be positive")
        if self.newton_max_iters < 1:
            raise ValueError("newton_max_iters must be >= 1")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")

    def with_newton_tol(self, tol: float) -> "SolverTolerances":
        return SolverTolerances(tol, self.newton_max_iters, self.linear_tol,
                                self.shrink, self.min_step)


@dataclass
class StateSolveReport:
    y: np.ndarray
    newton_iters: int
    final_residual: float
    converged: bool
    tolerance: float
    residual_history: list = field(default_factory=list)


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    satisfied: bool


class SemilinearModel:
    """Discrete state/adjoint operators for one mesh and one coefficient family."""

    def __init__(self, mesh: Mesh, kl: KlSpec, nonlinearity: Nonlinearity = QUINTIC):
        self.mesh = mesh
        self.kl = kl
        self.nonlinearity = nonlinearity
        self.space = P1Space(mesh)
        self.pattern = mesh.pattern
        self.mass_data = mass_data(mesh)
        self.mass = self.space.mass
        self._mass_solver = SpdSolver(self.pattern, self.mass_data)

        # Coefficient at centroids: a0 + phi_c @ (sqrt(eta) * xi)
        self._phi_c = kl.eigenfunctions(mesh.centroids) * kl.sqrt_eigenvalues
        cols = [stiffness_data(mesh, self._phi_c[:, i]) for i in range(kl.n_terms)]
        self._stiff_xi = np.column_stack(cols)
        self._stiff_base = stiffness_data(mesh, np.full(mesh.n_triangles, kl.a0))

        # Edge-midpoint quadrature: values y_q = (y_a + y_b) / 2, weight |T|/3.
        m = mesh.n_triangles
        tri = mesh.triangles
        ends = np.stack([tri, np.roll(tri, -1, axis=1)], axis=-1)  # (m, 3, 2)
        q_rows = np.repeat(np.arange(3 * m), 2)
        self._quad = sp.csr_matrix(
            (np.full(6 * m, 0.5), (q_rows, ends.reshape(-1))), shape=(3 * m, mesh.n_nodes))
        self._weights = np.repeat(mesh.areas / 3.0, 3)
        self._quad_load = (self._quad.T @ sp.diags(self._weights)).tocsr()
        # phi values at the three midpoints: edge e touches local nodes e and e+1
        phi = np.zeros((3, 3))
        for e in range(3):
            phi[e, e] = phi[e, (e + 1) % 3] = 0.5
        outer = np.einsum("qa,qb->qab", phi, phi)  # (3, 3, 3)
        slots = self.pattern.slot  # (m, 3, 3)
        b_rows = np.broadcast_to(slots[:, None, :, :], (m, 3, 3, 3)).ravel()
        b_cols = np.broadcast_to((3 * np.arange(m))[:, None, None, None]
                                 + np.arange(3)[None, :, None, None], (m, 3, 3, 3)).ravel()
        b_vals = (self._weights.reshape(m, 3)[:, :, None, None] * outer[None]).ravel()
        self._weighted_mass = sp.csr_matrix(
            (b_vals, (b_rows, b_cols)), shape=(self.pattern.nnz, 3 * m))
        self.bound = tight_lower_bound(kl)

    # --- assembly -------------------------------------------------------
    def coefficient_at_centroids(self, sample: RandomSample) -> np.ndarray:
        return self.kl.a0 + self._phi_c @ sample.xi

    def stiffness_data(self, sample: RandomSample) -> np.ndarray:
        if len(sample) != self.kl.n_terms:
            raise ValueError("sample length does not match the expansion")
        a = self.coefficient_at_centroids(sample)
        if np.any(a <= 0):
            raise ValueError("coefficient is not positive at every quadrature point")
        return self._stiff_base + self._stiff_xi @ sample.xi

    def stiffness(self, sample: RandomSample) -> sp.csr_matrix:
        return self.pattern.csr(self.stiffness_data(sample))

    def weighted_mass_data(self, values_at_quad: np.ndarray) -> np.ndarray:
        """Data of int f phi_a phi_b, with f given at the quadrature points."""
        return self._weighted_mass @ values_at_quad

    def nonlinear_load(self, y: np.ndarray) -> np.ndarray:
        return self._quad_load @ self.nonlinearity.value(self._quad @ y)

    def jacobian_data(self, y: np.ndarray, stiff: np.ndarray) -> np.ndarray:
        dn = self.nonlinearity.derivative(self._quad @ y)
        return stiff + self.mass_data + self.weighted_mass_data(dn)

    def jacobian(self, y: np.ndarray, sample: RandomSample) -> sp.csr_matrix:
        return self.pattern.csr(self.jacobian_data(y, self.stiffness_data(sample)))

    def residual(self, y, u, stiff) -> np.ndarray:
        K = self.pattern.csr(stiff)
        return K @ y + self.mass @ (y - u) + self.nonlinear_load(y)

    def dual_norm(self, r: np.ndarray) -> float:
        """Norm of a load vector in the discrete dual of L2 (M^{-1} weighted)."""
        return float(np.sqrt(max(r @ self._mass_solver.solve(r), 0.0)))

    def _check_vec(self, *vs):
        for v in vs:
            if np.shape(v) != (self.mesh.n_nodes,):
                raise ValueError(f"nodal vector of shape {np.shape(v)} does not match the mesh")

    # --- solves ---------------------------------------------------------
    def solve_state(self, u, sample: RandomSample, tol: SolverTolerances | None = None,
                    y0=None, raise_on_failure: bool = True) -> StateSolveReport:
        """Damped Newton with residual-monotone backtracking.

        Converged means ||R(y)||_* <= newton_tol * max(1, ||u||_L2); the scale
        keeps the test above round-off for large controls.
        """
        tol = tol or SolverTolerances()
        u = np.asarray(u, dtype=float)
        self._check_vec(u)
        stiff = self.stiffness_data(sample)
        K = self.pattern.csr(stiff)
        Mu = self.mass @ u
        target = tol.newton_tol * max(1.0, self.space.l2_norm(u))

        def res(y):
            return K @ y + self.mass @ y + self.nonlinear_load(y) - Mu

        y = np.zeros_like(u) if y0 is None else np.array(y0, dtype=float)
        self._check_vec(y)
        R = res(y)
        r = self.dual_norm(R)
        history = [r]
        it = 0
        while r > target and it < tol.newton_max_iters:
            try:
                step = SpdSolver(self.pattern, self.jacobian_data(y, stiff)).solve(-R)
            except np.linalg.LinAlgError as exc:
                report = StateSolveReport(y, it, r, False, target, history)
                raise SolverError(f"Newton linear solve broke down: {exc}", report) from exc
            alpha = 1.0
            while True:
                y_try = y + alpha * step
                R_try = res(y_try)
                r_try = self.dual_norm(R_try)
                if np.isfinite(r_try) and r_try < r:
                    break
                alpha *= tol.shrink
                if alpha < tol.min_step:
                    break
            if alpha < tol.min_step:
                break
            y, R, r = y_try, R_try, r_try
            history.append(r)
            it += 1
        report = StateSolveReport(y, it, r, bool(r <= target), target, history)
        if raise_on_failure and not report.converged:
            raise SolverError(
                f"Newton did not converge: residual {r:.3e} > {target:.3e} after {it} iterations",
                report)
        return report

    def solve_adjoint(self, y, sample: RandomSample, y_target,
                      tol: SolverTolerances | None = None) -> np.ndarray:
        """Solve (A(a) + M + W(N'(y))) p = -M (y - y_target)."""
        tol = tol or SolverTolerances()
        y = np.asarray(y, dtype=float)
        self._check_vec(y, y_target)
        data = self.jacobian_data(y, self.stiffness_data(sample))
        rhs = -(self.mass @ (y - y_target))
        try:
            solver = SpdSolver(self.pattern, data)
        except np.linalg.LinAlgError as exc:
            raise SolverError("adjoint matrix is not positive definite") from exc
        p = solver.solve(rhs)
        # one step of iterative refinement if the direct solve misses linear_tol
        J = self.pattern.csr(data)
        scale = max(np.linalg.norm(rhs), 1e-300)
        res = rhs - J @ p
        if np.linalg.norm(res) > tol.linear_tol * scale:
            p = p + solver.solve(res)
            res = rhs - J @ p
            if np.linalg.norm(res) > tol.linear_tol * scale:
                raise SolverError("adjoint solve did not reach the linear tolerance")
        return p

    # --- a priori estimate diagnostics ------------------------------------
    @property
    def coercivity(self) -> float:
        """Lower bound for <A y, y> / ||y||_H1^2, namely min(C_tight, 1)."""
        return min(self.bound.c_tight, 1.0)

    def check_energy_bound(self, y, u, slack: float = 1.05) -> BoundCheck:
        lhs = self.coercivity * self.space.h1_norm(y)
        rhs = self.space.l2_norm(u)
        return BoundCheck(lhs, rhs, lhs <= rhs * slack)

    def check_state_lipschitz(self, u1, u2, sample: RandomSample,
                              tol: SolverTolerances | None = None,
                              slack: float = 1.05) -> BoundCheck:
        y1 = self.solve_state(u1, sample, tol).y
        y2 = self.solve_state(u2, sample, tol).y
        lhs = self.space.h1_norm(y1 - y2)
        rhs = self.space.l2_norm(np.asarray(u1) - np.asarray(u2)) / self.coercivity
        return BoundCheck(lhs, rhs, lhs <= rhs * slack)

    def linf_ratio(self, y, u) -> float:
        """Empirical c_inf proxy ||y||_inf / ||u||_L2."""
        nu = self.space.l2_norm(u)
        return self.space.linf_norm(y) / nu if nu > 0 else 0.0

    def adjoint_lipschitz_ratio(self, u1, u2, sample: RandomSample, y_target,
                                tol: SolverTolerances | None = None) -> dict:
        """Measured ||p1 - p2||_H1 / ||y1 - y2||_H1 with the state sup-norm bound M."""
        y1 = self.solve_state(u1, sample, tol).y
        y2 = self.solve_state(u2, sample, tol).y
        p1 = self.solve_adjoint(y1, sample, y_target, tol)
        p2 = self.solve_adjoint(y2, sample, y_target, tol)
        dy = self.space.h1_norm(y1 - y2)
        return {
            "ratio": self.space.h1_norm(p1 - p2) / dy if dy > 0 else 0.0,
            "linf_bound": max(self.space.linf_norm(y1), self.space.linf_norm(y2)),
        }
