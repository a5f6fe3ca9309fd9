"""Truncated Karhunen-Loeve diffusion coefficient on the unit square.

The field is

    a(x, xi) = a0 + sum_i sqrt(eta_i) * phi_i(x) * xi_i,

with separable cosine eigenfunctions phi_{j,k}(x) = 2 cos(j pi x2) cos(k pi x1)
and eigenvalues eta_{j,k} = exp(-pi (j^2 + k^2) l^2) / 4, reordered by
descending eigenvalue.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EllipticityError(ValueError):
    """The coefficient cannot be bounded away from zero."""


@dataclass(frozen=True)
class KlSpec:
    a0: float
    n_terms: int
    correlation_length: float
    eigenvalues: np.ndarray
    index_pairs: tuple[tuple[int, int], ...]

    @property
    def sqrt_eigenvalues(self) -> np.ndarray:
        return np.sqrt(self.eigenvalues)

    @property
    def eigenpairs(self) -> list[tuple[float, tuple[int, int]]]:
        return list(zip(self.eigenvalues.tolist(), self.index_pairs))

    def eigenfunctions(self, points) -> np.ndarray:
        """Evaluate all retained eigenfunctions at ``points`` (shape (..., 2)).

        Returns an array of shape (..., n_terms).
        """
        pts = np.asarray(points, dtype=float)
        jk = np.asarray(self.index_pairs, dtype=float)
        x1 = pts[..., 0, None]
        x2 = pts[..., 1, None]
        return 2.0 * np.cos(jk[:, 0] * np.pi * x2) * np.cos(jk[:, 1] * np.pi * x1)


@dataclass(frozen=True)
class RandomSample:
    xi: np.ndarray
    seed_id: int = 0

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float)
        if xi.ndim != 1:
            raise ValueError("xi must be a 1-D vector")
        if np.any(np.abs(xi) > 1.0) or not np.all(np.isfinite(xi)):
            raise ValueError("every xi component must lie in [-1, 1]")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    def __len__(self):
        return self.xi.size


@dataclass(frozen=True)
class EllipticityBound:
    """Both candidate lower bounds for the coefficient.

    ``c_paper`` sums exp(-pi (j^2+k^2) l^2); ``c_tight`` sums the actual sup
    norms 2 sqrt(eta_i) of the fluctuation terms and is the one that holds.
    """

    c_paper: float
    c_tight: float

    @property
    def value(self) -> float:
        return self.c_tight


def _sorted_pairs(n_terms: int) -> list[tuple[int, int]]:
    # The n-th smallest j^2 + k^2 never needs max(j, k) > n.
    cand = [(j * j + k * k, j, k) for j in range(1, n_terms + 1) for k in range(1, n_terms + 1)]
    cand.sort()
    return [(j, k) for _, j, k in cand[:n_terms]]


def build_kl_spec(n_terms: int = 20, l: float = 0.5, a0: float = 1.0) -> KlSpec:
    """Enumerate the ``n_terms`` largest eigenpairs, ties broken by (j, k)."""
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1")
    if not l > 0:
        raise ValueError("correlation length must be positive")
    if not a0 > 0:
        raise ValueError("a0 must be positive")
    pairs = _sorted_pairs(n_terms)
    s = np.array([j * j + k * k for j, k in pairs], dtype=float)
    eta = 0.25 * np.exp(-np.pi * s * l * l)
    eta.setflags(write=False)
    if a0 - np.sum(2.0 * np.sqrt(eta)) <= 0:
        raise EllipticityError(
            f"{n_terms} terms with l={l} can drive the coefficient to zero")
    return KlSpec(a0=float(a0), n_terms=n_terms, correlation_length=float(l),
                  eigenvalues=eta, index_pairs=tuple(pairs))


def evaluate_coefficient(spec: KlSpec, sample: RandomSample, x) -> np.ndarray | float:
    """Coefficient value at one point or at an array of points."""
    pts = np.asarray(x, dtype=float)
    if pts.shape[-1] != 2:
        raise ValueError("points must have trailing dimension 2")
    if np.any(pts < 0.0) or np.any(pts > 1.0):
        raise ValueError("points must lie in the closed unit square")
    if len(sample) != spec.n_terms:
        raise ValueError("sample length does not match the expansion")
    val = spec.a0 + spec.eigenfunctions(pts) @ (spec.sqrt_eigenvalues * sample.xi)
    return float(val) if np.ndim(val) == 0 else val


def tight_lower_bound(spec: KlSpec) -> EllipticityBound:
    s = np.array([j * j + k * k for j, k in spec.index_pairs], dtype=float)
    l2 = spec.correlation_length ** 2
    c_paper = spec.a0 - float(np.sum(np.exp(-np.pi * s * l2)))
    c_tight = spec.a0 - float(np.sum(2.0 * np.sqrt(spec.eigenvalues)))
    if c_tight <= 0:
        raise EllipticityError(
            f"no positive lower bound (c_paper={c_paper:.6g}, c_tight={c_tight:.6g})")
    return EllipticityBound(c_paper=c_paper, c_tight=c_tight)


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent per-purpose PCG64 streams derived from one integer seed.

    ``field`` feeds coefficient samples, ``index`` feeds sample selection.
    """
    return {
        "field": np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0]))),
        "index": np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1]))),
    }


def draw_sample(rng: np.random.Generator, spec: KlSpec, seed_id: int = 0) -> RandomSample:
    return RandomSample(rng.uniform(-1.0, 1.0, size=spec.n_terms), seed_id=seed_id)


def draw_samples(rng: np.random.Generator, spec: KlSpec, n: int) -> list[RandomSample]:
    # Row-major draw: all components of sample 1, then sample 2, ...
    xi = rng.uniform(-1.0, 1.0, size=(n, spec.n_terms))
    return [RandomSample(row, seed_id=i) for i, row in enumerate(xi)]


def zero_sample(spec: KlSpec) -> RandomSample:
    """The sample with no fluctuation, a(x) = a0."""
    return RandomSample(np.zeros(spec.n_terms), seed_id=-1)
