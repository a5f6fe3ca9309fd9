import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochgrad_pde.mesh_fem import (P1Space, assemble_mass, assemble_stiffness, build_mesh,
                                    interpolate)
from stochgrad_pde.oracle import desired_state


def test_paper_mesh_size():
    m = build_mesh(25)
    assert m.n_triangles == 1250
    assert m.n_nodes == 676


def test_minimal_mesh():
    m = build_mesh(1)
    assert (m.n_triangles, m.n_nodes) == (2, 4)
    np.testing.assert_array_equal(m.triangles, [[0, 1, 3], [0, 3, 2]])


def test_invalid_ndiv():
    with pytest.raises(ValueError):
        build_mesh(0)


@pytest.mark.parametrize("n", [1, 3, 7, 25])
def test_areas_and_orientation(n):
    m = build_mesh(n)
    np.testing.assert_allclose(m.signed_areas, 1.0 / (2 * n * n), rtol=1e-12)
    assert m.areas.sum() == pytest.approx(1.0, abs=1e-13)


def test_node_order_row_major():
    m = build_mesh(3)
    np.testing.assert_allclose(m.nodes[1], [1 / 3, 0.0])
    np.testing.assert_allclose(m.nodes[4], [0.0, 1 / 3])


@pytest.mark.parametrize("n", [2, 5])
def test_conforming(n):
    """Every interior edge is shared by exactly two triangles, boundary edges by one."""
    m = build_mesh(n)
    edges = {}
    for tri in m.triangles:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            e = tuple(sorted((tri[a], tri[b])))
            edges[e] = edges.get(e, 0) + 1
    counts = np.array(list(edges.values()))
    assert set(counts) <= {1, 2}
    assert np.sum(counts == 1) == 4 * n
    assert m.boundary.sum() == 4 * n


def test_mass_properties():
    m = build_mesh(8)
    M = assemble_mass(m)
    one = np.ones(m.n_nodes)
    assert one @ M @ one == pytest.approx(1.0, abs=1e-14)
    assert abs(M - M.T).max() == 0.0
    # row sums reproduce int phi_a (lumped areas): corner nodes touch 1 or 2 triangles
    lumped = np.bincount(m.triangles.ravel(), np.repeat(m.areas / 3, 3), m.n_nodes)
    np.testing.assert_allclose(M @ (3.0 * one), 3.0 * lumped, rtol=1e-13)
    assert np.linalg.eigvalsh(M.toarray()).min() > 0


def test_mass_l2_of_x1_converges():
    errs = []
    for n in (4, 8, 16):
        m = build_mesh(n)
        x1 = m.nodes[:, 0]
        errs.append(abs(x1 @ assemble_mass(m) @ x1 - 1 / 3))
    # x1 is exactly represented by P1, and the P1 mass matrix is exact
    assert max(errs) < 1e-13


def test_stiffness_constants_in_kernel():
    m = build_mesh(6)
    A = assemble_stiffness(m, 1.0)
    np.testing.assert_allclose(A @ np.ones(m.n_nodes), 0.0, atol=1e-13)
    assert abs(A - A.T).max() == 0.0
    assert np.linalg.eigvalsh(A.toarray()).min() > -1e-12


@pytest.mark.parametrize("n", [1, 4, 9])
def test_stiffness_energy_of_x1(n):
    m = build_mesh(n)
    x1 = m.nodes[:, 0]
    assert x1 @ assemble_stiffness(m, 1.0) @ x1 == pytest.approx(1.0, rel=1e-13)


def test_stiffness_linear_in_coefficient():
    m = build_mesh(5)
    A1 = assemble_stiffness(m, 1.0)
    A2 = assemble_stiffness(m, lambda x: np.full(len(x), 2.0))
    assert abs(A2 - 2 * A1).max() == 0.0


def test_stiffness_rejects_nonpositive():
    with pytest.raises(ValueError):
        assemble_stiffness(build_mesh(2), lambda x: x[:, 0] - 0.5)


def test_interpolate_target_state():
    m = build_mesh(10)
    yd = interpolate(m, desired_state)
    center = np.flatnonzero(np.all(np.isclose(m.nodes, 0.5), axis=1))[0]
    assert yd[center] == pytest.approx(-20.0, abs=1e-12)
    sp = P1Space(m)
    assert sp.linf_norm(yd) == pytest.approx(60.0)


def test_norms_simple():
    m = build_mesh(10)
    sp = P1Space(m)
    z = np.zeros(m.n_nodes)
    assert sp.l2_norm(z) == 0.0
    assert sp.l2_norm(np.ones(m.n_nodes)) == pytest.approx(1.0, abs=1e-14)
    assert sp.h1_norm(m.nodes[:, 0]) == pytest.approx(np.sqrt(1 + 1 / 3), rel=1e-13)
    with pytest.raises(ValueError):
        sp.l2_norm(np.ones(5))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_coercivity_discrete(seed):
    """v^T (A(a) + M) v >= min(C, 1) ||v||_H1^2 whenever a >= C at the centroids."""
    m = build_mesh(5)
    rng = np.random.default_rng(seed)
    C = 0.164
    a = C + rng.uniform(0, 2, size=m.n_triangles)
    A = assemble_stiffness(m, a)
    sp = P1Space(m)
    v = rng.normal(size=m.n_nodes)
    assert v @ (A @ v) + sp.l2_inner(v, v) >= min(C, 1) * sp.h1_norm(v) ** 2 * (1 - 1e-12)
    assert sp.l2_inner(v, v) > 0


def test_interpolation_error_second_order():
    f = lambda x: np.sin(np.pi * x[:, 0]) * np.cos(2 * x[:, 1])
    errs = []
    for n in (5, 10, 20):
        # reference through a 4x refined mesh
        fine = build_mesh(4 * n)
        coarse = build_mesh(n)
        vc = interpolate(coarse, f)
        # evaluate the coarse interpolant at fine nodes (all fine nodes lie on coarse cells)
        h = 1.0 / n
        x, y = fine.nodes[:, 0], fine.nodes[:, 1]
        i = np.minimum((x / h).astype(int), n - 1)
        j = np.minimum((y / h).astype(int), n - 1)
        s, t = x / h - i, y / h - j
        n0 = j * (n + 1) + i
        lower = s >= t
        val = np.where(lower,
                       vc[n0] + s * (vc[n0 + 1] - vc[n0]) + t * (vc[n0 + n + 2] - vc[n0 + 1]),
                       vc[n0] + t * (vc[n0 + n + 1] - vc[n0]) + s * (vc[n0 + n + 2] - vc[n0 + n + 1]))
        errs.append(P1Space(fine).l2_norm(val - interpolate(fine, f)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)
