import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from stochgrad_pde.oracle import (SaaSet, desired_state, draw_saa_set, evaluate_sample,
                                  fd_directional, gradient_check, gradient_variance, grad_norm,
                                  make_problem, objective_sample, saa_evaluate, saa_gradient,
                                  saa_objective, stochastic_gradient)
from stochgrad_pde.pde_solver import SolverError, SolverTolerances
from stochgrad_pde.rand_field import zero_sample

TIGHT = SolverTolerances(newton_tol=1e-12)


def test_desired_state_values():
    assert desired_state((0.5, 0.5)) == pytest.approx(-20.0)
    assert desired_state((0.0, 0.0)) == 60.0
    assert desired_state((1.0, 0.0)) == 60.0


def test_target_norm_converges_to_integral():
    # int (60 + 160 g)^2 with g = x(x-1) + y(y-1) is 3600 - 6400 + 25600 * 11/90
    exact = 0.5 * (3600.0 - 6400.0 + 25600.0 * 11.0 / 90.0)
    errs = []
    for n in (5, 10, 20):
        p = make_problem(n, lam=0.0)
        errs.append(abs(objective_sample(p, np.zeros(p.mesh.n_nodes), zero_sample(p.kl)) - exact))
    assert errs[-1] / exact < 1e-2
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_constant_control_objective():
    p = make_problem(8, lam=1.0, y_target=lambda x: np.zeros(len(x)))
    u = np.ones(p.mesh.n_nodes)
    c = brentq(lambda t: t + t ** 5 - 1.0, 0, 1, xtol=1e-15)
    val = objective_sample(p, u, zero_sample(p.kl), TIGHT)
    assert val == pytest.approx(0.5 * c * c + 0.5, abs=1e-11)


def test_gradient_zero_control_zero_target():
    p = make_problem(6, lam=0.5, y_target=lambda x: np.zeros(len(x)))
    ev = evaluate_sample(p, np.zeros(p.mesh.n_nodes), zero_sample(p.kl))
    assert ev.value == 0.0
    np.testing.assert_array_equal(ev.gradient, 0.0)


def test_gradient_is_lam_u_minus_p(problem6, samples):
    u = np.random.default_rng(0).normal(size=problem6.mesh.n_nodes)
    ev = evaluate_sample(problem6, u, samples[0])
    np.testing.assert_allclose(ev.gradient, problem6.lam * u - ev.adjoint, rtol=1e-15)
    np.testing.assert_array_equal(stochastic_gradient(problem6, u, samples[0]), ev.gradient)


@pytest.mark.parametrize("k", [0, 4, 9])
def test_fd_per_sample(problem6, samples, k):
    rng = np.random.default_rng(k)
    n = problem6.mesh.n_nodes
    u = rng.normal(0, 2, size=n)
    d = rng.normal(size=n)
    g = stochastic_gradient(problem6, u, samples[k], TIGHT)
    fd = fd_directional(lambda v: objective_sample(problem6, v, samples[k], TIGHT), u, d)
    assert abs(problem6.space.l2_inner(g, d) - fd) <= 1e-6 * max(1.0, abs(fd))


def test_fd_saa_average(problem6, samples):
    saa = SaaSet(samples[:8])
    rng = np.random.default_rng(44)
    n = problem6.mesh.n_nodes
    u, d = rng.normal(0, 2, size=n), rng.normal(size=n)
    g = saa_gradient(problem6, u, saa, TIGHT)
    fd = fd_directional(lambda v: saa_objective(problem6, v, saa, TIGHT), u, d)
    assert abs(problem6.space.l2_inner(g, d) - fd) <= 1e-6 * max(1.0, abs(fd))


def test_saa_is_mean_of_samples(problem6, samples):
    saa = SaaSet(samples[:5])
    u = np.random.default_rng(2).normal(size=problem6.mesh.n_nodes)
    ev = saa_evaluate(problem6, u, saa)
    per = [evaluate_sample(problem6, u, s) for s in saa]
    assert ev.value == pytest.approx(np.mean([e.value for e in per]), rel=1e-14)
    np.testing.assert_allclose(ev.gradient, np.mean([e.gradient for e in per], axis=0), rtol=1e-12,
                               atol=1e-14)
    assert len(ev.states) == 5


def test_saa_concatenation_linear(problem6, samples):
    a, b = SaaSet(samples[:3]), SaaSet(samples[3:10])
    u = np.random.default_rng(3).normal(size=problem6.mesh.n_nodes)
    ja, jb, jab = (saa_objective(problem6, u, s) for s in (a, b, a + b))
    assert jab == pytest.approx((3 * ja + 7 * jb) / 10, rel=1e-13)


def test_warm_cache_filled(problem6, samples):
    saa = SaaSet(samples[:4])
    warm = {}
    u = np.ones(problem6.mesh.n_nodes)
    cold = saa_evaluate(problem6, u, saa, warm=warm)
    assert sorted(warm) == [0, 1, 2, 3]
    again = saa_evaluate(problem6, u, saa, warm=warm)
    np.testing.assert_allclose(again.gradient, cold.gradient, atol=1e-9)


def test_grad_norm(problem6):
    n = problem6.mesh.n_nodes
    assert grad_norm(problem6, np.zeros(n)) == 0.0
    assert grad_norm(problem6, np.ones(n)) == pytest.approx(1.0, abs=1e-14)
    assert grad_norm(problem6, np.full(n, -3.0)) == pytest.approx(3.0, abs=1e-13)


def test_gradient_check_passes(problem6):
    res = gradient_check(problem6, np.random.default_rng(1), n_controls=2, n_samples=2, n_dirs=3)
    assert len(res.records) == 12
    assert res.passed
    assert res.worst < 1e-6


def test_gradient_check_lambda_zero(problem6):
    res = gradient_check(problem6.with_lambda(0.0), np.random.default_rng(2),
                         n_controls=2, n_samples=2, n_dirs=2)
    assert res.passed


def test_gradient_check_detects_sign_flip(problem6):
    res = gradient_check(problem6, np.random.default_rng(1), n_controls=1, n_samples=1, n_dirs=3,
                         fault="sign-flip")
    assert not res.passed
    with pytest.raises(ValueError):
        gradient_check(problem6, np.random.default_rng(1), 1, 1, 1, fault="bogus")


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_gradient_matches_fd_property(seed):
    p = _p5()
    rng = np.random.default_rng(seed)
    res = gradient_check(p, rng, n_controls=1, n_samples=1, n_dirs=1)
    assert res.passed


_P = {}


def _p5():
    if "p" not in _P:
        _P["p"] = make_problem(5, 0.3)
    return _P["p"]


def test_variance_diagnostic(problem6, kl):
    saa = draw_saa_set(np.random.default_rng(5), kl, 10)
    n = problem6.mesh.n_nodes
    d = np.ones(n)
    out = gradient_variance(problem6, np.zeros(n), saa, d)
    assert out["variance"] > 0
    one = gradient_variance(problem6, np.zeros(n), SaaSet(saa.samples[:1]), d)
    assert one["variance"] == 0.0


def test_failure_reports_sample_index(problem6, samples):
    saa = SaaSet(samples[:3])
    tol = SolverTolerances(newton_max_iters=1)
    with pytest.raises(SolverError, match="sample 0"):
        saa_evaluate(problem6, np.full(problem6.mesh.n_nodes, 50.0), saa, tol)


def test_problem_validation(problem6):
    with pytest.raises(ValueError):
        make_problem(4, lam=-1.0)
    with pytest.raises(ValueError):
        make_problem(4, y_target=np.zeros(3))
    with pytest.raises(ValueError):
        SaaSet(())
    other = problem6.with_lambda(1.0)
    assert other.model is problem6.model and other.lam == 1.0
