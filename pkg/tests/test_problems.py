import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from blendopt.problems import (
    CallableLocal,
    CostEnsemble,
    ProblemError,
    QuadraticLocal,
    heavy_ball_equilibrium,
    is_indefinite,
    minimizer,
    quadratic_ensemble,
    random_quadratic_ensemble,
)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_quadratic_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((4, 4))
    f = QuadraticLocal(A, rng.standard_normal(4))
    w = rng.standard_normal(4)
    eps = 1e-6
    fd = np.array([(f.value(w + eps * e) - f.value(w - eps * e)) / (2 * eps) for e in np.eye(4)])
    np.testing.assert_allclose(f.grad(w), fd, atol=1e-6)


def test_quadratic_is_symmetrized_and_read_only():
    f = QuadraticLocal([[1.0, 2.0], [0.0, 1.0]], [0.0, 0.0])
    np.testing.assert_array_equal(f.A, [[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ValueError):
        f.A[0, 0] = 5.0


@pytest.mark.parametrize("cond", [1.0, 10.0, 100.0])
def test_random_ensemble_hits_targets(cond):
    ens = random_quadratic_ensemble(12, 6, 1.0, cond, seed=4)
    lam = np.linalg.eigvalsh(sum(f.A for f in ens.locals) / 12)
    assert lam[-1] == pytest.approx(1.0, abs=1e-12)
    assert lam[-1] / lam[0] == pytest.approx(cond, rel=1e-10)
    assert ens.alpha == pytest.approx(2.0 / cond, rel=1e-10)


def test_random_ensemble_has_indefinite_member_and_pd_sum(desk_problem):
    _, ens = desk_problem
    assert any(is_indefinite(f) for f in ens.locals)
    assert np.linalg.eigvalsh(ens.hessian_sum())[0] > 0


def test_random_ensemble_is_deterministic():
    a = random_quadratic_ensemble(6, 3, 1.0, 10.0, seed=9)
    b = random_quadratic_ensemble(6, 3, 1.0, 10.0, seed=9)
    assert all(x == y for x, y in zip(a.locals, b.locals))


def test_minimizer_residual_and_agrees_with_bfgs(desk_problem):
    _, ens = desk_problem
    w = minimizer(ens)
    assert np.linalg.norm(ens.grad(w)) < 1e-10
    ref = minimize(ens.value, np.zeros(ens.dim), jac=ens.grad, method="BFGS", options={"gtol": 1e-11})
    np.testing.assert_allclose(w, ref.x, atol=1e-5 * max(1.0, np.abs(w).max()))


def test_minimizer_rejects_non_pd_sum():
    ens = quadratic_ensemble([np.diag([1.0, -1.0]), np.diag([1.0, 0.5])], [np.zeros(2), np.zeros(2)])
    with pytest.raises(ProblemError, match="not positive definite"):
        minimizer(ens)


def test_lipschitz_and_alpha_two_agent_oracle():
    # 2A_1 = diag(2, -1), 2A_2 = diag(4, 3): L = 4, alpha = min eig of mean = 1
    ens = quadratic_ensemble([np.diag([1.0, -0.5]), np.diag([2.0, 1.5])], [np.ones(2), -np.ones(2)])
    assert ens.lipschitz_L == 4.0
    assert ens.alpha == pytest.approx(1.0)


def test_heavy_ball_equilibrium_formula(small_problem):
    _, ens = small_problem
    w, Z = heavy_ball_equilibrium(ens)
    G = np.stack([f.grad(w) for f in ens.locals])
    np.testing.assert_allclose(Z, -G / (2 * np.sqrt(ens.alpha)), atol=1e-14)
    np.testing.assert_allclose(Z.sum(axis=0), 0.0, atol=1e-10)


def test_text_round_trip_is_exact(tmp_path, desk_problem):
    _, ens = desk_problem
    ens.save(tmp_path / "e.txt")
    back = CostEnsemble.load(tmp_path / "e.txt")
    assert all(a == b for a, b in zip(ens.locals, back.locals))


def test_text_size_mismatch():
    with pytest.raises(ProblemError, match="expected"):
        CostEnsemble.from_text("2 2\n1 2 3\n")


def test_local_grads_rows(small_problem, rng):
    _, ens = small_problem
    W = rng.standard_normal((ens.n_agents, ens.dim))
    expect = np.stack([f.grad(w) for f, w in zip(ens.locals, W)])
    np.testing.assert_allclose(ens.local_grads(W), expect, atol=1e-14)


def _softplus_local(c, s):
    # f(w) = sum log(1 + exp(s (w - c))) + 0.5 |w|^2, strongly convex
    def fun(w):
        return float(np.sum(np.logaddexp(0, s * (w - c))) + 0.5 * w @ w)

    def grad(w):
        return s / (1 + np.exp(-s * (w - c))) + w

    return CallableLocal(fun, grad, c.size)


def test_plugin_ensemble_newton_and_fd_hessian():
    rng = np.random.default_rng(0)
    centers = rng.standard_normal((4, 3))
    locs = [_softplus_local(c, 2.0) for c in centers]
    ens = CostEnsemble(locs, lipschitz_L=3.0, alpha=1.0)
    w = minimizer(ens)
    assert np.linalg.norm(ens.grad(w)) < 1e-10
    f = locs[0]
    sig = 1 / (1 + np.exp(-2.0 * (w - centers[0])))
    np.testing.assert_allclose(f.hessian(w), np.diag(4.0 * sig * (1 - sig) + 1.0), atol=1e-6)


def test_plugin_ensemble_needs_constants():
    with pytest.raises(ProblemError):
        CostEnsemble([_softplus_local(np.zeros(2), 1.0)])


def test_without_and_with_local_recompute_constants(desk_problem):
    _, ens = desk_problem
    less = ens.without(0)
    assert less.n_agents == 11
    assert less.alpha == pytest.approx(np.linalg.eigvalsh(less.hessian_sum() / 11)[0])
    back = less.with_local(ens.locals[0], 0)
    assert all(a == b for a, b in zip(back.locals, ens.locals))
