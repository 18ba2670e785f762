import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from blendopt.network import CouplingConfig, Mode, NetworkSystem
from blendopt.solver import (
    DivergenceError,
    Trajectory,
    error_metric,
    estimate_rate,
    integrate,
    rk4_affine_step,
    rk4_step,
)


def _endpoint_error(h):
    # y' = -y + sin t, y(0) = 1 has y = 1.5 e^{-t} + (sin t - cos t) / 2
    f = lambda s: np.array([-s[0] + np.sin(s[1]), 1.0])
    tr = integrate(f, np.array([1.0, 0.0]), h=h, t_end=2.0, record_every=1000)
    exact = 1.5 * np.exp(-2.0) + (np.sin(2.0) - np.cos(2.0)) / 2
    return abs(tr.final[0] - exact)


def test_rk4_is_fourth_order():
    ratio = _endpoint_error(0.1) / _endpoint_error(0.05)
    assert 16 / 4 <= ratio <= 16 * 4


def test_linear_network_matches_matrix_exponential(small_problem, rng):
    g, ens = small_problem
    s = NetworkSystem("DistHBOutput", g, ens, CouplingConfig(Mode.A, 2.0, 1.0))
    M, c = s.affine_form()
    x0 = rng.standard_normal(s.state_dim)
    tr = integrate(s.vector_field, x0, h=1e-2, t_end=5.0, record_every=50)
    # augmented exponential handles the affine term even though M is singular
    n = M.shape[0]
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n], aug[:n, n] = M, c
    for t, x in zip(tr.times, tr.states):
        exact = (expm(aug * t) @ np.append(x0, 1.0))[:n]
        np.testing.assert_allclose(x, exact, atol=1e-6)


def test_affine_propagator_equals_stagewise_rk4(rng):
    M = rng.standard_normal((6, 6)) - 3 * np.eye(6)
    c = rng.standard_normal(6)
    step = rk4_affine_step(M, c, 0.01)
    s = rng.standard_normal(6)
    np.testing.assert_allclose(step(s), rk4_step(lambda x: M @ x + c, s, 0.01), rtol=1e-13, atol=1e-14)


def test_network_fast_path_agrees_with_callable(small_problem, rng):
    g, ens = small_problem
    s = NetworkSystem("DistHBState", g, ens, CouplingConfig(Mode.A, 2.0, 1.0))
    x0 = rng.standard_normal(s.state_dim)
    a = integrate(s, x0, h=1e-3, t_end=2.0)
    b = integrate(s.vector_field, x0, h=1e-3, t_end=2.0)
    np.testing.assert_allclose(a.states, b.states, atol=1e-11)


def test_recording_grid_includes_final_step():
    tr = integrate(lambda s: -s, np.ones(1), h=0.1, t_end=1.1, record_every=4)
    assert tr.times[0] == 0.0
    assert tr.times[-1] == pytest.approx(1.1)
    np.testing.assert_allclose(np.diff(tr.times[:-1]), 0.4)


def test_divergence_reports_time():
    with pytest.raises(DivergenceError, match="t="):
        integrate(lambda s: s**2, np.ones(1), h=0.1, t_end=5.0, record_every=1)


def test_step_above_stability_estimate_warns(small_problem, caplog):
    g, ens = small_problem
    s = NetworkSystem("DistGD", g, ens, CouplingConfig(Mode.A, 50.0, 1.0))
    with caplog.at_level(logging.WARNING):
        try:
            integrate(s, np.zeros(s.state_dim), h=0.05, t_end=0.1)
        except DivergenceError:
            pass
    assert "stability estimate" in caplog.text


def test_csv_round_trip(tmp_path):
    tr = Trajectory(np.array([0.0, 0.1]), np.array([[1 / 3, np.pi], [2 / 3, -1e-300]]), 0.1)
    tr.to_csv(tmp_path / "t.csv", columns=["a", "b"])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,a,b"
    back = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(back[:, 1:], tr.states)


def test_error_metric_is_mean_agent_distance():
    tr = Trajectory(np.zeros(1), np.array([[3.0, 4.0, 0.0, 0.0]]), 1.0)
    e = error_metric(tr, np.zeros(2), lambda s: s.reshape(2, 2))
    assert e[0] == pytest.approx(2.5)


def test_rate_of_exact_exponential():
    t = np.linspace(0, 10, 201)
    r = estimate_rate(t, 3.0 * np.exp(-0.7 * t))
    assert r.rate == pytest.approx(0.7, abs=1e-12)
    assert r.trusted and r.r_squared == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(-20, 20), st.floats(0.01, 2.0))
def test_rate_is_exactly_invariant_under_power_of_two_scaling(k, rate):
    t = np.linspace(0, 20, 101)
    e = np.exp(-rate * t) * (1 + 0.1 * np.sin(t))
    assert estimate_rate(t, e, (5.0, 20.0)).rate == estimate_rate(t, e * 2.0**k, (5.0, 20.0)).rate


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-6, 1e6))
def test_rate_is_invariant_under_scaling(scale):
    t = np.linspace(0, 20, 101)
    e = np.exp(-0.3 * t) * (1 + 0.1 * np.sin(t))
    w = (5.0, 20.0)
    assert estimate_rate(t, e * scale, w).rate == pytest.approx(estimate_rate(t, e, w).rate, rel=1e-12)


def test_poor_fit_is_untrusted(rng):
    t = np.linspace(0, 10, 200)
    e = np.exp(-0.1 * t) * np.exp(rng.standard_normal(200))
    assert not estimate_rate(t, e).trusted


def test_rate_needs_samples_above_floor():
    t = np.linspace(0, 1, 10)
    with pytest.raises(ValueError, match="floor"):
        estimate_rate(t, np.full(10, 1e-12))
