import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blendopt.graph import Graph, complete_graph, laplacian_spectrum, path_graph
from blendopt.network import (
    Algorithm,
    CouplingConfig,
    Join,
    Leave,
    Mode,
    NetworkError,
    NetworkSystem,
    assemble,
    join_leave,
    message_dimension,
    output_matrix,
)
from blendopt.problems import QuadraticLocal, heavy_ball_equilibrium, minimizer, quadratic_ensemble

DIST = ["DistGD", "DistHBState", "DistHBOutput"]


@pytest.mark.parametrize("n", [1, 3, 6])
def test_message_dimensions(n):
    assert message_dimension("DistGD", "A", n) == 2 * n
    assert message_dimension("DistGD", "B", n) == n
    assert message_dimension("DistHBOutput", "A", n) == 2 * n
    assert message_dimension("DistHBOutput", "B", n) == n
    assert message_dimension("DistHBState", "A", n) == 4 * n
    assert message_dimension("DistHBState", "B", n) == 2 * n
    with pytest.raises(NetworkError):
        message_dimension("CentralHB", "A", n)


def test_output_matrices():
    np.testing.assert_array_equal(output_matrix(Algorithm.DistHBOutput, 2), [[1, 0, 0, 0], [0, 1, 0, 0]])
    assert output_matrix(Algorithm.DistHBState, 2).shape == (4, 4)


def test_kappa_defaults_to_k_I():
    c = CouplingConfig(k_I=0.3)
    assert c.kappa == 0.3
    assert c.stabilizable


@pytest.mark.parametrize("mode", ["A", "B"])
@pytest.mark.parametrize("alg", DIST + ["CentralGD", "CentralHB"])
def test_affine_form_matches_field_and_fd_jacobian(alg, mode, small_problem, rng):
    g, ens = small_problem
    s = NetworkSystem(alg, g, ens, CouplingConfig(Mode(mode), 1.1, 0.6))
    M, c = s.affine_form()
    x = rng.standard_normal(s.state_dim)
    np.testing.assert_allclose(M @ x + c, s.vector_field(x), atol=1e-12)
    np.testing.assert_allclose(s.jacobian(x), M, atol=1e-7)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(DIST), st.sampled_from(["A", "B"]))
def test_xi_average_is_conserved(seed, alg, mode):
    from blendopt.graph import erdos_renyi
    from blendopt.problems import random_quadratic_ensemble

    g = erdos_renyi(6, 0.5, seed)
    ens = random_quadratic_ensemble(6, 2, 1.0, 5.0, seed)
    s = NetworkSystem(alg, g, ens, CouplingConfig(Mode(mode), 2.0, 1.0))
    state = np.random.default_rng(seed).standard_normal(s.state_dim) * 10
    _, dXi = s.split(s.vector_field(state))
    np.testing.assert_allclose(dXi.sum(axis=0), 0.0, atol=1e-12)


@pytest.mark.parametrize("lam_idx", [1, 2])
def test_gd_characteristic_roots_on_homogeneous_problem(lam_idx):
    # identical f_i = h/2 w^2: modes decouple into s^2 + (h + k_P lam) s + k_I kappa lam^2
    h, k_P, k_I, kappa = 0.8, 1.5, 0.4, 0.7
    g = path_graph(4)
    ens = quadratic_ensemble([[[h / 2]]] * 4, [[0.0]] * 4)
    s = NetworkSystem("DistGD", g, ens, CouplingConfig(Mode.A, k_P, k_I, kappa))
    lam = laplacian_spectrum(g)[1:]
    roots = np.concatenate([np.roots([1, h + k_P * l, k_I * kappa * l**2]) for l in lam] + [[-h]])
    assert s.spectral_abscissa() == pytest.approx(np.max(roots.real), abs=1e-10)


@pytest.mark.parametrize("mode", ["A", "B"])
@pytest.mark.parametrize("alg", DIST + ["CentralGD", "CentralHB"])
def test_equilibrium_is_stationary(alg, mode, desk_problem):
    g, ens = desk_problem
    s = NetworkSystem(alg, g, ens, CouplingConfig(Mode(mode), 8.0, 4.0))
    eq = s.equilibrium()
    assert np.linalg.norm(s.vector_field(eq)) < 1e-9
    np.testing.assert_allclose(s.agent_outputs(eq), np.tile(minimizer(ens), (s.n_agents, 1)), atol=1e-9)


def test_output_hb_equilibrium_holds_local_gradients(desk_problem):
    g, ens = desk_problem
    s = NetworkSystem("DistHBOutput", g, ens)
    X, _ = s.split(s.equilibrium())
    _, Zs = heavy_ball_equilibrium(ens)
    np.testing.assert_allclose(X[:, 6:], Zs, atol=1e-10)


def test_affine_equilibrium_agrees_at_zero_xi_bar(small_problem):
    g, ens = small_problem
    s = NetworkSystem("DistHBOutput", g, ens, CouplingConfig(Mode.B, 2.0, 1.0))
    np.testing.assert_allclose(s.affine_equilibrium(np.zeros(s.q)), s.equilibrium(), atol=1e-8)


def test_mode_b_shifted_equilibrium_is_biased(small_problem):
    g, ens = small_problem
    s = NetworkSystem("DistGD", g, ens, CouplingConfig(Mode.B, 2.0, 1.0))
    eq = s.affine_equilibrium(np.full(s.q, 0.5))
    assert np.linalg.norm(s.vector_field(eq)) < 1e-9
    # with a common output the shift is w* - k_I xi_bar solved against the averaged Hessian
    w = s.agent_outputs(eq)
    np.testing.assert_allclose(w, np.tile(w[0], (5, 1)), atol=1e-9)
    H = ens.hessian_sum() / ens.n_agents
    np.testing.assert_allclose(w[0], minimizer(ens) - np.linalg.solve(H, 1.0 * np.full(s.q, 0.5)), atol=1e-9)


def test_mode_b_requires_zero_sum_xi(small_problem):
    g, ens = small_problem
    c = CouplingConfig(Mode.B)
    with pytest.raises(NetworkError, match="sum xi_i"):
        assemble("DistGD", g, ens, c, xi0=np.ones((5, 3)))
    assemble("DistGD", g, ens, c, xi0=np.zeros((5, 3)))


def test_graph_size_mismatch(small_problem):
    _, ens = small_problem
    with pytest.raises(NetworkError, match="nodes"):
        NetworkSystem("DistGD", complete_graph(3), ens)


def test_single_agent_matches_centralized(rng):
    ens = quadratic_ensemble([np.diag([1.0, 0.2])], [np.array([1.0, -1.0])])
    g = Graph(1, frozenset())
    for d, c in (("DistGD", "CentralGD"), ("DistHBState", "CentralHB"), ("DistHBOutput", "CentralHB")):
        sd, sc = NetworkSystem(d, g, ens), NetworkSystem(c, None, ens)
        x = rng.standard_normal(sc.state_dim)
        np.testing.assert_allclose(sd.vector_field(sd.join(x[None]))[: sc.state_dim], sc.vector_field(x), atol=1e-15)


def test_leave_keeps_survivor_state(small_problem, rng):
    g, ens = small_problem
    s = NetworkSystem("DistHBState", g, ens)
    state = rng.standard_normal(s.state_dim)
    k = 0  # not a cut vertex of this graph
    new, st2 = join_leave(s, Leave(k), state)
    X, Xi = s.split(state)
    X2, Xi2 = new.split(st2)
    np.testing.assert_array_equal(X2, np.delete(X, k, axis=0))
    np.testing.assert_array_equal(Xi2, np.delete(Xi, k, axis=0))
    assert new.ensemble.n_agents == 4


def test_join_inserts_agent(small_problem, rng):
    g, ens = small_problem
    s = NetworkSystem("DistGD", g, ens)
    state = rng.standard_normal(s.state_dim)
    f = QuadraticLocal(np.eye(3), np.ones(3))
    new, st2 = join_leave(s, Join(f, (0, 4), position=2, x0=np.full(3, 7.0)), state)
    X2, Xi2 = new.split(st2)
    np.testing.assert_array_equal(X2[2], 7.0)
    np.testing.assert_array_equal(Xi2[2], 0.0)
    assert new.graph.neighbors(2) == [0, 5]


def test_leave_that_disconnects_fails():
    ens = quadratic_ensemble([np.eye(1)] * 3, [np.zeros(1)] * 3)
    s = NetworkSystem("DistGD", path_graph(3), ens)
    with pytest.raises(NetworkError, match="invalid"):
        join_leave(s, Leave(1), np.zeros(s.state_dim))


def test_mode_b_churn_warns(small_problem):
    g, ens = small_problem
    s = NetworkSystem("DistGD", g, ens, CouplingConfig(Mode.B))
    with pytest.warns(UserWarning, match="mode B"):
        join_leave(s, Join(ens.locals[0], (0,)), np.zeros(s.state_dim))


def test_heavy_ball_needs_positive_alpha():
    ens = quadratic_ensemble([np.eye(2)], [np.zeros(2)])
    with pytest.raises(NetworkError, match="alpha"):
        NetworkSystem("CentralHB", None, ens, damping_alpha=0.0)


def test_raising_kp_with_fixed_ki_slows_the_integral_mode(desk_problem):
    # the slow PI root scales like k_I kappa lam^2 / (h + k_P lam), so the
    # asymptotic rate falls once k_P dominates the local curvature
    g, ens = desk_problem
    rates = [-NetworkSystem("DistHBOutput", g, ens, CouplingConfig(Mode.A, kp, 0.5)).spectral_abscissa()
             for kp in (1.0, 4.0, 16.0, 64.0)]
    assert all(r > 0 for r in rates)
    assert np.all(np.diff(rates) < 0)
