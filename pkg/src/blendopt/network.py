"""Stacked ODE systems for distributed and centralized optimizers under PI coupling."""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .graph import Graph, GraphError, laplacian_spectrum, ones_complement_basis
from .problems import CostEnsemble, heavy_ball_equilibrium, minimizer
from .transforms import OutputMap, full_equilibrium, split_output_map


class NetworkError(ValueError):
    pass


class Algorithm(str, enum.Enum):
    DistGD = "DistGD"
    DistHBState = "DistHBState"
    DistHBOutput = "DistHBOutput"
    CentralGD = "CentralGD"
    CentralHB = "CentralHB"

    @property
    def distributed(self) -> bool:
        return self.name.startswith("Dist")

    @property
    def heavy_ball(self) -> bool:
        return "HB" in self.name


class Mode(str, enum.Enum):
    A = "A"   # integral states exchanged over the graph, initialization-free
    B = "B"   # local integral action, needs sum xi_i(0) = 0


@dataclass(frozen=True)
class CouplingConfig:
    mode: Mode = Mode.A
    k_P: float = 1.0
    k_I: float = 0.5
    kappa: float | None = None   # None: use k_I
    K: np.ndarray | None = field(default=None, compare=False)  # None: E W W^T E^T

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.kappa is None:
            object.__setattr__(self, "kappa", self.k_I)
        for name in ("k_P", "k_I", "kappa"):
            if getattr(self, name) < 0:
                raise NetworkError(f"{name} must be non-negative, got {getattr(self, name)}")

    @property
    def stabilizable(self) -> bool:
        """2 kappa > k_I, the regime in which some finite k_P stabilizes."""
        return 2 * self.kappa > self.k_I


def output_matrix(algorithm: Algorithm, n: int) -> np.ndarray:
    algorithm = Algorithm(algorithm)
    if algorithm in (Algorithm.DistGD, Algorithm.CentralGD):
        return np.eye(n)
    if algorithm in (Algorithm.DistHBState, Algorithm.CentralHB):
        return np.eye(2 * n)
    return np.hstack([np.eye(n), np.zeros((n, n))])


def message_dimension(algorithm, mode, n: int = 1) -> int:
    """Reals sent to each neighbour per exchange: y_j, plus xi_j in mode A."""
    algorithm, mode = Algorithm(algorithm), Mode(mode)
    if not algorithm.distributed:
        raise NetworkError(f"{algorithm.value} is centralized and exchanges no messages")
    q = output_matrix(algorithm, n).shape[0]
    return 2 * q if mode is Mode.A else q


class NetworkSystem:
    """Immutable stacked system.

    State layout for distributed algorithms is [x_1; ...; x_N; xi_1; ...; xi_N]
    with x_i in R^n_x (n for GD, 2n = [w_i; z_i] for heavy ball) and xi_i in
    R^q.  Centralized systems have state w (GD) or [w; z] (HB).
    """

    def __init__(
        self,
        algorithm,
        graph: Graph | None,
        ensemble: CostEnsemble,
        coupling: CouplingConfig | None = None,
        damping_alpha: float | None = None,
    ):
        self.algorithm = Algorithm(algorithm)
        self.ensemble = ensemble
        self.coupling = coupling if coupling is not None else CouplingConfig()
        self.graph = graph
        n = ensemble.dim
        self.dim = n
        if self.algorithm.heavy_ball:
            alpha = ensemble.alpha if damping_alpha is None else damping_alpha
            if alpha <= 0:
                raise NetworkError(f"heavy-ball damping needs alpha > 0, got {alpha}")
            self.damping = 2.0 * np.sqrt(alpha)
        else:
            self.damping = None
        self.damping_alpha = damping_alpha

        E = output_matrix(self.algorithm, n)
        self.output_map: OutputMap = split_output_map(E)
        self.n_x = E.shape[1]
        self.q = E.shape[0]

        if self.algorithm.distributed:
            if graph is None:
                raise NetworkError("distributed algorithms need a graph")
            if graph.n_nodes != ensemble.n_agents:
                raise NetworkError(
                    f"graph has {graph.n_nodes} nodes but ensemble has {ensemble.n_agents} agents"
                )
            self.n_agents = graph.n_nodes
            self.K = self.output_map.K if self.coupling.K is None else np.asarray(self.coupling.K, float)
            self._lap = graph.laplacian
            self._DI = graph.laplacian if self.coupling.mode is Mode.A else np.eye(self.n_agents)
            self.state_dim = self.n_agents * (self.n_x + self.q)
        else:
            self.n_agents = 1
            self.state_dim = self.n_x

    # -- layout helpers
    def split(self, state):
        """(X, Xi): X is (N, n_x); Xi is (N, q), or None when centralized."""
        state = np.asarray(state)
        if not self.algorithm.distributed:
            return state.reshape(1, self.n_x), None
        cut = self.n_agents * self.n_x
        return state[:cut].reshape(self.n_agents, self.n_x), state[cut:].reshape(self.n_agents, self.q)

    def join(self, X, Xi=None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if not self.algorithm.distributed:
            return X.reshape(-1).copy()
        Xi = np.zeros((self.n_agents, self.q)) if Xi is None else np.asarray(Xi, dtype=float)
        return np.concatenate([X.reshape(-1), Xi.reshape(-1)])

    def agent_outputs(self, state) -> np.ndarray:
        """Per-agent decision variables w_i, shape (N, n)."""
        X, _ = self.split(state)
        return X[:, : self.dim]

    def xi_average(self, state) -> np.ndarray:
        _, Xi = self.split(state)
        return Xi.mean(axis=0)

    # -- dynamics
    def agent_fields(self, X) -> np.ndarray:
        """Uncoupled agent vector fields h_i(x_i), rows per agent."""
        n = self.dim
        if self.algorithm is Algorithm.CentralGD:
            return -self.ensemble.grad(X[0])[None, :]
        if self.algorithm is Algorithm.CentralHB:
            w, z = X[0, :n], X[0, n:]
            return np.concatenate([z, -self.damping * z - self.ensemble.grad(w)])[None, :]
        if self.algorithm is Algorithm.DistGD:
            return -self.ensemble.local_grads(X)
        W, Zv = X[:, :n], X[:, n:]
        return np.hstack([Zv, -self.damping * Zv - self.ensemble.local_grads(W)])

    def vector_field(self, state) -> np.ndarray:
        X, Xi = self.split(state)
        H = self.agent_fields(X)
        if Xi is None:
            return H.reshape(-1)
        c = self.coupling
        E = self.output_map.E
        LY = self._lap @ (X @ E.T)
        dX = H - c.k_P * LY @ E - c.k_I * (self._DI @ Xi) @ E
        dXi = c.kappa * LY @ self.K.T
        return np.concatenate([dX.reshape(-1), dXi.reshape(-1)])

    __call__ = vector_field

    def affine_form(self):
        """(M, c) with vector_field(s) = M s + c, or None for non-quadratic costs."""
        ens = self.ensemble
        if not ens.is_quadratic:
            return None
        n = self.dim
        if self.algorithm.distributed:
            A2, B = ens._A2, ens._b
        else:
            A2, B = ens._A2.mean(axis=0)[None], ens._b.mean(axis=0)[None]
        blocks, consts = [], []
        for A, b in zip(A2, B):
            if self.algorithm.heavy_ball:
                blocks.append(np.block([[np.zeros((n, n)), np.eye(n)], [-A, -self.damping * np.eye(n)]]))
                consts.append(np.concatenate([np.zeros(n), -b]))
            else:
                blocks.append(-A)
                consts.append(-b)
        Hx = block_diag(*blocks)
        hc = np.concatenate(consts)
        if not self.algorithm.distributed:
            return Hx, hc
        c, E = self.coupling, self.output_map.E
        Nq = self.n_agents * self.q
        M = np.block([
            [Hx - c.k_P * np.kron(self._lap, E.T @ E), -c.k_I * np.kron(self._DI, E.T)],
            [c.kappa * np.kron(self._lap, self.K @ E), np.zeros((Nq, Nq))],
        ])
        return M, np.concatenate([hc, np.zeros(Nq)])

    def jacobian(self, state=None, eps: float = 1e-6) -> np.ndarray:
        """Central-difference Jacobian of the vector field."""
        s0 = np.zeros(self.state_dim) if state is None else np.asarray(state, dtype=float)
        J = np.empty((self.state_dim, self.state_dim))
        for k in range(self.state_dim):
            d = eps * (1.0 + abs(s0[k]))
            e = np.zeros(self.state_dim)
            e[k] = d
            J[:, k] = (self.vector_field(s0 + e) - self.vector_field(s0 - e)) / (2 * d)
        return J

    def spectral_abscissa(self, state=None) -> float:
        """max Re(eig) of the Jacobian restricted to the xi_bar = const subspace.

        For quadratic costs the system is affine and minus this number is the
        exact asymptotic convergence rate.
        """
        aff = self.affine_form()
        J = aff[0] if aff is not None else self.jacobian(state)
        if self.algorithm.distributed:
            P = self._free_subspace()
            J = P.T @ J @ P
        return float(np.max(np.linalg.eigvals(J).real))

    def _free_subspace(self) -> np.ndarray:
        # orthonormal basis of states whose xi average vanishes
        N, q, nx = self.n_agents, self.q, self.n_x
        Rb = ones_complement_basis(N)
        top = np.hstack([np.eye(N * nx), np.zeros((N * nx, (N - 1) * q))])
        bot = np.hstack([np.zeros((N * q, N * nx)), np.kron(Rb, np.eye(q))])
        return np.vstack([top, bot])

    def stiffness_estimate(self) -> float:
        """Rough bound on the largest eigenvalue magnitude of the Jacobian."""
        L = self.ensemble.lipschitz_L
        extra = self.damping if self.damping is not None else 0.0
        if not self.algorithm.distributed:
            return L + extra + 1.0
        lam_N = float(laplacian_spectrum(self.graph)[-1])
        sM = float(self.output_map.singular_values[0])
        c = self.coupling
        return c.k_P * lam_N * sM**2 + np.sqrt(c.k_I * c.kappa) * lam_N + L + extra + 1.0

    def max_stable_step(self) -> float:
        return 2.7 / self.stiffness_estimate()

    # -- oracles
    def optimum(self) -> np.ndarray:
        return minimizer(self.ensemble)

    def equilibrium(self, xi_bar=None) -> np.ndarray:
        """Equilibrium state for the current ensemble with conserved xi average ``xi_bar``."""
        w_star = self.optimum()
        n, N = self.dim, self.n_agents
        if self.algorithm is Algorithm.CentralGD:
            return w_star.copy()
        if self.algorithm is Algorithm.CentralHB:
            return np.concatenate([w_star, np.zeros(n)])
        om = self.output_map
        if self.algorithm is Algorithm.DistGD:
            z_star, w_bar = np.zeros((N, 0)), w_star
        elif self.algorithm is Algorithm.DistHBState:
            z_star, w_bar = np.zeros((N, 0)), np.concatenate([w_star, np.zeros(n)])
        else:
            alpha = (self.damping / 2.0) ** 2
            _, zs = heavy_ball_equilibrium(self.ensemble, alpha)
            z_star = zs @ om.Z[n:, :]
            w_bar = om.W.T @ np.concatenate([w_star, np.zeros(n)])
        h = self.agent_fields
        x, xi = full_equilibrium(z_star, w_bar, h, om, self.graph, self.coupling.k_I, self.coupling.mode.value, xi_bar)
        return np.concatenate([x, xi])

    def affine_equilibrium(self, xi_bar) -> np.ndarray:
        """Equilibrium of an affine (quadratic-cost) system with prescribed xi average.

        Solves J s + f(0) = 0 together with mean(xi) = xi_bar by least squares.
        Works in mode B with nonzero xi_bar, where the optimum is shifted.
        """
        if not self.ensemble.is_quadratic:
            raise NetworkError("affine_equilibrium needs a quadratic ensemble")
        J, f0 = self.affine_form()
        N, q, nx = self.n_agents, self.q, self.n_x
        C = np.hstack([np.zeros((q, N * nx)), np.kron(np.ones((1, N)) / N, np.eye(q))])
        A = np.vstack([J, C])
        rhs = np.concatenate([-f0, np.asarray(xi_bar, dtype=float)])
        s, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        return s

    def describe(self) -> str:
        c = self.coupling
        if not self.algorithm.distributed:
            return f"{self.algorithm.value}(n={self.dim})"
        return (
            f"{self.algorithm.value}(N={self.n_agents}, n={self.dim}, mode={c.mode.value}, "
            f"k_P={c.k_P:g}, k_I={c.k_I:g}, kappa={c.kappa:g})"
        )


def assemble(
    algorithm,
    graph: Graph | None,
    ensemble: CostEnsemble,
    coupling: CouplingConfig | None = None,
    xi0=None,
    damping_alpha: float | None = None,
) -> NetworkSystem:
    """Build a NetworkSystem.

    In mode B, passing ``xi0`` certifies the initial integral states; their
    sum must vanish.
    """
    sys_ = NetworkSystem(algorithm, graph, ensemble, coupling, damping_alpha)
    if sys_.algorithm.distributed and sys_.coupling.mode is Mode.B and xi0 is not None:
        xi0 = np.asarray(xi0, dtype=float).reshape(sys_.n_agents, sys_.q)
        if np.max(np.abs(xi0.sum(axis=0))) > 1e-12:
            raise NetworkError(
                f"mode B requires sum xi_i(0) = 0, got |sum| = {np.max(np.abs(xi0.sum(axis=0))):.3e}"
            )
    return sys_


@dataclass(frozen=True)
class Leave:
    agent: int


@dataclass(frozen=True)
class Join:
    local: object
    neighbors: tuple
    position: int | None = None
    x0: np.ndarray | None = None
    xi0: np.ndarray | None = None


def join_leave(system: NetworkSystem, event, state):
    """Apply a join or leave event; survivors keep their (x_i, xi_i) verbatim.

    Returns (new_system, new_state).  Fails if the new graph is disconnected.
    Mode B events emit a warning since the xi sum is no longer guaranteed zero.
    """
    if not system.algorithm.distributed:
        raise NetworkError("join/leave applies only to distributed systems")
    X, Xi = system.split(state)
    if system.coupling.mode is Mode.B:
        warnings.warn("join/leave in mode B: sum of xi_i is no longer guaranteed to be zero", stacklevel=2)
    try:
        if isinstance(event, Leave):
            k = event.agent
            graph = system.graph.remove_node(k)
            ensemble = system.ensemble.without(k)
            X = np.delete(X, k, axis=0)
            Xi = np.delete(Xi, k, axis=0)
        elif isinstance(event, Join):
            pos = system.n_agents if event.position is None else event.position
            graph = system.graph.insert_node(event.neighbors, pos)
            ensemble = system.ensemble.with_local(event.local, pos)
            x0 = np.zeros(system.n_x) if event.x0 is None else np.asarray(event.x0, float)
            xi0 = np.zeros(system.q) if event.xi0 is None else np.asarray(event.xi0, float)
            X = np.insert(X, pos, x0, axis=0)
            Xi = np.insert(Xi, pos, xi0, axis=0)
        else:
            raise NetworkError(f"unknown event {event!r}")
    except GraphError as exc:
        raise NetworkError(f"event {event!r} leaves the network invalid: {exc}") from exc
    new = NetworkSystem(system.algorithm, graph, ensemble, system.coupling, system.damping_alpha)
    return new, new.join(X, Xi)
