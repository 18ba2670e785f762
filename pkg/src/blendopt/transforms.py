"""Output maps and the consensus/disagreement coordinates used for analysis.

Stacked states are flat arrays laid out agent by agent: x = [x_1; ...; x_N]
with x_i in R^n, xi = [xi_1; ...; xi_N] with xi_i in R^q.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, reduced_laplacian


class TransformError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class OutputMap:
    """E (q x n) with Z spanning ker E, W spanning its orthogonal complement."""

    E: np.ndarray
    Z: np.ndarray
    W: np.ndarray

    @property
    def q(self) -> int:
        return self.E.shape[0]

    @property
    def n(self) -> int:
        return self.E.shape[1]

    @property
    def K(self) -> np.ndarray:
        EW = self.E @ self.W
        return EW @ EW.T

    @property
    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.E, compute_uv=False)


def _fix_signs(B: np.ndarray) -> np.ndarray:
    # make the largest-magnitude entry of each column positive
    if B.size == 0:
        return B
    idx = np.argmax(np.abs(B), axis=0)
    s = np.sign(B[idx, np.arange(B.shape[1])])
    s[s == 0] = 1.0
    return B * s


def split_output_map(E) -> OutputMap:
    """Orthonormal bases of ker(E) and ker(E)^perp from a full SVD of E."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    q, n = E.shape
    if q > n:
        raise TransformError(f"E must have q <= n, got {q}x{n}")
    _, s, Vt = np.linalg.svd(E)
    tol = max(q, n) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if rank < q:
        raise TransformError(f"E ({q}x{n}) is rank deficient: rank {rank}")
    V = Vt.T
    W = _fix_signs(V[:, :q].copy())
    Z = _fix_signs(V[:, q:].copy())
    return OutputMap(E=E, Z=Z, W=W)


@dataclass
class TransformedState:
    z: np.ndarray        # (N, n-q)
    w_bar: np.ndarray    # (q,)
    w_tilde: np.ndarray  # ((N-1) q,)
    xi_bar: np.ndarray   # (q,)
    xi_tilde: np.ndarray  # ((N-1) q,)


def _check(x, xi, om: OutputMap, g: Graph):
    N = g.n_nodes
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if x.size != N * om.n or xi.size != N * om.q:
        raise TransformError(
            f"expected x of size {N * om.n} and xi of size {N * om.q}, got {x.size} and {xi.size}"
        )
    return x.reshape(N, om.n), xi.reshape(N, om.q)


def to_transformed(x, xi, om: OutputMap, g: Graph) -> TransformedState:
    X, Xi = _check(x, xi, om, g)
    R = g.r_basis
    Wc = X @ om.W           # row i: w_i^T
    return TransformedState(
        z=X @ om.Z,
        w_bar=Wc.mean(axis=0),
        w_tilde=(R.T @ Wc).reshape(-1),
        xi_bar=Xi.mean(axis=0),
        xi_tilde=(R.T @ Xi).reshape(-1),
    )


def from_transformed(ts: TransformedState, om: OutputMap, g: Graph):
    N, q = g.n_nodes, om.q
    R = g.r_basis
    Wt = ts.w_tilde.reshape(N - 1, q)
    Wc = ts.w_bar[None, :] + R @ Wt
    X = np.asarray(ts.z).reshape(N, -1) @ om.Z.T + Wc @ om.W.T
    Xi = ts.xi_bar[None, :] + R @ ts.xi_tilde.reshape(N - 1, q)
    return X.reshape(-1), Xi.reshape(-1)


def transformed_field(ts: TransformedState, h, om: OutputMap, g: Graph, k_P, k_I, kappa, mode: str, K=None):
    """Time derivative of the transformed coordinates, written directly in
    those coordinates.  ``h`` maps the (N, n) agent-state array to the (N, n)
    array of agent vector fields.  In mode B the xi_bar contribution to
    w_bar is kept, so the formula holds for any xi_bar.
    """
    N, q = g.n_nodes, om.q
    K = om.K if K is None else K
    R = g.r_basis
    lam_P = reduced_laplacian(g)
    lam_I = lam_P if mode == "A" else np.eye(N - 1)
    x, _ = from_transformed(ts, om, g)
    H = h(x.reshape(N, om.n))
    WtE = om.W.T @ om.E.T
    EW = om.E @ om.W
    Wt = ts.w_tilde.reshape(N - 1, q)
    Xt = ts.xi_tilde.reshape(N - 1, q)

    dz = H @ om.Z
    dw_bar = (H @ om.W).mean(axis=0)
    if mode == "B":
        dw_bar = dw_bar - k_I * WtE @ ts.xi_bar
    dw_tilde = R.T @ H @ om.W - k_P * lam_P @ Wt @ (WtE @ EW).T - k_I * lam_I @ Xt @ WtE.T
    dxi_tilde = kappa * lam_P @ Wt @ (K @ EW).T
    return TransformedState(
        z=dz,
        w_bar=dw_bar,
        w_tilde=dw_tilde.reshape(-1),
        xi_bar=np.zeros(q),
        xi_tilde=dxi_tilde.reshape(-1),
    )


def blended_vector_field(z, w_bar, h, om: OutputMap):
    """Blended (consensus-manifold) dynamics.

    ``z`` is (N, n-q), ``w_bar`` is (q,), ``h`` maps the (N, n) array of
    agent states to their (N, n) vector fields.  Returns (dz, dw_bar).
    """
    z = np.asarray(z, dtype=float)
    N = z.shape[0]
    X = z.reshape(N, -1) @ om.Z.T + (om.W @ w_bar)[None, :]
    H = h(X)
    return H @ om.Z, (H @ om.W).mean(axis=0)


def full_equilibrium(z_star, w_bar_star, h, om: OutputMap, g: Graph, k_I: float, mode: str, xi_bar=None):
    """Equilibrium (x*, xi*) of the coupled network given the blended equilibrium.

    xi_tilde* solves (Lambda_I kron W^T E^T) xi_tilde = (1/k_I)(R^T kron W^T) h(x*);
    xi_bar* is the conserved average (zero by default).
    """
    if k_I <= 0:
        raise TransformError(f"k_I must be positive, got {k_I}")
    N, q, n = g.n_nodes, om.q, om.n
    xi_bar = np.zeros(q) if xi_bar is None else np.asarray(xi_bar, dtype=float)
    z_star = np.asarray(z_star, dtype=float).reshape(N, n - q)
    X = z_star @ om.Z.T + (om.W @ np.asarray(w_bar_star, dtype=float))[None, :]
    if N == 1:
        return X.reshape(-1), np.tile(xi_bar, 1)
    lam_P = reduced_laplacian(g)
    lam_I = lam_P if mode == "A" else np.eye(N - 1)
    M = np.kron(lam_I, om.W.T @ om.E.T)
    if np.linalg.svd(M, compute_uv=False)[-1] < 1e-12:
        raise TransformError("Lambda_I kron W^T E^T is singular")
    rhs = (g.r_basis.T @ h(X) @ om.W).reshape(-1) / k_I
    xi_tilde = np.linalg.solve(M, rhs)
    Xi = xi_bar[None, :] + g.r_basis @ xi_tilde.reshape(N - 1, q)
    return X.reshape(-1), Xi.reshape(-1)
