"""Closed-form coupling-gain bounds and the practical beta schedule.

All singular values of the Lyapunov weight matrices X = Lambda_P kron W^T E^T E W
and Y = Lambda_I kron W^T E^T enter only through the products
|X| = s_M(Lambda_P) s_M(E)^2, |Y| = s_M(Lambda_I) s_M(E),
s_m(X) = s_m(Lambda_P) s_m(E)^2 and s_m(Y) = s_m(Lambda_I) s_m(E).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import Graph, reduced_laplacian


class GainError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralData:
    sig_m_E: float
    sig_M_E: float
    sig_m_LP: float
    sig_M_LP: float
    sig_m_LI: float
    sig_M_LI: float
    L: float
    N: int

    def __post_init__(self):
        for lo, hi in (("sig_m_E", "sig_M_E"), ("sig_m_LP", "sig_M_LP"), ("sig_m_LI", "sig_M_LI")):
            a, b = getattr(self, lo), getattr(self, hi)
            if not 0 < a <= b:
                raise GainError(f"need 0 < {lo} <= {hi}, got {a}, {b}")
        if self.L <= 0 or self.N < 1:
            raise GainError(f"need L > 0 and N >= 1, got L={self.L}, N={self.N}")

    @classmethod
    def from_problem(cls, graph: Graph, E, mode: str, L: float) -> "SpectralData":
        if graph.n_nodes < 2:
            raise GainError("gain bounds need at least two agents")
        lp = np.linalg.eigvalsh(reduced_laplacian(graph))
        li = lp if mode == "A" else np.ones(graph.n_nodes - 1)
        sE = np.linalg.svd(np.atleast_2d(E), compute_uv=False)
        return cls(float(sE[-1]), float(sE[0]), float(lp[0]), float(lp[-1]), float(li[0]), float(li[-1]), float(L), graph.n_nodes)

    @property
    def norm_X(self):
        return self.sig_M_LP * self.sig_M_E**2

    @property
    def norm_Y(self):
        return self.sig_M_LI * self.sig_M_E

    @property
    def sig_m_X(self):
        return self.sig_m_LP * self.sig_m_E**2

    @property
    def sig_m_Y(self):
        return self.sig_m_LI * self.sig_m_E


@dataclass(frozen=True)
class LyapunovParams:
    """Converse-Lyapunov constants c1, c3 (not computable; user supplied),
    blended-dynamics rate mu and the rate margin upsilon in (0, mu)."""

    c1: float
    c3: float
    mu: float
    upsilon: float

    def __post_init__(self):
        if self.c1 <= 0 or self.c3 <= 0:
            raise GainError(f"c1, c3 must be positive, got {self.c1}, {self.c3}")
        if not 0 < self.upsilon < self.mu:
            raise GainError(f"need 0 < upsilon < mu, got upsilon={self.upsilon}, mu={self.mu}")

    @classmethod
    def heuristic(cls, alpha: float, heavy_ball: bool, margin: float = 0.5) -> "LyapunovParams":
        """c1 = c3 = 1 (a declared guess) and mu = alpha (GD) or sqrt(alpha)/2 (HB)."""
        mu = math.sqrt(alpha) / 2 if heavy_ball else alpha
        return cls(1.0, 1.0, mu, margin * mu)


@dataclass(frozen=True)
class Thetas:
    theta0: float
    theta1: float
    theta2: float
    theta3: float
    theta4: float
    theta5: float


def theta_constants(sd: SpectralData, lp: LyapunovParams) -> Thetas:
    L, N, ups, c1, c3 = sd.L, sd.N, lp.upsilon, lp.c1, lp.c3
    t1 = math.sqrt(2.0) * math.sqrt(sd.sig_m_LP / sd.sig_M_LI) * sd.sig_m_E / sd.sig_M_E
    t2 = max(sd.sig_M_LP / sd.sig_M_LI * sd.sig_M_E, 2.0 / sd.sig_M_E)
    # |Y|^2 L^2 N / (s_m(Y)^2 ups c1), times 4
    t3 = 4.0 * sd.norm_Y**2 * L**2 * N / (sd.sig_m_Y**2 * ups * c1)
    t4 = sd.sig_M_LP * sd.sig_M_LI * sd.sig_M_E**4
    t5 = sd.norm_Y**2 * L**2 / sd.sig_m_Y**2
    t0 = 3 * c3**2 * L**2 / (4 * ups * c1) + 3 * sd.norm_X**2 * L**2 * N / (ups * c1) + sd.norm_X * L
    return Thetas(t0, t1, t2, t3, t4, t5)


def phi1(kappa: float, k_I: float, sd: SpectralData, lp: LyapunovParams) -> float:
    """Positive root of s_m(X)^2 k^2 - theta0 k - (2 kappa - k_I)(kappa theta4 + theta5 / k_I)."""
    th = theta_constants(sd, lp)
    d = 2 * kappa - k_I
    sx2 = sd.sig_m_X**2
    return (th.theta0 + math.sqrt(th.theta0**2 + 4 * d * (kappa * th.theta4 + th.theta5 / k_I) * sx2)) / (2 * sx2)


def kp_star(kappa: float, k_I: float, sd: SpectralData, lp: LyapunovParams) -> float:
    """Proportional gain above which the PI network is exponentially stable."""
    if not (k_I > 0 and 2 * kappa > k_I):
        raise GainError(f"need 2*kappa > k_I > 0, got kappa={kappa}, k_I={k_I}")
    th = theta_constants(sd, lp)
    d = 2 * kappa - k_I
    return max(d / th.theta1, d / th.theta2, d / k_I * th.theta3, phi1(kappa, k_I, sd, lp))


def phi_star_bound(sd: SpectralData) -> float:
    """Upper limit on phi* = kappa / k_P = k_I / k_P for rate recovery."""
    t1 = math.sqrt(2.0) * math.sqrt(sd.sig_m_LP / sd.sig_M_LI) * sd.sig_m_E / sd.sig_M_E
    t2 = max(sd.sig_M_LP / sd.sig_M_LI * sd.sig_M_E, 2.0 / sd.sig_M_E)
    t4 = sd.sig_M_LP * sd.sig_M_LI * sd.sig_M_E**4
    return min(t1, t2, sd.sig_m_X / math.sqrt(t4))


@dataclass(frozen=True)
class RecoveryTerms:
    vartheta1: float
    vartheta2: float
    vartheta3: float
    eta: float


def recovery_terms(phi_star: float, sd: SpectralData, lp: LyapunovParams) -> RecoveryTerms:
    th = theta_constants(sd, lp)
    gap = lp.mu - lp.upsilon
    eta = max(sd.sig_M_LP * sd.sig_M_E**2, 2 * sd.sig_M_LI)
    denom = sd.sig_m_LI**2 * sd.sig_m_E**2
    v1 = 2 * 4 * sd.sig_M_LI**2 * sd.sig_M_E**2 * sd.L**2 * sd.N / (denom * lp.upsilon * lp.c1)
    v2 = 2 * 8 * gap * eta / (3 * denom)
    v3 = sd.sig_m_LP**2 * sd.sig_m_E**4 - phi_star**2 * th.theta4
    return RecoveryTerms(v1, v2, v3, eta)


def kp_double_star(phi_star: float, sd: SpectralData, lp: LyapunovParams) -> float:
    """Proportional gain above which the rate mu - upsilon is guaranteed,
    for kappa = k_I = phi_star * k_P."""
    if phi_star <= 0:
        raise GainError(f"phi_star must be positive, got {phi_star}")
    r = recovery_terms(phi_star, sd, lp)
    if r.vartheta3 <= 0:
        raise GainError(f"phi_star={phi_star:.4g} too large: vartheta3 = {r.vartheta3:.4g} <= 0")
    th = theta_constants(sd, lp)
    a = th.theta0 + 2 * (lp.mu - lp.upsilon) * r.eta
    root = (a + math.sqrt(a * a + 4 * r.vartheta3 * th.theta5)) / (2 * r.vartheta3)
    return max(r.vartheta1, r.vartheta2 / phi_star**2, root)


@dataclass(frozen=True)
class BetaGains:
    kappa: float
    k_I: float
    k_P: float
    phi_star: float
    small_beta: bool


def beta_rule(beta: float) -> BetaGains:
    """kappa = k_I = beta, k_P = beta^(3/2); phi* = 1/sqrt(beta)."""
    if beta <= 0:
        raise GainError(f"beta must be positive, got {beta}")
    return BetaGains(beta, beta, beta**1.5, 1.0 / math.sqrt(beta), beta < 1.0)


def beta_margin(beta: float, sd: SpectralData, lp: LyapunovParams) -> float:
    """beta^(3/2) - k_P**(1/sqrt(beta)); -inf where phi* is out of range."""
    phi = 1.0 / math.sqrt(beta)
    if phi >= phi_star_bound(sd):
        return -math.inf
    try:
        return beta**1.5 - kp_double_star(phi, sd, lp)
    except GainError:
        return -math.inf


def beta_schedule_threshold(sd: SpectralData, lp: LyapunovParams, beta_max: float = 1e12) -> float:
    """Smallest beta0 such that the beta schedule satisfies k_P > k_P** for every beta > beta0.

    k_P** grows at most linearly in beta while k_P grows as beta^(3/2), so the
    margin is eventually positive; scan a log grid for the last sign change
    and refine it by bisection.
    """
    grid = np.geomspace(1.0 / phi_star_bound(sd) ** 2, beta_max, 2000)
    signs = np.array([beta_margin(b, sd, lp) > 0 for b in grid])
    if not signs[-1]:
        raise GainError(f"beta schedule not admissible below beta={beta_max:g}")
    bad = np.nonzero(~signs)[0]
    if bad.size == 0:
        return float(grid[0])
    lo, hi = grid[bad[-1]], grid[bad[-1] + 1]
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if beta_margin(mid, sd, lp) > 0:
            hi = mid
        else:
            lo = mid
        if hi / lo - 1 < 1e-14:
            break
    return float(hi)


def bound_report(sd: SpectralData, lp: LyapunovParams, kappa: float, k_I: float) -> str:
    """Plain-text table of all bound quantities."""
    th = theta_constants(sd, lp)
    phi_b = phi_star_bound(sd)
    phi = 0.5 * phi_b
    rec = recovery_terms(phi, sd, lp)
    rows = [
        ("theta0", th.theta0), ("theta1", th.theta1), ("theta2", th.theta2),
        ("theta3", th.theta3), ("theta4", th.theta4), ("theta5", th.theta5),
        ("phi_star_bound", phi_b), ("phi_star (half bound)", phi),
        ("vartheta1", rec.vartheta1), ("vartheta2", rec.vartheta2),
        ("vartheta3", rec.vartheta3), ("eta", rec.eta),
        ("k_P** (half bound)", kp_double_star(phi, sd, lp)),
    ]
    if k_I > 0 and 2 * kappa > k_I:
        rows.append((f"k_P* (kappa={kappa:g}, k_I={k_I:g})", kp_star(kappa, k_I, sd, lp)))
    else:
        rows.append((f"k_P* (kappa={kappa:g}, k_I={k_I:g})", float("nan")))
    try:
        rows.append(("beta schedule threshold", beta_schedule_threshold(sd, lp)))
    except GainError:
        rows.append(("beta schedule threshold", float("nan")))
    head = (
        f"# c1={lp.c1:g} c3={lp.c3:g} mu={lp.mu:.6g} upsilon={lp.upsilon:.6g} "
        f"L={sd.L:.6g} N={sd.N} (c1, c3 are heuristic placeholders)"
    )
    width = max(len(k) for k, _ in rows)
    return "\n".join([head] + [f"{k:<{width}}  {v:.10g}" for k, v in rows]) + "\n"
