"""Fixed-step RK4 integration, error metrics and log-linear rate fits."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

log = logging.getLogger(__name__)

DEFAULT_STEP = 1e-3
DEFAULT_RECORD_EVERY = 10
RATE_FLOOR = 1e-10
R2_FLOOR = 0.99


class DivergenceError(RuntimeError):
    def __init__(self, t: float, descriptor: str = ""):
        self.t = t
        msg = f"non-finite state at t={t:.6g}"
        if descriptor:
            msg += f" ({descriptor})"
        super().__init__(msg + "; gains too aggressive or step too large")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    h: float
    metadata: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path, columns=None, values=None) -> None:
        """Write "t,<columns>" rows with 17 significant digits.

        By default the state components are written as s0, s1, ...
        """
        values = self.states if values is None else np.asarray(values)
        if values.ndim == 1:
            values = values[:, None]
        if columns is None:
            columns = [f"s{k}" for k in range(values.shape[1])]
        write_csv(path, ["t", *columns], np.column_stack([self.times, values]))


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(f"{v:.17g}" for v in row) for row in np.atleast_2d(rows)]
    Path(path).write_text("\n".join(lines) + "\n")


def rk4_step(f, s, h):
    k1 = f(s)
    k2 = f(s + 0.5 * h * k1)
    k3 = f(s + 0.5 * h * k2)
    k4 = f(s + h * k3)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_affine_step(M, c, h):
    """The RK4 step for ds/dt = M s + c, collapsed to s -> P s + d.

    Algebraically identical to four stage evaluations; it only saves the
    per-stage overhead on the linear systems that quadratic costs produce.
    """
    hM = h * M
    I = np.eye(M.shape[0])
    hM2 = hM @ hM
    hM3 = hM2 @ hM
    P = I + hM + hM2 / 2 + hM3 / 6 + hM3 @ hM / 24
    d = h * ((I + hM / 2 + hM2 / 6 + hM3 / 24) @ c)
    return lambda s: P @ s + d


def integrate(system, state0, h: float = DEFAULT_STEP, t_end: float = 50.0, record_every: int = DEFAULT_RECORD_EVERY) -> Trajectory:
    """Integrate ds/dt = f(s) from t=0 with classical RK4.

    ``system`` is a NetworkSystem or any callable f(state).  States are
    recorded every ``record_every`` steps (plus the final one).
    """
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    f = getattr(system, "vector_field", system)
    descriptor = system.describe() if hasattr(system, "describe") else ""
    if hasattr(system, "max_stable_step") and h > system.max_stable_step():
        log.warning("step %.3g exceeds the RK4 stability estimate %.3g for %s", h, system.max_stable_step(), descriptor)

    s = np.array(state0, dtype=float)
    if not np.all(np.isfinite(s)):
        raise DivergenceError(0.0, descriptor)
    aff = system.affine_form() if hasattr(system, "affine_form") else None
    if aff is not None:
        step = rk4_affine_step(*aff, h)
    else:
        step = lambda s: rk4_step(f, s, h)
    n_steps = int(round(t_end / h))
    n_rec = n_steps // record_every + 1 + (1 if n_steps % record_every else 0)
    times = np.empty(n_rec)
    states = np.empty((n_rec, s.size))
    times[0], states[0] = 0.0, s
    r = 1
    with np.errstate(over="ignore", invalid="ignore"):  # blow-ups surface as DivergenceError
        for k in range(1, n_steps + 1):
            s = step(s)
            if k % record_every == 0 or k == n_steps:
                if not np.all(np.isfinite(s)):
                    raise DivergenceError(k * h, descriptor)
                times[r], states[r] = k * h, s
                r += 1
    if not np.all(np.isfinite(s)):
        raise DivergenceError(n_steps * h, descriptor)
    return Trajectory(times[:r], states[:r], h, {"system": descriptor, "record_every": record_every})


def error_metric(traj: Trajectory, w_star, extractor) -> np.ndarray:
    """Average distance to w*, (1/N) sum_i |w_i(t) - w*|.

    ``extractor`` maps a state to the (N, n) array of agent decision variables
    (a NetworkSystem's ``agent_outputs``).  Centralized systems have N = 1.
    """
    w_star = np.asarray(w_star)
    return np.array([np.linalg.norm(extractor(s) - w_star, axis=1).mean() for s in traj.states])


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    intercept: float
    window: tuple
    r_squared: float
    trusted: bool


def default_window(times, values, floor: float = RATE_FLOOR):
    """Last half of the samples that are still above the numerical floor."""
    times = np.asarray(times)
    values = np.asarray(values)
    above = np.nonzero(values > floor)[0]
    if above.size < 4:
        raise ValueError("fewer than 4 samples above the numerical floor")
    last = above[-1]
    first = last // 2
    return float(times[first]), float(times[last])


def estimate_rate(times, values, window=None, r2_floor: float = R2_FLOOR) -> RateEstimate:
    """Exponential rate from a least-squares fit of log e(t) over ``window``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is None:
        window = default_window(times, values)
    t0, t1 = window
    sel = (times >= t0) & (times <= t1)
    if sel.sum() < 2:
        raise ValueError(f"window {window} holds fewer than two samples")
    v = values[sel]
    if np.any(v <= 0):
        raise ValueError("error series must be positive on the fit window")
    # normalizing first keeps a scaled series bit-identical for power-of-two scales
    fit = stats.linregress(times[sel], np.log(v / v[0]))
    r2 = float(fit.rvalue**2)
    return RateEstimate(
        rate=float(-fit.slope),
        intercept=float(fit.intercept + np.log(v[0])),
        window=(float(t0), float(t1)),
        r_squared=r2,
        trusted=r2 >= r2_floor,
    )
