"""Scenario execution: single runs, parameter sweeps and join/leave churn."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import gains as gn
from ..graph import Graph, erdos_renyi
from ..network import Algorithm, CouplingConfig, Join, Leave, Mode, NetworkSystem, assemble, join_leave
from ..problems import CostEnsemble, random_quadratic_ensemble, minimizer
from ..solver import DivergenceError, RateEstimate, Trajectory, error_metric, estimate_rate, integrate, write_csv
from .config import ExperimentConfig

log = logging.getLogger(__name__)


class RunError(RuntimeError):
    pass


# -- problem construction

def build_problem(cfg: ExperimentConfig):
    """(graph, ensemble) from the config; a single agent gets the one-node graph."""
    p = cfg.problem
    if p.file is not None:
        ens = CostEnsemble.load(p.file)
    else:
        ens = random_quadratic_ensemble(
            p.n_agents, p.dim, p.max_eig, p.condition, p.seed, spread=p.spread, negative_depth=p.negative_depth
        )
    if cfg.graph.file is not None:
        graph = Graph.load(cfg.graph.file)
        if graph.n_nodes != ens.n_agents:
            raise RunError(f"graph file has {graph.n_nodes} nodes, ensemble has {ens.n_agents} agents")
    elif ens.n_agents == 1:
        graph = Graph(1, frozenset())
    else:
        graph = erdos_renyi(ens.n_agents, cfg.graph.edge_prob, cfg.graph.seed)
    return graph, ens


def initial_agents(cfg: ExperimentConfig, n_agents: int, dim: int):
    """Seeded starting points: W0 ~ N(0, 1) and heavy-ball auxiliaries V0.

    Drawn once so every algorithm starts from the same w_i(0).
    """
    rng = np.random.default_rng(cfg.init.seed)
    W0 = rng.standard_normal((n_agents, dim))
    V0 = rng.standard_normal((n_agents, dim))
    if cfg.init.velocity == "zero":
        V0 = np.zeros_like(V0)
    return W0, V0


def initial_state(system: NetworkSystem, W0, V0) -> np.ndarray:
    """Distributed systems start each agent at its own draw with xi(0) = 0;
    centralized ones start at the agents' mean."""
    if not system.algorithm.distributed:
        W0, V0 = W0.mean(axis=0, keepdims=True), V0.mean(axis=0, keepdims=True)
    X = np.hstack([W0, V0]) if system.algorithm.heavy_ball else W0
    return system.join(X)


def lyapunov_params(cfg: ExperimentConfig, ensemble: CostEnsemble, heavy_ball: bool) -> gn.LyapunovParams:
    mu = math.sqrt(ensemble.alpha) / 2 if heavy_ball else ensemble.alpha
    ly = cfg.lyapunov
    return gn.LyapunovParams(ly.c1, ly.c3, mu, ly.upsilon_frac * mu)


def spectral_data(cfg: ExperimentConfig, algorithm: Algorithm, graph: Graph, ensemble: CostEnsemble) -> gn.SpectralData:
    E = NetworkSystem(algorithm, graph, ensemble).output_map.E
    return gn.SpectralData.from_problem(graph, E, cfg.gains.mode, ensemble.lipschitz_L)


def resolve_gains(cfg: ExperimentConfig, algorithm: Algorithm, graph: Graph, ensemble: CostEnsemble) -> CouplingConfig:
    g = cfg.gains
    mode = Mode(g.mode)
    if g.rule == "explicit":
        return CouplingConfig(mode, g.k_P, g.k_I, g.kappa)
    if g.rule == "beta":
        b = gn.beta_rule(g.beta)
        if b.small_beta:
            log.warning("beta=%g < 1: the beta schedule gives k_P < k_I", g.beta)
        return CouplingConfig(mode, b.k_P, b.k_I, b.kappa)
    # bound-derived: phi* at half its admissible range, k_P just above k_P**
    sd = spectral_data(cfg, algorithm, graph, ensemble)
    lp = lyapunov_params(cfg, ensemble, algorithm.heavy_ball)
    phi = 0.5 * gn.phi_star_bound(sd)
    k_P = g.bound_margin * gn.kp_double_star(phi, sd, lp)
    return CouplingConfig(mode, k_P, phi * k_P, phi * k_P)


def bound_reports(cfg: ExperimentConfig, graph: Graph, ensemble: CostEnsemble) -> str:
    out = []
    for name in cfg.algorithms:
        alg = Algorithm(name)
        if not alg.distributed:
            continue
        out.append(f"## {name}, mode {cfg.gains.mode}")
        try:
            c = resolve_gains(cfg, alg, graph, ensemble)
            sd = spectral_data(cfg, alg, graph, ensemble)
            lp = lyapunov_params(cfg, ensemble, alg.heavy_ball)
            out.append(gn.bound_report(sd, lp, c.kappa, c.k_I).rstrip("\n"))
        except (gn.GainError, ValueError) as exc:
            out.append(f"unavailable: {exc}")
    return "\n".join(out) + "\n" if out else "no distributed algorithms\n"


# -- single runs

@dataclass
class AlgorithmResult:
    algorithm: str
    description: str = ""
    trajectory: Trajectory | None = None
    errors: np.ndarray | None = None
    rate: RateEstimate | None = None
    final_error: float = math.nan
    status: str = "ok"
    system: NetworkSystem | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class RunResult:
    config: ExperimentConfig
    graph: Graph
    ensemble: CostEnsemble
    w_star: np.ndarray
    residual: float
    results: dict = field(default_factory=dict)
    bounds: str = ""


def choose_step(system: NetworkSystem, h=None, base: float = 1e-3) -> float:
    """``h`` itself, or for auto: ``base`` halved until under half the stability estimate.

    Halving keeps every default horizon an integer number of steps.
    """
    if h is not None:
        return h
    h = base
    while h > 0.5 * system.max_stable_step():
        h /= 2
    return h


def _fit(times, errors, r2_floor):
    try:
        return estimate_rate(times, errors, r2_floor=r2_floor)
    except ValueError:
        return None


def simulate(cfg: ExperimentConfig, algorithm, graph: Graph, ensemble: CostEnsemble, W0, V0, w_star=None) -> AlgorithmResult:
    """Integrate one algorithm; divergence raises RunError naming the algorithm and gains."""
    alg = Algorithm(algorithm)
    coupling = resolve_gains(cfg, alg, graph, ensemble) if alg.distributed else None
    system = assemble(alg, graph if alg.distributed else None, ensemble, coupling)
    s0 = initial_state(system, W0, V0)
    s = cfg.solver
    h = choose_step(system, s.h)
    # keep the recording grid at the configured spacing when auto halves the step
    every = s.record_every * max(1, int(round((s.h or 1e-3) / h)))
    try:
        traj = integrate(system, s0, h=h, t_end=s.t_end, record_every=every)
    except DivergenceError as exc:
        raise RunError(f"{alg.value} diverged: {exc}") from exc
    w_star = minimizer(ensemble) if w_star is None else w_star
    err = error_metric(traj, w_star, system.agent_outputs)
    return AlgorithmResult(
        alg.value, system.describe(), traj, err, _fit(traj.times, err, cfg.r2_floor), float(err[-1]), "ok", system
    )


def run(cfg: ExperimentConfig, out=None, raise_on_error: bool = True) -> RunResult:
    """Run every configured algorithm from shared initial agents.

    With ``out`` set, writes per-algorithm error (and optionally state) CSVs,
    summary.txt, summary.csv and bounds.txt into that directory.
    """
    cfg.validate()
    graph, ens = build_problem(cfg)
    w_star = minimizer(ens)
    residual = float(np.linalg.norm(ens.grad(w_star)))
    W0, V0 = initial_agents(cfg, ens.n_agents, ens.dim)
    res = RunResult(cfg, graph, ens, w_star, residual)
    for name in cfg.algorithms:
        try:
            res.results[name] = simulate(cfg, name, graph, ens, W0, V0, w_star)
        except (RunError, gn.GainError, ValueError) as exc:
            if raise_on_error:
                raise
            res.results[name] = AlgorithmResult(name, status=f"error: {exc}")
    res.bounds = bound_reports(cfg, graph, ens) if graph.n_nodes > 1 else "single agent: no coupling bounds\n"
    if out is not None:
        write_run(res, Path(out))
    return res


def state_columns(system: NetworkSystem) -> list:
    n = system.dim
    names = ["w"] if not system.algorithm.heavy_ball else ["w", "z"]
    if not system.algorithm.distributed:
        return [f"{v}_{k + 1}" for v in names for k in range(n)]
    cols = [f"{v}{i + 1}_{k + 1}" for i in range(system.n_agents) for v in names for k in range(n)]
    cols += [f"xi{i + 1}_{k + 1}" for i in range(system.n_agents) for k in range(system.q)]
    return cols


def _fmt(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating, int, np.integer)):
        return f"{float(v):.17g}"
    return str(v)


def _rate_fields(r: RateEstimate | None):
    if r is None:
        return [math.nan, math.nan, math.nan, math.nan, "untrusted"]
    return [r.rate, r.window[0], r.window[1], r.r_squared, "trusted" if r.trusted else "untrusted"]


SUMMARY_HEADER = ["algorithm", "rate", "fit_t0", "fit_t1", "r_squared", "rate_status", "final_error", "status"]


def summary_rows(results: dict):
    rows = []
    for name, r in results.items():
        rows.append([name, *_rate_fields(r.rate), r.final_error, "ok" if r.ok else r.status.replace(",", ";")])
    return rows


def write_table(path: Path, header, rows) -> None:
    lines = [",".join(header)] + [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def write_run(res: RunResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, r in res.results.items():
        if not r.ok:
            continue
        write_csv(out / f"{name}_error.csv", ["t", "error"], np.column_stack([r.trajectory.times, r.errors]))
        if res.config.write_states:
            r.trajectory.to_csv(out / f"{name}_states.csv", columns=state_columns(r.system))
    write_table(out / "summary.csv", SUMMARY_HEADER, summary_rows(res.results))
    (out / "bounds.txt").write_text(res.bounds)
    (out / "summary.txt").write_text(summary_text(res))


def summary_text(res: RunResult) -> str:
    lines = [
        f"agents {res.ensemble.n_agents}, dimension {res.ensemble.dim}, edges {len(res.graph.edges)}",
        f"alpha {res.ensemble.alpha:.10g}, L {res.ensemble.lipschitz_L:.10g}",
        f"w* residual |grad F(w*)| = {res.residual:.3e}",
        "",
    ]
    for name, r in res.results.items():
        if not r.ok:
            lines.append(f"{name}: {r.status}")
            continue
        lines.append(f"{name}: {r.description}")
        if r.rate is None:
            lines.append("  rate: unavailable (too few samples above the numerical floor)")
        else:
            tag = "" if r.rate.trusted else "  [UNTRUSTED: r^2 below floor]"
            lines.append(
                f"  rate {r.rate.rate:.6g} on [{r.rate.window[0]:g}, {r.rate.window[1]:g}], r^2 {r.rate.r_squared:.6f}{tag}"
            )
        lines.append(f"  final error {r.final_error:.6e}")
    lines += ["", "gain-bound report", res.bounds.rstrip("\n")]
    return "\n".join(lines) + "\n"


# -- sweeps

SWEEP_HEADER = ["value", *SUMMARY_HEADER]


def sweep(cfg: ExperimentConfig, parameter: str, values, out=None):
    """One run per value of a numeric config field; per-run failures are recorded.

    Returns a list of (value, {algorithm: AlgorithmResult}).  With ``out`` set,
    writes sweep.csv plus error CSVs under one subdirectory per value.
    """
    cur = cfg.get(parameter)
    numeric = isinstance(cur, (int, float)) and not isinstance(cur, bool)
    if not numeric and not (cur is None and parameter.endswith("kappa")):
        raise RunError(f"sweep parameter {parameter!r} is not numeric")
    table = []
    for v in values:
        c = cfg.with_value(parameter, v)
        try:
            r = run(c, raise_on_error=False).results
        except Exception as exc:  # problem construction failed: record and continue
            r = {a: AlgorithmResult(a, status=f"error: {exc}") for a in c.algorithms}
        table.append((c.get(parameter), r))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for v, r in table:
            rows += [[v, *row] for row in summary_rows(r)]
            sub = out / f"{parameter}={_fmt(v)}"
            sub.mkdir(exist_ok=True)
            for name, ar in r.items():
                if ar.ok:
                    write_csv(sub / f"{name}_error.csv", ["t", "error"], np.column_stack([ar.trajectory.times, ar.errors]))
        write_table(out / "sweep.csv", SWEEP_HEADER, rows)
    return table


def min_stabilizing_kp(algorithm, graph: Graph, ensemble: CostEnsemble, k_I: float, kappa=None, mode="A",
                       lo: float = 1e-4, hi: float = 1e4, rel_tol: float = 1e-3) -> float:
    """Smallest k_P (to rel_tol) with negative spectral abscissa, by bisection.

    Empirical and local: it assumes stability is monotone in k_P over [lo, hi].
    """
    def stable(k):
        s = NetworkSystem(algorithm, graph, ensemble, CouplingConfig(Mode(mode), k, k_I, kappa))
        return s.spectral_abscissa() < 0

    if not stable(hi):
        raise RunError(f"not stable even at k_P={hi:g}")
    if stable(lo):
        return lo
    while hi / lo - 1 > rel_tol:
        mid = math.sqrt(lo * hi)
        lo, hi = (lo, mid) if stable(mid) else (mid, hi)
    return hi


# -- churn

@dataclass(frozen=True)
class ChurnEvent:
    """Join or leave at time t.  ``agent`` is an original 0-based label; a join
    of a label that left earlier restores its cost and surviving neighbors.
    New agents need ``local`` and ``neighbors`` (labels)."""

    time: float
    kind: str
    agent: int
    local: object = None
    neighbors: tuple | None = None


def parse_events(text: str) -> list:
    """'25 leave 3; 40 join 3' with 1-based agent labels."""
    events = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        tok = part.split()
        if len(tok) != 3 or tok[1] not in ("join", "leave"):
            raise RunError(f"bad churn event {part!r}; expected '<time> join|leave <agent>'")
        events.append(ChurnEvent(float(tok[0]), tok[1], int(tok[2]) - 1))
    return sorted(events, key=lambda e: e.time)


@dataclass
class ChurnResult:
    algorithm: str
    segments: list              # (t_start, Trajectory, NetworkSystem, w_star)
    times: np.ndarray
    errors: np.ndarray
    final_error: float
    w_star: np.ndarray
    rate: RateEstimate | None
    status: str = "ok"


def _to_event(ev: ChurnEvent, labels: list, graph0: Graph, ens0: CostEnsemble):
    if ev.kind == "leave":
        if ev.agent not in labels:
            raise RunError(f"agent {ev.agent + 1} is not in the network at t={ev.time:g}")
        return Leave(labels.index(ev.agent)), [a for a in labels if a != ev.agent]
    if ev.agent in labels:
        raise RunError(f"agent {ev.agent + 1} is already in the network at t={ev.time:g}")
    if ev.local is not None:
        local, nbr_labels = ev.local, ev.neighbors or ()
    elif ev.agent < ens0.n_agents:
        local, nbr_labels = ens0.locals[ev.agent], graph0.neighbors(ev.agent)
    else:
        raise RunError(f"new agent {ev.agent + 1} needs a local cost and neighbors")
    nbrs = [labels.index(j) for j in nbr_labels if j in labels]
    pos = sum(1 for a in labels if a < ev.agent)
    new_labels = labels[:pos] + [ev.agent] + labels[pos:]
    return Join(local, tuple(nbrs), pos), new_labels


def churn_scenario(cfg: ExperimentConfig, events=None, out=None) -> dict:
    """Piecewise integration with network re-assembly at each event.

    Distributed algorithms only; the error metric is measured against the
    minimizer of the ensemble that is current at each time.
    """
    cfg.validate()
    events = parse_events(cfg.churn.events) if events is None else sorted(events, key=lambda e: e.time)
    graph0, ens0 = build_problem(cfg)
    W0, V0 = initial_agents(cfg, ens0.n_agents, ens0.dim)
    s = cfg.solver
    results = {}
    for name in cfg.algorithms:
        alg = Algorithm(name)
        if not alg.distributed:
            log.info("churn skips centralized %s", name)
            continue
        system = assemble(alg, graph0, ens0, resolve_gains(cfg, alg, graph0, ens0))
        state = initial_state(system, W0, V0)
        h = choose_step(system, s.h)
        every = s.record_every * max(1, int(round((s.h or 1e-3) / h)))
        labels = list(range(ens0.n_agents))
        t0, segs, times, errs = 0.0, [], [], []
        bounds = [e.time for e in events if 0 < e.time < s.t_end] + [s.t_end]
        todo = [e for e in events if 0 < e.time < s.t_end]
        try:
            for t1 in bounds:
                steps = int(round((t1 - t0) / h))
                if steps > 0:
                    traj = integrate(system, state, h=h, t_end=steps * h, record_every=every)
                    w_star = system.optimum()
                    e = error_metric(traj, w_star, system.agent_outputs)
                    segs.append((t0, traj, system, w_star))
                    times.append(traj.times + t0)
                    errs.append(e)
                    state = traj.final
                t0 = t0 + steps * h
                while todo and todo[0].time <= t1 and t1 < s.t_end:
                    ev = todo.pop(0)
                    net_ev, labels = _to_event(ev, labels, graph0, ens0)
                    system, state = join_leave(system, net_ev, state)
        except (DivergenceError, RunError, ValueError) as exc:
            raise RunError(f"churn {name} failed at t={t0:g}: {exc}") from exc
        T, Er = np.concatenate(times), np.concatenate(errs)
        last_t0, last_traj = segs[-1][0], segs[-1][1]
        rate = _fit(last_traj.times + last_t0, errs[-1], cfg.r2_floor)
        results[name] = ChurnResult(name, segs, T, Er, float(Er[-1]), segs[-1][3], rate)
    if out is not None:
        write_churn(results, cfg, Path(out))
    return results


def write_churn(results: dict, cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, r in results.items():
        write_csv(out / f"{name}_error.csv", ["t", "error"], np.column_stack([r.times, r.errors]))
        if cfg.write_states:
            for k, (t0, traj, system, _) in enumerate(r.segments):
                write_csv(
                    out / f"{name}_segment{k}_states.csv",
                    ["t", *state_columns(system)],
                    np.column_stack([traj.times + t0, traj.states]),
                )
        rows.append([name, *_rate_fields(r.rate), r.final_error, r.status])
    write_table(out / "summary.csv", SUMMARY_HEADER, rows)
