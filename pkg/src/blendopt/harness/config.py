"""Flat key-value experiment configs with dotted section keys.

Grammar, one setting per line::

    # comment
    section.key = value

Blank lines and ``#`` comments are ignored, values may carry trailing
comments, lists are comma separated.  Unknown keys are an error.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


ALL_ALGORITHMS = ("DistGD", "DistHBState", "DistHBOutput", "CentralGD", "CentralHB")


@dataclass(frozen=True)
class ProblemSpec:
    n_agents: int = 12
    dim: int = 6
    max_eig: float = 1.0
    condition: float = 100.0
    spread: float = 0.02
    negative_depth: float = 0.02
    seed: int = 0
    file: str | None = None


@dataclass(frozen=True)
class GraphSpec:
    edge_prob: float = 0.2
    seed: int = 0
    file: str | None = None


@dataclass(frozen=True)
class GainSpec:
    rule: str = "explicit"       # explicit | beta | bound
    k_P: float = 1.0
    k_I: float = 0.5
    kappa: float | None = None   # default: k_I
    beta: float = 4.0
    bound_margin: float = 1.05   # bound rule: k_P = margin * k_P**, phi* = bound / 2
    mode: str = "A"


@dataclass(frozen=True)
class SolverSpec:
    h: float | None = 1e-3       # "auto": 1e-3 halved until below half the RK4 stability estimate
    t_end: float = 50.0
    record_every: int = 10


@dataclass(frozen=True)
class InitSpec:
    seed: int = 0
    velocity: str = "normal"     # normal | zero, heavy-ball auxiliary states


@dataclass(frozen=True)
class LyapunovSpec:
    c1: float = 1.0
    c3: float = 1.0
    upsilon_frac: float = 0.5


@dataclass(frozen=True)
class ChurnSpec:
    events: str = ""             # "25 leave 3; 40 join 3" with 1-indexed agent labels


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    graph: GraphSpec = field(default_factory=GraphSpec)
    gains: GainSpec = field(default_factory=GainSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    init: InitSpec = field(default_factory=InitSpec)
    lyapunov: LyapunovSpec = field(default_factory=LyapunovSpec)
    churn: ChurnSpec = field(default_factory=ChurnSpec)
    algorithms: tuple = ALL_ALGORITHMS
    output_dir: str = "out"
    write_states: bool = True    # full state CSV per algorithm; error CSVs are always written
    r2_floor: float = 0.99

    def get(self, key: str):
        sec, name = _split_key(key)
        if name is None:
            return getattr(self, _TOP[sec])
        return getattr(getattr(self, sec), name)

    def with_value(self, key: str, value) -> "ExperimentConfig":
        """Copy with ``key`` set; string values are parsed with the key's type."""
        sec, name = _split_key(key)
        if name is None:
            attr = _TOP[sec]
            if isinstance(value, str):
                value = _coerce_top(attr, value)
            return dataclasses.replace(self, **{attr: value})
        part = getattr(self, sec)
        if isinstance(value, str):
            value = _coerce(type(part), name, value)
        return dataclasses.replace(self, **{sec: dataclasses.replace(part, **{name: value})})

    def with_seed(self, seed: int) -> "ExperimentConfig":
        cfg = self.with_value("problem.seed", seed).with_value("graph.seed", seed)
        return cfg.with_value("init.seed", seed)

    def validate(self) -> None:
        from ..network import Algorithm

        for a in self.algorithms:
            try:
                Algorithm(a)
            except ValueError:
                raise ConfigError(f"unknown algorithm {a!r}; choose from {', '.join(ALL_ALGORITHMS)}") from None
        g = self.gains
        if g.rule not in ("explicit", "beta", "bound"):
            raise ConfigError(f"gains.rule must be explicit, beta or bound, got {g.rule!r}")
        if g.mode not in ("A", "B"):
            raise ConfigError(f"coupling.mode must be A or B, got {g.mode!r}")
        if g.rule == "explicit" and (g.k_P <= 0 or g.k_I <= 0 or (g.kappa is not None and g.kappa <= 0)):
            raise ConfigError("gains must be positive")
        if g.rule == "beta" and g.beta <= 0:
            raise ConfigError("gains.beta must be positive")
        for f in (self.problem.file, self.graph.file):
            if f is not None and not Path(f).exists():
                raise ConfigError(f"referenced file does not exist: {f}")
        s = self.solver
        if (s.h is not None and s.h <= 0) or s.t_end <= 0 or s.record_every < 1:
            raise ConfigError("solver.h, solver.t_end must be positive and solver.record_every >= 1")
        if self.init.velocity not in ("normal", "zero"):
            raise ConfigError(f"init.velocity must be normal or zero, got {self.init.velocity!r}")


# top-level keys and the section aliases that map onto other dataclasses
_TOP = {"algorithms": "algorithms", "output": "output_dir", "states": "write_states", "r2_floor": "r2_floor"}
_ALIASES = {
    "coupling.mode": "gains.mode",
    "output.dir": "output",
    "output.states": "states",
    "rate.r2_floor": "r2_floor",
}
_SECTIONS = ("problem", "graph", "gains", "solver", "init", "lyapunov", "churn")


def _split_key(key: str):
    key = _ALIASES.get(key, key)
    if key in _TOP:
        return key, None
    if "." not in key:
        raise ConfigError(f"unknown config key {key!r}")
    sec, name = key.split(".", 1)
    if sec not in _SECTIONS:
        raise ConfigError(f"unknown config section {sec!r} in {key!r}")
    cls = type(getattr(ExperimentConfig(), sec))
    if name not in {f.name for f in dataclasses.fields(cls)}:
        raise ConfigError(f"unknown config key {key!r}")
    return sec, name


def _coerce(cls, name: str, raw: str):
    fld = {f.name: f for f in dataclasses.fields(cls)}[name]
    typ = str(fld.type)
    raw = raw.strip()
    if cls is SolverSpec and name == "h" and raw.lower() == "auto":
        return None
    if raw.lower() in ("none", "") and "None" in typ:
        return None
    try:
        if typ.startswith("int"):
            return int(raw)
        if typ.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{cls.__name__.lower()}.{name}: cannot parse {raw!r} as {typ}") from None
    return raw


def _coerce_top(attr: str, raw: str):
    if attr == "algorithms":
        return tuple(a.strip() for a in raw.split(",") if a.strip())
    if attr == "r2_floor":
        return float(raw)
    if attr == "write_states":
        low = raw.strip().lower()
        if low not in ("true", "false", "yes", "no", "1", "0"):
            raise ConfigError(f"output.states must be true or false, got {raw!r}")
        return low in ("true", "yes", "1")
    return raw.strip()


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        try:
            cfg = cfg.with_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for sec in _SECTIONS:
        part = getattr(cfg, sec)
        for f in dataclasses.fields(part):
            key = "coupling.mode" if (sec, f.name) == ("gains", "mode") else f"{sec}.{f.name}"
            v = getattr(part, f.name)
            if v is None:
                v = "auto" if (sec, f.name) == ("solver", "h") else "none"
            lines.append(f"{key} = {v}")
    lines.append(f"algorithms = {', '.join(cfg.algorithms)}")
    lines.append(f"output.dir = {cfg.output_dir}")
    lines.append(f"output.states = {str(cfg.write_states).lower()}")
    lines.append(f"rate.r2_floor = {cfg.r2_floor}")
    return "\n".join(lines) + "\n"
