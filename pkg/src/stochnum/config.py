"""Run configuration: an INI-style key/value file with a fixed schema.

Sections and keys (defaults in brackets)::

    [topology]  rows [4], cols [4], interference [two-hop], traffic_seed [1],
                flows (optional "src>dst, ..." list overriding random traffic),
                links (optional "u>v, ..." directed links replacing the grid)
    [channel]   model [ltf], beta [100], gamma [paper-gamma 70], delta [20],
                x0 [gamma]; for model = stf: aI, aQ, bI, bQ, cI, cQ, xI0, xQ0
    [time]      s [0], T [1], n [500]
    [mc]        M [200], seed [0]
    [problem]   mode [P2], power_control [no], scheduling [no], utility [log],
                V [0.5], N0 [0.1], B [1e6], P_fixed [2], P_min [1], P_max [3],
                P_i_max [3], lambda_max [1], R_max [1]
    [solver]    A_prime [0.1], tol [0.001], window [8], max_iters [400000], init [1]
    [outputs]   directory [results], emit_paths [no], emit_svg [yes]

Coefficient functions are written as ``<kind> <args>``::

    100                                   constant
    constant 100
    paper-gamma 70                        base level; optional amplitude=, decay=, omega=
    sinusoid offset=35 amplitude=15 omega=31.4159
    piecewise values=10,100,500 breaks=0.3333,0.6667

Sinusoid phases and piecewise breaks use normalised time u = (t - s)/(T - s),
so a schedule keeps its shape when T changes.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import channel_sde as ch
from .layer_subproblems import ALPHA_FAIR, LOG, LOG_OVER_TIME, SIGMOID, PowerCost, Utility
from .net_model import NODE_EXCLUSIVE, TWO_HOP

OUTPUT_ENV = "STOCHNUM_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TopologyConfig:
    rows: int = 4
    cols: int = 4
    interference: str = TWO_HOP
    traffic_seed: int = 1
    flows: str = ""
    links: str = ""


@dataclass(frozen=True)
class ChannelConfig:
    model: str = "ltf"
    beta: str = "100"
    gamma: str = "paper-gamma 70"
    delta: str = "20"
    x0: str = "gamma"
    aI: str = "-50"
    aQ: str = "-50"
    bI: str = "0.001"
    bQ: str = "0.001"
    cI: float = 1.0
    cQ: float = 1.0
    xI0: float = 0.001
    xQ0: float = 0.0


@dataclass(frozen=True)
class TimeConfig:
    s: float = 0.0
    T: float = 1.0
    n: int = 500


@dataclass(frozen=True)
class McConfig:
    M: int = 200
    seed: int = 0


@dataclass(frozen=True)
class ProblemConfig:
    mode: str = "P2"
    power_control: bool = False
    scheduling: bool = False
    utility: str = LOG
    V: float = 0.5
    N0: float = 0.1
    B: float = 1e6
    P_fixed: float = 2.0
    P_min: float = 1.0
    P_max: float = 3.0
    P_i_max: float = 3.0
    lambda_max: float = 1.0
    R_max: float = 1.0


@dataclass(frozen=True)
class SolverConfig:
    A_prime: float = 0.1
    tol: float = 1e-3
    window: int = 8
    max_iters: int = 400_000
    init: float = 1.0


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "results"
    emit_paths: bool = False
    emit_svg: bool = True


@dataclass(frozen=True)
class RunConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    mc: McConfig = field(default_factory=McConfig)
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    name: str = "run"

    def __post_init__(self):
        validate(self)

    def with_values(self, **sections) -> "RunConfig":
        """Copy with some keys replaced, e.g. ``with_values(channel={"delta": "5"})``."""
        out = {}
        for f in fields(self):
            cur = getattr(self, f.name)
            if f.name in sections:
                cur = sections[f.name] if f.name == "name" else replace(cur, **sections[f.name])
            out[f.name] = cur
        return RunConfig(**out)

    def output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.outputs.directory)

    def as_dict(self) -> dict:
        return asdict(self)

    # -- builders for the numerical objects --------------------------------------

    def coefficient(self, text: str) -> ch.CoefficientFn:
        return parse_coefficient(text, self.time.s, self.time.T)

    def channel_model(self):
        c, t = self.channel, self.time
        if c.model == "stf":
            return ch.StfChannelModel(self.coefficient(c.aI), self.coefficient(c.aQ),
                                      self.coefficient(c.bI), self.coefficient(c.bQ),
                                      c.cI, c.cQ, c.xI0, c.xQ0)
        gamma = self.coefficient(c.gamma)
        x0 = float(gamma(t.s)) if c.x0.strip() == "gamma" else float(c.x0)
        return ch.LtfChannelModel(self.coefficient(c.beta), gamma, self.coefficient(c.delta),
                                  x0, span=(t.s, t.T))

    def grid(self) -> ch.TimeGrid:
        return ch.TimeGrid(self.time.s, self.time.T, self.time.n)

    def utility(self) -> Utility:
        kind, kw = _split_args(self.problem.utility)
        return Utility(kind, **{k: float(v) for k, v in kw.items()})

    def cost(self) -> PowerCost:
        return PowerCost("quadratic", self.problem.V)


_SECTIONS = {"topology": TopologyConfig, "channel": ChannelConfig, "time": TimeConfig,
             "mc": McConfig, "problem": ProblemConfig, "solver": SolverConfig,
             "outputs": OutputConfig}


def _split_args(text: str) -> tuple[str, dict[str, str]]:
    parts = text.split()
    if not parts:
        raise ConfigError("empty specification")
    kw = {}
    for p in parts[1:]:
        if "=" not in p:
            raise ConfigError(f"expected key=value, got {p!r} in {text!r}")
        k, v = p.split("=", 1)
        kw[k] = v
    return parts[0], kw


def parse_pairs(text: str) -> list[tuple[int, int]]:
    """``"0>1, 1>2"`` -> [(0, 1), (1, 2)]."""
    out = []
    for item in text.replace(";", ",").split(","):
        item = item.strip()
        if item:
            a, b = item.split(">")
            out.append((int(a), int(b)))
    return out


def parse_coefficient(text: str, s: float, T: float) -> ch.CoefficientFn:
    text = text.strip()
    try:
        return ch.CoefficientFn.constant(float(text))
    except ValueError:
        pass
    head, *rest = text.split()
    try:
        if head == "constant":
            return ch.CoefficientFn.constant(float(rest[0]))
        if head == ch.PAPER_GAMMA:
            base = float(rest[0])
            _, kw = _split_args(" ".join(["x"] + rest[1:]))
            return ch.CoefficientFn.paper_gamma(base, s, T, **{k: float(v) for k, v in kw.items()})
        _, kw = _split_args(text)
        if head == ch.SINUSOID:
            return ch.CoefficientFn.sinusoid(float(kw["offset"]), float(kw["amplitude"]),
                                             float(kw["omega"]), s, T)
        if head in ("piecewise", ch.PIECEWISE):
            values = [float(v) for v in kw["values"].split(",")]
            fracs = [float(b) for b in kw["breaks"].split(",")] if kw.get("breaks") else []
            return ch.CoefficientFn.piecewise(values, [s + f * (T - s) for f in fracs])
    except (IndexError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad coefficient {text!r}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"bad coefficient {text!r}: {exc}") from None
    raise ConfigError(f"unknown coefficient kind {head!r}")


def _convert(cls, key: str, raw: str):
    typ = {f.name: f.type for f in fields(cls)}[key]
    try:
        if typ in ("int", int):
            return int(float(raw)) if float(raw).is_integer() else _bad(key, raw)
        if typ in ("float", float):
            return float(raw)
        if typ in ("bool", bool):
            low = raw.strip().lower()
            if low in ("1", "yes", "true", "on"):
                return True
            if low in ("0", "no", "false", "off"):
                return False
            return _bad(key, raw)
    except ValueError:
        return _bad(key, raw)
    return raw.strip()


def _bad(key, raw):
    raise ConfigError(f"invalid value {raw!r} for {key}")


def loads(text: str, name: str = "run") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case sensitive (aI, N0, ...)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    sections = {}
    for sec in parser.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        cls = _SECTIONS[sec]
        known = {f.name for f in fields(cls)}
        values = {}
        for key, raw in parser.items(sec):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            values[key] = _convert(cls, key, raw)
        sections[sec] = cls(**values)
    return RunConfig(**sections, name=name)


def load(path) -> RunConfig:
    path = Path(path)
    return loads(path.read_text(), name=path.stem)


def dumps(cfg: RunConfig) -> str:
    lines = []
    for sec in _SECTIONS:
        lines.append(f"[{sec}]")
        for key, val in asdict(getattr(cfg, sec)).items():
            if isinstance(val, bool):
                val = "yes" if val else "no"
            lines.append(f"{key} = {val}")
        lines.append("")
    return "\n".join(lines)


def validate(cfg: RunConfig) -> None:
    """Schema and range checks; raises ConfigError before any computation."""
    t, p, s, top, c = cfg.time, cfg.problem, cfg.solver, cfg.topology, cfg.channel
    if not (t.T > t.s >= 0):
        raise ConfigError(f"need T > s >= 0 (got s={t.s}, T={t.T})")
    if t.n < 1:
        raise ConfigError("n must be >= 1")
    if cfg.mc.M < 1:
        raise ConfigError("M must be >= 1")
    if top.rows < 1 or top.cols < 1:
        raise ConfigError("rows and cols must be >= 1")
    if top.interference not in (TWO_HOP, NODE_EXCLUSIVE):
        raise ConfigError(f"unknown interference model {top.interference!r}")
    for key in ("flows", "links"):
        try:
            pairs = parse_pairs(getattr(top, key))
        except ValueError:
            raise ConfigError(f"{key} must look like '0>1, 1>2', got {getattr(top, key)!r}") from None
        if any(a < 0 or b < 0 for a, b in pairs):
            raise ConfigError(f"negative node id in {key}")
    if top.links and not top.flows:
        raise ConfigError("an explicit link list needs an explicit flows list")
    if c.model not in ("ltf", "stf"):
        raise ConfigError(f"channel model must be ltf or stf, got {c.model!r}")
    if p.mode not in ("P1", "P2"):
        raise ConfigError(f"mode must be P1 or P2, got {p.mode!r}")
    if p.mode == "P1" and p.scheduling:
        raise ConfigError("P1 (non-orthogonal access) has no scheduling")
    if p.mode == "P1" and p.power_control and p.P_min > 0:
        raise ConfigError("P1 power control needs P_min = 0")
    for key in ("V", "N0", "B", "P_max", "P_i_max", "R_max"):
        if not getattr(p, key) > 0:
            raise ConfigError(f"{key} must be > 0")
    if not 0 <= p.P_min <= p.P_max:
        raise ConfigError("need 0 <= P_min <= P_max")
    if not 0 <= p.P_fixed <= p.P_max:
        raise ConfigError("need 0 <= P_fixed <= P_max")
    if p.lambda_max < 0:
        raise ConfigError("lambda_max must be >= 0")
    kind, _ = _split_args(p.utility)
    if kind not in (LOG, ALPHA_FAIR, SIGMOID, LOG_OVER_TIME):
        raise ConfigError(f"unknown utility {kind!r}")
    if kind == LOG_OVER_TIME and t.s <= 0:
        raise ConfigError("utility log(lambda)/t needs s > 0")
    try:
        cfg.utility()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad utility {p.utility!r}: {exc}") from None
    if s.A_prime <= 0 or s.tol <= 0:
        raise ConfigError("A_prime and tol must be > 0")
    if s.window < 1 or s.max_iters < 1:
        raise ConfigError("window and max_iters must be >= 1")
    if s.init < 0 or not math.isfinite(s.init):
        raise ConfigError("init must be a finite non-negative number")
    names = ("beta", "gamma", "delta") if c.model == "ltf" else ("aI", "aQ", "bI", "bQ")
    for key in names:
        parse_coefficient(getattr(c, key), t.s, t.T)
    if c.model == "ltf" and c.x0.strip() != "gamma":
        try:
            float(c.x0)
        except ValueError:
            raise ConfigError(f"x0 must be a number or 'gamma', got {c.x0!r}") from None
    try:
        cfg.channel_model()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
