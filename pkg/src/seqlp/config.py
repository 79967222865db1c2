"""Run configuration: one INI file with model, design, grid, lp, sim and output sections.

Example::

    [model]
    type = ar1
    a0 = 0
    a1 = 1
    sigma = 1

    [design]
    gamma0 = 0.041
    gamma1 = 0.0535

    [grid]
    m_z = 201
    m_theta = 201

    [sim]
    runs = 100000
    seed = 12345
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Optional, Tuple

from .models import Ar1, DomainError, IidGaussian, ModelSpec, TwoStateChain


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class ModelSection:
    type: str = "iid"
    mu: float = 1.0
    sigma: float = 1.0
    p0: Tuple[float, float] = (0.5, 0.5)
    p1: Tuple[Tuple[float, float], Tuple[float, float]] = ((0.8, 0.2), (0.2, 0.8))
    a0: float = 0.0
    a1: float = 1.0
    theta0: Optional[float] = None

    def build(self) -> ModelSpec:
        if self.type == "iid":
            return IidGaussian(self.mu, self.sigma)
        if self.type == "chain":
            theta0 = 1 if self.theta0 is None else int(self.theta0)
            return TwoStateChain(self.sigma, self.p0, self.p1, theta0)
        if self.type == "ar1":
            return Ar1(self.a0, self.a1, self.sigma, 0.0 if self.theta0 is None else float(self.theta0))
        raise DomainError(f"unknown model type {self.type!r}")


@dataclass(frozen=True)
class DesignSection:
    gamma0: float = 0.1
    gamma1: float = 0.1
    regularization_c: Optional[float] = None
    method: str = "auto"

    @property
    def gamma(self) -> Tuple[float, float]:
        return (self.gamma0, self.gamma1)


@dataclass(frozen=True)
class GridSection:
    m_z: int = 201
    m_theta: int = 201
    beta: float = 0.5
    s_margin: Optional[float] = None
    theta_min: Optional[float] = None
    theta_max: Optional[float] = None


@dataclass(frozen=True)
class LpSection:
    tol: float = 1e-8
    max_iters: Optional[int] = None


@dataclass(frozen=True)
class SimSection:
    runs: int = 100_000
    seed: int = 12345
    max_samples: int = 100_000
    wald_gamma0: Optional[float] = None
    wald_gamma1: Optional[float] = None


@dataclass(frozen=True)
class OutputSection:
    directory: str = "run"
    formats: str = "csv,json"


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    design: DesignSection = field(default_factory=DesignSection)
    grid: GridSection = field(default_factory=GridSection)
    lp: LpSection = field(default_factory=LpSection)
    sim: SimSection = field(default_factory=SimSection)
    output: OutputSection = field(default_factory=OutputSection)

    def build_model(self) -> ModelSpec:
        return self.model.build()

    def grid_options(self) -> dict:
        g = self.grid
        opts = dict(m_z=g.m_z, beta=g.beta, gamma=self.design.gamma, s_margin=g.s_margin)
        if self.model.type == "ar1":
            opts["m_theta"] = g.m_theta
            if g.theta_min is not None or g.theta_max is not None:
                sigma = self.model.sigma
                lo = -6.0 * sigma if g.theta_min is None else g.theta_min
                hi = 6.0 * sigma if g.theta_max is None else g.theta_max
                opts["theta_bounds"] = (lo, hi)
        return opts

    @property
    def wald_gamma(self) -> Tuple[float, float]:
        s = self.sim
        return (
            self.design.gamma0 if s.wald_gamma0 is None else s.wald_gamma0,
            self.design.gamma1 if s.wald_gamma1 is None else s.wald_gamma1,
        )

    def with_overrides(self, output_dir: Optional[str] = None, seed: Optional[int] = None) -> "RunConfig":
        cfg = self
        if output_dir is not None:
            cfg = replace(cfg, output=replace(cfg.output, directory=str(output_dir)))
        if seed is not None:
            if seed < 0:
                raise ConfigError("seed must be nonnegative")
            cfg = replace(cfg, sim=replace(cfg.sim, seed=int(seed)))
        return cfg


_SECTIONS = {
    "model": ModelSection,
    "design": DesignSection,
    "grid": GridSection,
    "lp": LpSection,
    "sim": SimSection,
    "output": OutputSection,
}


def _line_map(text: str) -> Dict[Tuple[str, str], int]:
    """Line number of every ``(section, key)`` and of every section header."""
    lines: Dict[Tuple[str, str], int] = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped[0] in "#;":
            continue
        head = re.match(r"\[([^\]]+)\]", stripped)
        if head:
            section = head.group(1).strip().lower()
            lines.setdefault((section, ""), no)
            continue
        key = re.match(r"([^=:]+?)\s*[=:]", stripped)
        if key and section is not None:
            lines[(section, key.group(1).strip().lower())] = no
    return lines


def _parse_pair(text: str):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError("expected two comma-separated numbers")
    return tuple(float(p) for p in parts)


def _parse_matrix(text: str):
    rows = [r for r in text.split(";")]
    if len(rows) != 2:
        raise ValueError("expected two rows separated by ';'")
    return tuple(_parse_pair(r) for r in rows)


_CONVERTERS = {
    ("model", "p0"): _parse_pair,
    ("model", "p1"): _parse_matrix,
    ("model", "type"): lambda v: v.strip().lower(),
    ("design", "method"): lambda v: v.strip().lower(),
    ("output", "directory"): str,
    ("output", "formats"): lambda v: v.strip(),
}

_INT_KEYS = {("grid", "m_z"), ("grid", "m_theta"), ("lp", "max_iters"), ("sim", "runs"), ("sim", "seed"), ("sim", "max_samples")}


def _convert(section: str, key: str, value: str):
    if (section, key) in _CONVERTERS:
        return _CONVERTERS[(section, key)](value)
    if value.strip().lower() in ("", "none"):
        return None
    if (section, key) in _INT_KEYS:
        return int(value)
    return float(value)


def parse_config(text: str, path: Optional[str] = None) -> RunConfig:
    """Parse and validate a configuration; errors carry the offending line."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text, source=path or "<config>")
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno, path) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, path) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any section", exc.lineno, path) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", line, path) from None
    lines = _line_map(text)
    parts = {}
    for section in parser.sections():
        name = section.strip().lower()
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]", lines.get((name, "")), path)
        cls = _SECTIONS[name]
        allowed = {f.name for f in fields(cls)}
        values = {}
        for key, raw in parser.items(section):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{name}]", lines.get((name, key)), path)
            try:
                values[key] = _convert(name, key, raw)
            except ValueError as exc:
                raise ConfigError(f"[{name}] {key}: cannot read {raw!r} ({exc})", lines.get((name, key)), path) from None
        parts[name] = cls(**values)
    cfg = RunConfig(**parts)
    _validate(cfg, lines, path)
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path=str(path)) from None
    return parse_config(text, str(path))


def _validate(cfg: RunConfig, lines, path) -> None:
    def fail(section, key, message):
        raise ConfigError(f"[{section}] {key}: {message}", lines.get((section, key), lines.get((section, ""))), path)

    for key in ("gamma0", "gamma1"):
        v = getattr(cfg.design, key)
        if not 0 < v < 1:
            fail("design", key, f"must lie in (0, 1), got {v}")
    c = cfg.design.regularization_c
    if c is not None and not 0 <= c < min(cfg.design.gamma):
        fail("design", "regularization_c", f"must satisfy 0 <= c < min(gamma), got {c}")
    if cfg.design.method not in ("auto", "direct", "decomposition"):
        fail("design", "method", f"must be auto, direct or decomposition, got {cfg.design.method!r}")
    if cfg.model.type not in ("iid", "chain", "ar1"):
        fail("model", "type", f"must be iid, chain or ar1, got {cfg.model.type!r}")
    try:
        cfg.build_model()
    except DomainError as exc:
        fail("model", "type", str(exc))
    for key in ("m_z", "m_theta"):
        v = getattr(cfg.grid, key)
        if v < 3 or v % 2 == 0:
            fail("grid", key, f"must be odd and at least 3, got {v}")
    if not cfg.grid.beta > 0:
        fail("grid", "beta", "must be positive")
    if cfg.grid.s_margin is not None and not cfg.grid.s_margin > 0:
        fail("grid", "s_margin", "must be positive")
    lo, hi = cfg.grid.theta_min, cfg.grid.theta_max
    if lo is not None and hi is not None and not lo < hi:
        fail("grid", "theta_max", "must exceed theta_min")
    if not cfg.lp.tol > 0:
        fail("lp", "tol", "must be positive")
    if cfg.lp.max_iters is not None and cfg.lp.max_iters < 1:
        fail("lp", "max_iters", "must be positive")
    if cfg.sim.runs < 1:
        fail("sim", "runs", "must be at least 1")
    if not 0 <= cfg.sim.seed < 2**64:
        fail("sim", "seed", "must lie in [0, 2**64)")
    if cfg.sim.max_samples < 1:
        fail("sim", "max_samples", "must be at least 1")
    for key in ("wald_gamma0", "wald_gamma1"):
        v = getattr(cfg.sim, key)
        if v is not None and not 0 < v < 1:
            fail("sim", key, f"must lie in (0, 1), got {v}")
    if sum(cfg.wald_gamma) >= 1:
        fail("sim", "wald_gamma0", "Wald thresholds need gamma0 + gamma1 < 1")


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(_format(v) for v in value)
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    """INI text that parses back to ``cfg``."""
    out = []
    for name in _SECTIONS:
        section = getattr(cfg, name)
        out.append(f"[{name}]")
        for f in fields(section):
            out.append(f"{f.name} = {_format(getattr(section, f.name))}")
        out.append("")
    return "\n".join(out)
