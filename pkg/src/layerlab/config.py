"""Run configuration: a flat ``section.key = value`` text format.

Grammar (one entry per line)::

    # comment
    potential.name = two_channel
    potential.A    = 0.05
    continuation.L_list = 8, 12, 16, 24

Blank lines and ``#`` comments are ignored, keys are case sensitive,
duplicate and unknown keys are rejected, and every error names its line.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields

from .errors import ConfigInvalid


@dataclass
class PotentialConfig:
    name: str = "two_channel"
    A: float = 0.05


@dataclass
class Grid1DConfig:
    y_max: float | None = None  # None: max(20, 13.5 / gamma)
    n: int = 4001


@dataclass
class Grid2DConfig:
    y_max: float = 12.0
    n_y: int = 401
    per_unit: int = 16


@dataclass
class SolverConfig:
    tol_1d: float = 1e-10
    tol_2d: float = 1e-8
    tol_newton: float = 1e-12
    max_iters: int = 200


@dataclass
class StripConfig:
    L: float = 12.0
    eta: float = 0.0
    branch_left: int = 0
    branch_right: int | None = None  # None: 1 when two connections exist, else 0


@dataclass
class SweepConfig:
    eta_min: float = -1.0
    eta_max: float = 1.0
    eta_steps: int = 5
    eta_tol: float = 1e-3


@dataclass
class EffpotConfig:
    battery_size: int = 20
    n_seeds: int = 30
    p_values: list = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])


@dataclass
class LayersConfig:
    p: float | None = None  # None: q0


@dataclass
class ContinuationConfig:
    L_list: list = field(default_factory=lambda: [8.0, 12.0, 16.0, 24.0])


@dataclass
class OutputConfig:
    dir: str = "out"
    format: str = "csv"


@dataclass
class RunConfig:
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    grid1d: Grid1DConfig = field(default_factory=Grid1DConfig)
    grid2d: Grid2DConfig = field(default_factory=Grid2DConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    strip: StripConfig = field(default_factory=StripConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    effpot: EffpotConfig = field(default_factory=EffpotConfig)
    layers: LayersConfig = field(default_factory=LayersConfig)
    continuation: ContinuationConfig = field(default_factory=ContinuationConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def flat(self) -> dict[str, object]:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if dataclasses.is_dataclass(val):
                for g in fields(val):
                    out[f"{f.name}.{g.name}"] = getattr(val, g.name)
            else:
                out[f.name] = val
        return out

    def render(self) -> str:
        """Config text with every default filled in (round-trips through validate_config)."""
        lines = []
        for k, v in self.flat().items():
            if v is None or (k == "potential.A" and self.potential.name != "two_channel"):
                continue
            if isinstance(v, list):
                v = ", ".join(_fmt(x) for x in v)
            else:
                v = _fmt(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


_POTENTIALS = ("scalar_quartic", "two_channel")
_FORMATS = ("csv", "json")


def _convert(raw: str, typ, key: str, lineno: int):
    t = str(typ)
    try:
        if "list" in t:
            items = [s.strip() for s in raw.split(",") if s.strip()]
            return [float(s) for s in items]
        if "float" in t:
            x = float(raw)
            if not math.isfinite(x):
                raise ValueError("not finite")
            return x
        if "int" in t:
            return int(raw)
        return raw
    except ValueError as exc:
        raise ConfigInvalid(f"line {lineno}: bad value for {key!r}: {raw!r} ({exc})") from None


def parse_config_text(text: str) -> dict[str, tuple[str, int]]:
    """key -> (raw value, line number)."""
    entries: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigInvalid(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, val = (part.strip() for part in s.split("=", 1))
        if not key:
            raise ConfigInvalid(f"line {lineno}: empty key")
        if key in entries:
            raise ConfigInvalid(f"line {lineno}: duplicate key {key!r} (first on line {entries[key][1]})")
        entries[key] = (val, lineno)
    return entries


def validate_config(text: str) -> RunConfig:
    cfg = RunConfig()
    known = {f.name: f for f in fields(cfg)}
    where: dict[str, int] = {}
    for key, (raw, lineno) in parse_config_text(text).items():
        parts = key.split(".")
        if len(parts) == 1 and parts[0] in known and not dataclasses.is_dataclass(getattr(cfg, parts[0])):
            setattr(cfg, parts[0], _convert(raw, known[parts[0]].type, key, lineno))
        elif len(parts) == 2 and parts[0] in known and dataclasses.is_dataclass(getattr(cfg, parts[0])):
            section = getattr(cfg, parts[0])
            sub = {f.name: f for f in fields(section)}
            if parts[1] not in sub:
                raise ConfigInvalid(f"line {lineno}: unknown key {key!r}")
            setattr(section, parts[1], _convert(raw, sub[parts[1]].type, key, lineno))
        else:
            raise ConfigInvalid(f"line {lineno}: unknown key {key!r}")
        where[key] = lineno
    _check(cfg, where)
    return cfg


def _check(cfg: RunConfig, where: dict[str, int]) -> None:
    def fail(key: str, msg: str):
        line = where.get(key)
        prefix = f"line {line}: " if line else ""
        raise ConfigInvalid(f"{prefix}{key}: {msg}")

    if cfg.potential.name not in _POTENTIALS:
        fail("potential.name", f"must be one of {_POTENTIALS}")
    if cfg.potential.name == "two_channel" and not cfg.potential.A > 0:
        fail("potential.A", "must be > 0")
    if cfg.potential.name == "scalar_quartic" and "potential.A" in where:
        fail("potential.A", "only valid for two_channel")
    if cfg.grid1d.y_max is not None and not cfg.grid1d.y_max > 0:
        fail("grid1d.y_max", "must be > 0")
    if cfg.grid1d.n < 3:
        fail("grid1d.n", "must be >= 3")
    if not cfg.grid2d.y_max > 0:
        fail("grid2d.y_max", "must be > 0")
    if cfg.grid2d.n_y < 3:
        fail("grid2d.n_y", "must be >= 3")
    if cfg.grid2d.per_unit < 2:
        fail("grid2d.per_unit", "must be >= 2")
    for k in ("tol_1d", "tol_2d", "tol_newton"):
        if not getattr(cfg.solver, k) > 0:
            fail(f"solver.{k}", "must be > 0")
    if cfg.solver.max_iters < 1:
        fail("solver.max_iters", "must be >= 1")
    if not cfg.strip.L > 1:
        fail("strip.L", "must be > 1")
    if cfg.strip.branch_left < 0:
        fail("strip.branch_left", "must be >= 0")
    if cfg.strip.branch_right is not None and cfg.strip.branch_right < 0:
        fail("strip.branch_right", "must be >= 0")
    if not cfg.sweep.eta_min < cfg.sweep.eta_max:
        fail("sweep.eta_min", "must be < sweep.eta_max")
    if cfg.sweep.eta_steps < 3:
        fail("sweep.eta_steps", "must be >= 3")
    if not cfg.sweep.eta_tol > 0:
        fail("sweep.eta_tol", "must be > 0")
    if cfg.effpot.battery_size < 1:
        fail("effpot.battery_size", "must be >= 1")
    if cfg.effpot.n_seeds < 1:
        fail("effpot.n_seeds", "must be >= 1")
    if not cfg.effpot.p_values or any(not p > 0 for p in cfg.effpot.p_values):
        fail("effpot.p_values", "must be a nonempty list of positive reals")
    if cfg.layers.p is not None and not cfg.layers.p > 0:
        fail("layers.p", "must be > 0")
    Ls = cfg.continuation.L_list
    if len(Ls) < 3 or any(not L > 1 for L in Ls) or len(set(Ls)) != len(Ls):
        fail("continuation.L_list", "needs at least three distinct lengths > 1")
    if cfg.output.format not in _FORMATS:
        fail("output.format", f"must be one of {_FORMATS}")
    if cfg.seed < 0:
        fail("seed", "must be >= 0")


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return validate_config("")
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path!r}: {exc}") from None
    return validate_config(text)
