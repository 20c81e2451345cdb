"""Run configuration: TOML file with sections model, numerics, sim, sweep, output."""

from __future__ import annotations

import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .fundamental import DEFAULT_DX, DEFAULT_TOL
from .model import ModelError, ModelSpec
from .simulate import SimConfig

FORMATS = {"csv", "json"}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; the message names the location."""


@dataclass(frozen=True)
class Numerics:
    x_hi: float | None = None
    tol: float = DEFAULT_TOL
    grid_dx: float = DEFAULT_DX


@dataclass(frozen=True)
class SweepConfig:
    f0_range: tuple[float, float] = (0.0, 1.0)
    f1_range: tuple[float, float] = (0.0, 1.0)
    resolution: int = 20
    workers: int | None = None


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec
    numerics: Numerics = field(default_factory=Numerics)
    sim: SimConfig = field(default_factory=SimConfig)
    barrier: float | None = None
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        sim = {k: v for k, v in asdict(self.sim).items() if v is not None}
        if self.barrier is not None:
            sim["barrier"] = float(self.barrier)
        sweep = asdict(self.sweep)
        sweep["f0_range"] = list(sweep["f0_range"])
        sweep["f1_range"] = list(sweep["f1_range"])
        return {
            "model": self.model.to_dict(),
            "numerics": {k: v for k, v in asdict(self.numerics).items() if v is not None},
            "sim": sim,
            "sweep": {k: v for k, v in sweep.items() if v is not None},
            "output": {"directory": self.output.directory, "formats": list(self.output.formats)},
        }

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def replace(self, **kw) -> "RunConfig":
        d = {f: getattr(self, f) for f in ("model", "numerics", "sim", "barrier", "sweep", "output")}
        d.update(kw)
        return RunConfig(**d)


def _take(section: dict, name: str, allowed: set[str]) -> dict:
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"[{name}]: unknown keys {sorted(extra)}")
    return section


def _pos(where: str, v, integer: bool = False):
    try:
        x = int(v) if integer else float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, got {v!r}") from None
    if not (math.isfinite(x) and x > 0):
        raise ConfigError(f"{where}: must be positive, got {v!r}")
    return x


def _range(where: str, v) -> tuple[float, float]:
    if not (isinstance(v, (list, tuple)) and len(v) == 2):
        raise ConfigError(f"{where}: expected [lo, hi]")
    lo, hi = float(v[0]), float(v[1])
    if not hi > lo:
        raise ConfigError(f"{where}: range [{lo}, {hi}] is empty")
    return lo, hi


def from_dict(d: dict[str, Any]) -> RunConfig:
    _take(d, "root", {"model", "numerics", "sim", "sweep", "output"})
    if "model" not in d:
        raise ConfigError("missing [model] section")
    try:
        model = ModelSpec.from_dict(d["model"])
    except ModelError as exc:
        raise ConfigError(f"[model]: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[model]: {exc}") from None

    n = _take(dict(d.get("numerics", {})), "numerics", {"x_hi", "tol", "grid_dx"})
    numerics = Numerics(
        x_hi=_pos("numerics.x_hi", n["x_hi"]) if "x_hi" in n else None,
        tol=_pos("numerics.tol", n.get("tol", DEFAULT_TOL)),
        grid_dx=_pos("numerics.grid_dx", n.get("grid_dx", DEFAULT_DX)),
    )

    s = _take(dict(d.get("sim", {})), "sim", {"dt", "n_paths", "t_max", "seed", "x0", "bridge", "barrier"})
    seed = s.get("seed", 0)
    if not isinstance(seed, int) or not (0 <= seed < 2 ** 64):
        raise ConfigError(f"sim.seed: expected a 64-bit unsigned integer, got {seed!r}")
    sim = SimConfig(
        dt=_pos("sim.dt", s.get("dt", 1e-3)),
        n_paths=_pos("sim.n_paths", s.get("n_paths", 100_000), integer=True),
        t_max=_pos("sim.t_max", s["t_max"]) if "t_max" in s else None,
        seed=seed,
        x0=float(s.get("x0", 1.0)),
        bridge=bool(s.get("bridge", True)),
    )
    barrier = s.get("barrier")
    if barrier is not None and not float(barrier) >= 0:
        raise ConfigError("sim.barrier: must be nonnegative")

    w = _take(dict(d.get("sweep", {})), "sweep", {"f0_range", "f1_range", "resolution", "workers"})
    res = int(w.get("resolution", 20))
    if res < 2:
        raise ConfigError("sweep.resolution: must be at least 2")
    sweep = SweepConfig(
        f0_range=_range("sweep.f0_range", w.get("f0_range", [0.0, 1.0])),
        f1_range=_range("sweep.f1_range", w.get("f1_range", [0.0, 1.0])),
        resolution=res,
        workers=_pos("sweep.workers", w["workers"], integer=True) if "workers" in w else None,
    )

    o = _take(dict(d.get("output", {})), "output", {"directory", "formats"})
    formats = tuple(o.get("formats", ["csv", "json"]))
    bad = set(formats) - FORMATS
    if bad or not formats:
        raise ConfigError(f"output.formats: must be a nonempty subset of {sorted(FORMATS)}")
    output = OutputConfig(str(o.get("directory", "out")), formats)
    return RunConfig(model, numerics, sim, None if barrier is None else float(barrier), sweep, output)


def loads(text: str) -> RunConfig:
    try:
        d = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax: {exc}") from None
    return from_dict(d)


def load(path: str | os.PathLike) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{p}: {exc.strerror}") from None
    try:
        return loads(text)
    except ConfigError as exc:
        raise ConfigError(f"{p}: {exc}") from None


def ensure_output(directory: str | os.PathLike) -> Path:
    p = Path(directory)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output.directory {p}: {exc.strerror}") from None
    if not os.access(p, os.W_OK):
        raise ConfigError(f"output.directory {p} is not writable")
    return p
