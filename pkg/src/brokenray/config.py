"""Experiment configuration: defaults, ``key=value`` files, validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Any

from brokenray.geometry import InvalidInputError

MODELS = ("lambertian", "specular", "art")
ABSTRACT_MODES = ("off", "chained", "free")


@dataclass(frozen=True)
class ExperimentConfig:
    grid_n: int = 64
    domain_side: float = 512.0
    obstacle_side: float = 234.0
    transceivers_per_side: int = 1
    # None means one reflection point per cell length of obstacle boundary
    obstacle_spacing: float | None = None
    exclude_vertices: bool = False
    # drop unbroken chords that run along one side of the domain
    skip_boundary_chords: bool = True
    rays: int = 126050
    unbroken_fraction: float = 0.5
    model: str = "lambertian"
    function_id: int = 0
    K: float = 1e-3
    seed: int = 0
    abstract_mode: str = "off"
    partition_max_elements: int = 2
    partition_window: int = 64
    angle_tol: float = 0.02
    quadrature: float = 4.0
    tol: float = 1e-10
    # used only when max_updates is None
    sweeps: float = 3.0
    max_updates: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.grid_n < 1:
            raise InvalidInputError("grid_n must be >= 1")
        if not 0 < self.obstacle_side < self.domain_side:
            raise InvalidInputError("need 0 < obstacle_side < domain_side")
        if self.rays <= 0:
            raise InvalidInputError("rays must be positive")
        if not 0.0 <= self.unbroken_fraction <= 1.0:
            raise InvalidInputError("unbroken_fraction must lie in [0, 1]")
        if self.model not in MODELS:
            raise InvalidInputError(f"model must be one of {MODELS}")
        if self.abstract_mode not in ABSTRACT_MODES:
            raise InvalidInputError(f"abstract_mode must be one of {ABSTRACT_MODES}")
        if not 0 <= self.function_id <= 12:
            raise InvalidInputError("function_id must be in 0..12")
        if self.transceivers_per_side < 1:
            raise InvalidInputError("transceivers_per_side must be >= 1")
        if self.obstacle_spacing is not None and not 0 < self.obstacle_spacing < self.obstacle_side:
            raise InvalidInputError("obstacle_spacing must lie in (0, obstacle_side)")
        if not self.sweeps > 0:
            raise InvalidInputError("sweeps must be positive")
        if self.max_updates is not None and self.max_updates < 1:
            raise InvalidInputError("max_updates must be positive")
        if self.partition_max_elements < 1 or self.partition_window < 1:
            raise InvalidInputError("partition limits must be positive")

    @property
    def cell_size(self) -> float:
        return self.domain_side / self.grid_n

    @property
    def spacing(self) -> float:
        return self.obstacle_spacing if self.obstacle_spacing is not None else self.cell_size

    @property
    def n_u(self) -> int:
        if self.model == "art":
            return self.rays
        return int(round(self.rays * self.unbroken_fraction))

    @property
    def n_b(self) -> int:
        return self.rays - self.n_u

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str) -> Any:
    default = _FIELDS[name].default
    text = raw.strip()
    if name in ("obstacle_spacing", "max_updates") and text.lower() in ("", "none", "auto"):
        return None
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int) or name == "max_updates":
            return int(text)
        if isinstance(default, float) or name == "obstacle_spacing":
            return float(text)
    except ValueError as exc:
        raise InvalidInputError(f"bad value for {name}: {raw!r}") from exc
    return text


def parse_overrides(pairs: dict[str, str]) -> dict[str, Any]:
    out = {}
    for key, raw in pairs.items():
        name = key.strip().replace("-", "_")
        if name not in _FIELDS:
            raise InvalidInputError(f"unknown configuration key {key!r}")
        out[name] = _coerce(name, raw)
    return out


def read_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"{source}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value
    return parse_overrides(pairs)


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Defaults, then the file at ``path``, then keyword overrides."""
    values: dict[str, Any] = {}
    if path is not None:
        with open(path) as fh:
            values.update(read_config_text(fh.read(), str(path)))
    for key, value in overrides.items():
        if key not in _FIELDS:
            raise InvalidInputError(f"unknown configuration key {key!r}")
        values[key] = value
    return ExperimentConfig(**values)


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k}={'none' if v is None else v}\n" for k, v in cfg.as_dict().items())
