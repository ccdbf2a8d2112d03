"""Run configuration: documented defaults, config-file parsing, and
range validation.

Config files are plain ``key = value`` lines with ``#`` comments.
Unknown keys are rejected with the full list of valid keys; every
value is range-checked, so parsing either yields a usable RunConfig or
a specific diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError


@dataclass
class RunConfig:
    """End-to-end pipeline settings.

    ``voxel`` is either a positive cell size in input units or the
    string "auto" (cell size estimated from point spacing).  ``T`` = 0
    means forward-only reconstruction with zero offsets.
    """

    K: int = 50
    eta0: float = 0.01
    p1: float = 0.8
    p2: float = 0.5
    angle: float = 120.0
    gamma0: float = 0.1
    decay: float = 0.7
    decay_period: int = 10
    T: int = 100
    voxel: float | str = "auto"
    chunk: int = 512
    seed: int = 0
    pseudo_gate: float = 0.5
    offset_init: str = "repulsion"
    samples: int = 100000
    fscore_tau: float = 0.01
    sharp_radius: float = 0.01
    sharp_angle: float = 30.0
    ef1_tau: float = 0.005

    def __post_init__(self):
        validate_config(self)

    def thresholds(self) -> tuple[float, float, float]:
        return (self.p1, self.p2, self.angle)


_INT_KEYS = {"K", "decay_period", "T", "chunk", "seed", "samples"}
_STR_KEYS = {"offset_init"}
VALID_KEYS = tuple(f.name for f in fields(RunConfig))


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key == "voxel":
        if raw == "auto":
            return "auto"
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"voxel must be a number or 'auto', got {raw!r}") from None
    if key in _STR_KEYS:
        return raw
    try:
        if key in _INT_KEYS:
            return int(raw)
        return float(raw)
    except ValueError:
        kind = "an integer" if key in _INT_KEYS else "a number"
        raise ConfigError(f"{key} must be {kind}, got {raw!r}") from None


def _check(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def validate_config(cfg: RunConfig) -> None:
    _check(cfg.K >= 3, f"K must be >= 3, got {cfg.K}")
    _check(cfg.eta0 > 0, f"eta0 must be positive, got {cfg.eta0}")
    _check(0 < cfg.p1 <= 1, f"p1 must be in (0, 1], got {cfg.p1}")
    _check(0 < cfg.p2 <= 1, f"p2 must be in (0, 1], got {cfg.p2}")
    _check(0 <= cfg.angle <= 180, f"angle must be in [0, 180] degrees, got {cfg.angle}")
    _check(cfg.gamma0 > 0, f"gamma0 must be positive, got {cfg.gamma0}")
    _check(0 < cfg.decay <= 1, f"decay must be in (0, 1], got {cfg.decay}")
    _check(cfg.decay_period >= 1, f"decay_period must be >= 1, got {cfg.decay_period}")
    _check(cfg.T >= 0, f"T must be >= 0, got {cfg.T}")
    if cfg.voxel != "auto":
        _check(isinstance(cfg.voxel, (int, float)) and cfg.voxel > 0,
               f"voxel must be positive or 'auto', got {cfg.voxel}")
    _check(cfg.chunk >= 1, f"chunk must be >= 1, got {cfg.chunk}")
    _check(0 <= cfg.pseudo_gate < 1, f"pseudo_gate must be in [0, 1), got {cfg.pseudo_gate}")
    _check(cfg.offset_init in ("repulsion", "zero"),
           f"offset_init must be 'repulsion' or 'zero', got {cfg.offset_init!r}")
    _check(cfg.samples >= 1, f"samples must be >= 1, got {cfg.samples}")
    _check(cfg.fscore_tau > 0, f"fscore_tau must be positive, got {cfg.fscore_tau}")
    _check(cfg.sharp_radius > 0, f"sharp_radius must be positive, got {cfg.sharp_radius}")
    _check(0 < cfg.sharp_angle <= 90,
           f"sharp_angle must be in (0, 90] degrees, got {cfg.sharp_angle}")
    _check(cfg.ef1_tau > 0, f"ef1_tau must be positive, got {cfg.ef1_tau}")


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """RunConfig from an optional config file plus overrides.

    Overrides (e.g. CLI flags) win over file values; both win over
    defaults.  Raises ConfigError naming the offending key/line.
    """
    values: dict = {}
    if path is not None:
        with open(path) as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(
                        f"{path}:{lineno}: expected 'key = value', got {line!r}")
                key, raw = (s.strip() for s in line.split("=", 1))
                if key not in VALID_KEYS:
                    raise ConfigError(
                        f"{path}:{lineno}: unknown key {key!r}; valid keys: "
                        + ", ".join(VALID_KEYS))
                values[key] = _parse_value(key, raw)
    if overrides:
        for key, val in overrides.items():
            if key not in VALID_KEYS:
                raise ConfigError(f"unknown config key {key!r}; valid keys: "
                                  + ", ".join(VALID_KEYS))
            if val is not None:
                values[key] = _parse_value(key, val) if isinstance(val, str) else val
    return RunConfig(**values)
