"""Run configuration: a flat ``key = value`` file with documented defaults."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .kernelgen import DEFAULT_SIGMA_MAJOR, DEFAULT_SIZE
from .phantom import SYNTHETIC_CALIBRATION, CohortConfig
from .regression import EvaluationConfig
from .volume_io import CalibrationPhantom

# keys that change where things go or how fast, not what is computed
UNHASHED = frozenset({"input_dir", "output_dir", "workers", "keep_intermediates"})


class ConfigError(ValueError):
    pass


class ConfigMismatchError(ValueError):
    """Artifacts produced under different configurations were mixed."""


@dataclass(frozen=True)
class RunConfig:
    # kernels (major:minor radius ratio is fixed at 4)
    kernel_size: int = DEFAULT_SIZE
    sigma_major: float = DEFAULT_SIGMA_MAJOR
    # calibration, clamping, binarisation
    hu_water: float = SYNTHETIC_CALIBRATION.hu_water
    hu_bone: float = SYNTHETIC_CALIBRATION.hu_bone
    ha_water: float = 0.0
    ha_bone: float = 200.0
    threshold: float = 400.0
    voi: str = "full"
    voi_scale: float = 0.75
    # features
    bins: int = 16
    include_background: bool = False
    # evaluation
    n_iter: int = 50
    train_fraction: float = 0.8
    seed: int = 0
    ridge: float = 1e-6
    alpha: float = 0.05
    # synthetic cohort, used when input_dir is empty
    cohort_n: int = 150
    cohort_size: int = 32
    fl_noise: float = 0.3
    gray_noise: float = 20.0
    # execution
    mode: str = "fast"
    workers: int = 1
    input_dir: str = ""
    output_dir: str = "amfkit_out"
    keep_intermediates: bool = False

    def __post_init__(self):
        if self.mode not in ("fast", "oracle"):
            raise ConfigError(f"mode must be fast or oracle, got {self.mode!r}")
        if self.voi not in ("full", "sphere"):
            raise ConfigError(f"voi must be full or sphere, got {self.voi!r}")
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and >= 3, got {self.kernel_size}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.evaluation()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def evaluation(self) -> EvaluationConfig:
        return EvaluationConfig(self.n_iter, self.train_fraction, self.seed, self.ridge, self.alpha)

    def calibration(self) -> CalibrationPhantom:
        return CalibrationPhantom(self.hu_water, self.hu_bone, self.ha_water, self.ha_bone)

    def cohort(self) -> CohortConfig:
        return CohortConfig(n=self.cohort_n, size=self.cohort_size, fl_noise=self.fl_noise,
                            gray_noise=self.gray_noise, kernel_size=self.kernel_size,
                            sigma_major=self.sigma_major, seed=self.seed)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def hash(self) -> str:
        text = "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n"
                       for f in sorted(fields(self), key=lambda f: f.name) if f.name not in UNHASHED)
        return hashlib.sha256(text.encode()).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, typ):
    if typ in (bool, "bool"):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    return raw


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse(raw, types[key])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return dataclasses.replace(base or RunConfig(), **values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def check_hashes(expected: Optional[str], **found: Optional[str]) -> None:
    """Refuse artifacts whose embedded config hash disagrees with the others.

    Artifacts without a hash (raw inputs) are not checked.
    """
    seen = {name: h for name, h in found.items() if h}
    if expected:
        seen = dict(seen, config=expected)
    if len(set(seen.values())) > 1:
        detail = ", ".join(f"{k}={v[:12]}" for k, v in sorted(seen.items()))
        raise ConfigMismatchError(f"artifacts come from different configurations: {detail}")
