"""Synthetic volumes with known geometry, and seeded cohorts with synthetic failure loads."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .anisotropy import volume_fa
from .kernelgen import DEFAULT_SIGMA_MAJOR, DEFAULT_SIZE, kernel_bank
from .minkowski import volume_response_field
from .volume_io import (BMD_RANGE, BinaryVolume, CalibrationPhantom, GrayVolume,
                        bmd_to_hu, save_volume)

KINDS = ("rods", "plates", "isotropic_pores", "ball", "shell", "torus", "solid_box")

# HU values of the calibration inserts assumed for synthetic HU volumes
SYNTHETIC_CALIBRATION = CalibrationPhantom(hu_water=-4.0, hu_bone=216.0)


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry of one synthetic volume; lengths in voxels.

    ``radius`` is the rod/ball/pore/torus-tube radius, ``thickness`` the plate
    or shell wall thickness, ``spacing`` the rod/plate lattice period and
    ``volume_fraction`` the target bone fraction for ``isotropic_pores``.
    """
    kind: str
    size: int = 32
    orientation: tuple[float, float, float] = (0.0, 0.0, 1.0)
    radius: float = 2.5
    thickness: float = 3.0
    spacing: float = 8.0
    major_radius: float = 8.0
    box: tuple[int, int, int] = (2, 2, 2)
    volume_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        if self.size < 8:
            raise ValueError(f"phantom size must be >= 8, got {self.size}")
        norm = math.sqrt(sum(c * c for c in self.orientation))
        if not norm > 0:
            raise ValueError("orientation must be a non-zero vector")
        object.__setattr__(self, "orientation", tuple(float(c) / norm for c in self.orientation))
        half = self.size / 2.0
        k = self.kind
        if k in ("rods", "plates"):
            if not 0 < self.spacing <= self.size:
                raise ValueError("lattice spacing must be positive and fit in the volume")
            if k == "rods" and not 0 < self.radius < self.spacing / 2:
                raise ValueError("rod radius must be positive and below half the spacing")
            if k == "plates" and not 0 < self.thickness < self.spacing:
                raise ValueError("plate thickness must be positive and below the spacing")
        elif k == "isotropic_pores":
            if not 0 < self.volume_fraction < 1 or not 0 < self.radius < half:
                raise ValueError("pore radius or target volume fraction out of range")
        elif k == "ball":
            if not 0 < self.radius < half:
                raise ValueError("ball radius exceeds the volume")
        elif k == "shell":
            if not 0 < self.radius < half or not 0 < self.thickness < self.radius:
                raise ValueError("shell radius/thickness out of range")
        elif k == "torus":
            if not 0 < self.radius < self.major_radius or self.major_radius + self.radius >= half:
                raise ValueError("torus radii exceed the volume")
        elif k == "solid_box":
            if len(self.box) != 3 or not all(0 < b <= self.size for b in self.box):
                raise ValueError("box edges must be positive and fit in the volume")


def _centred_coords(size: int):
    c = (size - 1) / 2.0
    r = np.arange(size, dtype=np.float64) - c
    return np.meshgrid(r, r, r, indexing="ij")


def _perpendicular_basis(u) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=np.float64)
    helper = np.eye(3)[int(np.argmin(np.abs(u)))]
    e1 = np.cross(u, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(u, e1)


def _wrap(a: np.ndarray, period: float) -> np.ndarray:
    return a - period * np.round(a / period)


def gen_shape(spec: PhantomSpec) -> BinaryVolume:
    """Deterministic voxelisation of `spec` (voxel centres tested against the solid)."""
    x, y, z = _centred_coords(spec.size)
    rng = np.random.default_rng(spec.seed)
    k = spec.kind
    if k == "rods":
        e1, e2 = _perpendicular_basis(spec.orientation)
        off = rng.uniform(0, spec.spacing, 2)
        a = _wrap(x * e1[0] + y * e1[1] + z * e1[2] + off[0], spec.spacing)
        b = _wrap(x * e2[0] + y * e2[1] + z * e2[2] + off[1], spec.spacing)
        white = a * a + b * b <= spec.radius ** 2
    elif k == "plates":
        u = spec.orientation
        off = rng.uniform(0, spec.spacing)
        c = _wrap(x * u[0] + y * u[1] + z * u[2] + off, spec.spacing)
        white = np.abs(c) <= spec.thickness / 2.0
    elif k == "isotropic_pores":
        white = _carve_pores(spec, rng)
    elif k == "ball":
        white = x * x + y * y + z * z <= spec.radius ** 2
    elif k == "shell":
        d2 = x * x + y * y + z * z
        white = (d2 <= spec.radius ** 2) & (d2 > (spec.radius - spec.thickness) ** 2)
    elif k == "torus":
        ring = np.sqrt(x * x + y * y) - spec.major_radius
        white = ring * ring + z * z <= spec.radius ** 2
    else:
        white = np.zeros((spec.size,) * 3, dtype=bool)
        lo = [(spec.size - b) // 2 for b in spec.box]
        white[lo[0]:lo[0] + spec.box[0], lo[1]:lo[1] + spec.box[1], lo[2]:lo[2] + spec.box[2]] = True
    return BinaryVolume(white)


def _carve_pores(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    """Boolean model: remove balls at uniform random centres until bone fraction <= target."""
    n = spec.size
    white = np.ones((n, n, n), dtype=bool)
    target = spec.volume_fraction * white.size
    remaining = white.size
    r = spec.radius
    reach = int(math.ceil(r))
    offs = np.arange(-reach, reach + 1)
    ox, oy, oz = np.meshgrid(offs, offs, offs, indexing="ij")
    ball = ox * ox + oy * oy + oz * oz <= r * r
    bx, by, bz = ox[ball], oy[ball], oz[ball]
    while remaining > target:
        c = rng.integers(0, n, 3)
        px, py, pz = bx + c[0], by + c[1], bz + c[2]
        inside = (px >= 0) & (px < n) & (py >= 0) & (py < n) & (pz >= 0) & (pz < n)
        px, py, pz = px[inside], py[inside], pz[inside]
        remaining -= int(white[px, py, pz].sum())
        white[px, py, pz] = False
    return white


def gen_gray(spec: PhantomSpec, bone_value: float = 800.0, background: float = 0.0,
             noise: float = 0.0, seed: Optional[int] = None) -> GrayVolume:
    """BMD volume (mg/cm^3): shape painted bone/background plus Gaussian noise, clamped."""
    if noise < 0:
        raise ValueError(f"noise sigma must be >= 0, got {noise}")
    white = gen_shape(spec).data
    data = np.where(white, bone_value, background).astype(np.float64)
    if noise > 0:
        rng = np.random.default_rng(spec.seed + 7919 if seed is None else seed)
        data = data + rng.normal(0.0, noise, data.shape)
    return GrayVolume(np.clip(data, *BMD_RANGE), unit="mg_per_cm3")


# --------------------------------------------------------------------------
# cohorts

@dataclass(frozen=True)
class CohortConfig:
    n: int = 150
    size: int = 32
    coefficients: tuple[float, float, float] = (1.0, 10.0, 4.0)
    fl_noise: float = 0.3
    gray_noise: float = 20.0
    bone_value: float = 800.0
    kernel_size: int = DEFAULT_SIZE
    sigma_major: float = DEFAULT_SIGMA_MAJOR
    seed: int = 0


@dataclass
class Specimen:
    specimen_id: str
    spec: PhantomSpec
    volume_fraction: float
    mean_fa: float
    noise: float
    failure_load: float
    gray: GrayVolume = field(repr=False)


@dataclass
class SyntheticCohort:
    config: CohortConfig
    specimens: list[Specimen]

    def manifest(self) -> dict:
        return {
            "generator": "amfkit.phantom.gen_cohort",
            "config": asdict(self.config),
            "model": "failure_load = c0 + c1*volume_fraction + c2*mean_fa + noise",
            "coefficients": list(self.config.coefficients),
            "calibration": asdict(SYNTHETIC_CALIBRATION),
            "specimens": [
                {
                    "specimen_id": s.specimen_id,
                    "spec": asdict(s.spec),
                    "volume_fraction": s.volume_fraction,
                    "mean_fa": s.mean_fa,
                    "noise": s.noise,
                    "failure_load": s.failure_load,
                }
                for s in self.specimens
            ],
        }

    def manifest_hash(self) -> str:
        blob = json.dumps(self.manifest(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def true_features(self) -> np.ndarray:
        return np.array([[s.volume_fraction, s.mean_fa] for s in self.specimens])

    def failure_loads(self) -> np.ndarray:
        return np.array([s.failure_load for s in self.specimens])


def _random_spec(rng: np.random.Generator, size: int, seed: int) -> PhantomSpec:
    kind = ("rods", "plates", "isotropic_pores")[int(rng.integers(3))]
    v = rng.normal(size=3)
    orientation = tuple(v / np.linalg.norm(v))
    if kind == "rods":
        spacing = float(rng.uniform(7.0, 10.0))
        return PhantomSpec(kind, size, orientation, radius=float(rng.uniform(1.5, 3.2)),
                           spacing=spacing, seed=seed)
    if kind == "plates":
        spacing = float(rng.uniform(7.0, 11.0))
        return PhantomSpec(kind, size, orientation, thickness=float(rng.uniform(1.5, 3.5)),
                           spacing=spacing, seed=seed)
    return PhantomSpec(kind, size, radius=float(rng.uniform(2.5, 4.5)),
                       volume_fraction=float(rng.uniform(0.15, 0.45)), seed=seed)


def gen_cohort(config: CohortConfig = CohortConfig()) -> SyntheticCohort:
    """Seeded mix of rod, plate and pore specimens with linear synthetic failure loads.

    ``mean_fa`` is the mean volume-functional FA over the white voxels of the
    noiseless shape, computed with the configured kernel bank.
    """
    if config.n < 20:
        raise ValueError(f"cohort needs n >= 20, got {config.n}")
    if config.fl_noise < 0 or config.gray_noise < 0:
        raise ValueError("noise levels must be non-negative")
    kernels = kernel_bank(config.kernel_size, config.sigma_major)
    directions = [k.direction for k in kernels]
    c0, c1, c2 = config.coefficients
    children = np.random.SeedSequence(config.seed).spawn(config.n)
    width = max(3, len(str(config.n - 1)))
    specimens = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        spec_seed = int(rng.integers(2 ** 31))
        spec = _random_spec(rng, config.size, spec_seed)
        shape = gen_shape(spec)
        vf = float(shape.data.mean())
        resp = volume_response_field(shape, kernels)
        mean_fa = float(volume_fa(resp, shape.data, directions).mean()) if shape.n_white else 0.0
        noise = float(rng.normal(0.0, config.fl_noise)) if config.fl_noise > 0 else 0.0
        fl = c0 + c1 * vf + c2 * mean_fa + noise
        gray = gen_gray(spec, config.bone_value, 0.0, config.gray_noise, seed=spec_seed + 1)
        specimens.append(Specimen(f"spec{i:0{width}d}", spec, vf, mean_fa, noise, fl, gray))
    return SyntheticCohort(config, specimens)


def write_targets_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["specimen_id", "failure_load_kN"])
        for specimen_id, fl in rows:
            writer.writerow([specimen_id, repr(float(fl))])


def read_targets_csv(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["specimen_id", "failure_load_kN"]:
            raise ValueError(f"{path}: expected header specimen_id,failure_load_kN, got {header}")
        out = {}
        for row in reader:
            if row:
                out[row[0]] = float(row[1])
    return out


def write_cohort(cohort: SyntheticCohort, outdir) -> Path:
    """Write HU volumes, ``targets.csv`` and ``manifest.json`` under `outdir`."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for s in cohort.specimens:
        save_volume(bmd_to_hu(s.gray, SYNTHETIC_CALIBRATION), outdir / s.specimen_id)
    write_targets_csv([(s.specimen_id, s.failure_load) for s in cohort.specimens], outdir / "targets.csv")
    manifest = cohort.manifest()
    manifest["manifest_hash"] = cohort.manifest_hash()
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return outdir
