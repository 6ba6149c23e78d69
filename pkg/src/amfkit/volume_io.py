"""Voxel volumes: file format, HU -> BMD calibration, clamping, binarization.

Arrays are indexed ``[x, y, z]``.  On disk the payload is x-fastest
(Fortran order), little-endian, described by a JSON sidecar::

    {"format": "amfkit-volume", "version": 1, "kind": "gray",
     "dims": [nx, ny, nz], "spacing": [sx, sy, sz], "unit": "HU",
     "dtype": "float64", "byte_order": "little", "data_file": "x.vol.raw"}

Binary volumes use ``kind = "binary"``, dtype ``uint8`` with 0/1 payload and
record ``threshold_used``.  Multi-component files (anisotropy maps) add a
``components`` list; the payload holds the components one after another.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

UNITS = ("HU", "mg_per_cm3", "none")
DTYPES = ("float64", "float32", "int16", "int32", "uint8")
FORMAT_TAG = "amfkit-volume"

BMD_RANGE = (-200.0, 1200.0)
DEFAULT_THRESHOLD = 400.0


class VolumeFormatError(ValueError):
    """Sidecar or payload does not describe a valid volume."""


def _as_dims(dims) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise ValueError(f"dims must be three positive integers, got {dims}")
    return dims


def _as_spacing(spacing) -> tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(s > 0 and np.isfinite(s) for s in spacing):
        raise ValueError(f"spacing must be three positive numbers, got {spacing}")
    return spacing


@dataclass(frozen=True, eq=False)
class GrayVolume:
    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    unit: str = "mg_per_cm3"

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3-D, got shape {data.shape}")
        _as_dims(data.shape)
        if self.unit not in UNITS:
            raise VolumeFormatError(f"unknown unit tag {self.unit!r}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, GrayVolume):
            return NotImplemented
        return (self.unit == other.unit and self.spacing == other.spacing
                and np.array_equal(self.data, other.data))


@dataclass(frozen=True, eq=False)
class BinaryVolume:
    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    threshold_used: Optional[float] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=bool)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3-D, got shape {data.shape}")
        _as_dims(data.shape)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def n_white(self) -> int:
        return int(self.data.sum())

    def __eq__(self, other):
        if not isinstance(other, BinaryVolume):
            return NotImplemented
        return (self.spacing == other.spacing and self.threshold_used == other.threshold_used
                and np.array_equal(self.data, other.data))


@dataclass(frozen=True, eq=False)
class VoiMask:
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=bool)
        if data.ndim != 3:
            raise ValueError(f"mask must be 3-D, got shape {data.shape}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def full(cls, dims) -> "VoiMask":
        return cls(np.ones(_as_dims(dims), dtype=bool))

    @classmethod
    def sphere(cls, dims, scale: float = 1.0) -> "VoiMask":
        """Ball inscribed in the volume, radius scaled by `scale`."""
        dims = _as_dims(dims)
        centre = [(d - 1) / 2.0 for d in dims]
        radius = scale * min(dims) / 2.0
        x, y, z = np.ogrid[:dims[0], :dims[1], :dims[2]]
        r2 = (x - centre[0]) ** 2 + (y - centre[1]) ** 2 + (z - centre[2]) ** 2
        return cls(r2 <= radius ** 2)


@dataclass(frozen=True)
class CalibrationPhantom:
    """Two-point hydroxyapatite phantom: water-like and bone-like inserts."""
    hu_water: float
    hu_bone: float
    ha_water: float = 0.0
    ha_bone: float = 200.0

    def __post_init__(self):
        if self.hu_bone == self.hu_water:
            raise ValueError("hu_bone equals hu_water; calibration slope is undefined")


# --------------------------------------------------------------------------
# File format

def _sidecar_path(path) -> Path:
    path = Path(path)
    name = path.name
    if name.endswith(".vol.json"):
        return path
    if name.endswith(".vol.raw"):
        return path.with_name(name[: -len(".vol.raw")] + ".vol.json")
    return path.with_name(name + ".vol.json")


def _raw_name(sidecar: Path) -> str:
    return sidecar.name[: -len(".vol.json")] + ".vol.raw"


def _write(sidecar: Path, header: dict, payload: bytes) -> Path:
    sidecar.parent.mkdir(parents=True, exist_ok=True)
    header = dict(header, data_file=_raw_name(sidecar))
    (sidecar.parent / header["data_file"]).write_bytes(payload)
    sidecar.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return sidecar


def _fortran_bytes(arr: np.ndarray, dtype: str) -> bytes:
    return np.asarray(arr).astype(np.dtype(dtype).newbyteorder("<")).tobytes(order="F")


def save_volume(volume, path, *, dtype: str = "float64", config_hash: Optional[str] = None) -> Path:
    """Write `volume` as sidecar + raw payload; returns the sidecar path.

    Gray volumes are written as `dtype` (float64 by default); binary volumes
    always as uint8 0/1.
    """
    sidecar = _sidecar_path(path)
    header = {
        "format": FORMAT_TAG,
        "version": 1,
        "dims": list(volume.dims),
        "spacing": list(volume.spacing),
        "byte_order": "little",
    }
    if config_hash is not None:
        header["config_hash"] = config_hash
    if isinstance(volume, BinaryVolume):
        header.update(kind="binary", unit="none", dtype="uint8", threshold_used=volume.threshold_used)
        payload = _fortran_bytes(volume.data, "uint8")
    elif isinstance(volume, GrayVolume):
        if dtype not in DTYPES:
            raise VolumeFormatError(f"unsupported element type {dtype!r}")
        cast = volume.data.astype(dtype)
        if not np.array_equal(cast.astype(np.float64), volume.data):
            raise VolumeFormatError(f"values are not representable exactly as {dtype}")
        header.update(kind="gray", unit=volume.unit, dtype=dtype)
        payload = _fortran_bytes(cast, dtype)
    else:
        raise TypeError(f"cannot save {type(volume).__name__}")
    return _write(sidecar, header, payload)


def _read(path) -> tuple[dict, np.ndarray]:
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise FileNotFoundError(sidecar)
    header = json.loads(sidecar.read_text())
    if header.get("format") != FORMAT_TAG:
        raise VolumeFormatError(f"{sidecar}: not an {FORMAT_TAG} sidecar")
    if header.get("unit") not in UNITS:
        raise VolumeFormatError(f"{sidecar}: unknown unit tag {header.get('unit')!r}")
    dtype = header.get("dtype")
    if dtype not in DTYPES:
        raise VolumeFormatError(f"{sidecar}: unsupported element type {dtype!r}")
    if header.get("byte_order", "little") != "little":
        raise VolumeFormatError(f"{sidecar}: only little-endian payloads are supported")
    dims = _as_dims(header["dims"])
    raw = sidecar.parent / header.get("data_file", _raw_name(sidecar))
    if not raw.exists():
        raise FileNotFoundError(raw)
    payload = raw.read_bytes()
    ncomp = len(header.get("components", [None]))
    itemsize = np.dtype(dtype).itemsize
    expected = int(np.prod(dims)) * ncomp
    if len(payload) != expected * itemsize:
        raise VolumeFormatError(
            f"{raw}: payload holds {len(payload) / itemsize:g} scalars, sidecar implies {expected}")
    flat = np.frombuffer(payload, dtype=np.dtype(dtype).newbyteorder("<"))
    shape = dims + ((ncomp,) if "components" in header else ())
    return header, flat.reshape(shape, order="F")


def load_volume(path):
    """Load a volume written by :func:`save_volume`.

    Returns a :class:`BinaryVolume` for binary sidecars and a float64
    :class:`GrayVolume` otherwise (narrower types are widened).
    """
    header, arr = _read(path)
    if "components" in header:
        raise VolumeFormatError("multi-component file; use load_components")
    if header.get("kind") == "binary":
        if not np.isin(arr, (0, 1)).all():
            raise VolumeFormatError("binary payload holds values other than 0/1")
        return BinaryVolume(arr.astype(bool), header["spacing"], header.get("threshold_used"))
    return GrayVolume(arr.astype(np.float64), header["spacing"], header["unit"])


def read_config_hash(path) -> Optional[str]:
    return json.loads(_sidecar_path(path).read_text()).get("config_hash")


def save_components(fields: dict[str, np.ndarray], path, spacing=(1.0, 1.0, 1.0), *,
                    config_hash: Optional[str] = None) -> Path:
    """Write several same-shaped float64 fields into one volume file."""
    names = list(fields)
    stack = np.stack([np.asarray(fields[n], dtype=np.float64) for n in names], axis=-1)
    header = {
        "format": FORMAT_TAG,
        "version": 1,
        "kind": "gray",
        "unit": "none",
        "dtype": "float64",
        "byte_order": "little",
        "dims": list(stack.shape[:3]),
        "spacing": list(_as_spacing(spacing)),
        "components": names,
    }
    if config_hash is not None:
        header["config_hash"] = config_hash
    return _write(_sidecar_path(path), header, _fortran_bytes(stack, "float64"))


def load_components(path) -> tuple[dict[str, np.ndarray], dict]:
    header, arr = _read(path)
    if "components" not in header:
        raise VolumeFormatError("not a multi-component file")
    fields = {name: np.array(arr[..., i], dtype=np.float64)
              for i, name in enumerate(header["components"])}
    return fields, header


# --------------------------------------------------------------------------
# Calibration and thresholding

def hu_to_bmd(volume: GrayVolume, phantom: CalibrationPhantom) -> GrayVolume:
    """Map Hounsfield units to BMD (mg/cm^3) with the two-point phantom line.

    The line passes through (hu_water, ha_water) and (hu_bone, ha_bone); with
    the default ha_water = 0 this is ``ha_bone / (hu_bone - hu_water) * (v - hu_water)``.
    """
    if volume.unit != "HU":
        raise ValueError(f"hu_to_bmd expects a volume in HU, got {volume.unit}")
    slope = (phantom.ha_bone - phantom.ha_water) / (phantom.hu_bone - phantom.hu_water)
    bmd = slope * (volume.data - phantom.hu_water) + phantom.ha_water
    return GrayVolume(bmd, volume.spacing, "mg_per_cm3")


def bmd_to_hu(volume: GrayVolume, phantom: CalibrationPhantom) -> GrayVolume:
    if volume.unit != "mg_per_cm3":
        raise ValueError(f"bmd_to_hu expects a volume in mg_per_cm3, got {volume.unit}")
    slope = (phantom.hu_bone - phantom.hu_water) / (phantom.ha_bone - phantom.ha_water)
    hu = slope * (volume.data - phantom.ha_water) + phantom.hu_water
    return GrayVolume(hu, volume.spacing, "HU")


def clamp_bmd(volume: GrayVolume, lo: float = BMD_RANGE[0], hi: float = BMD_RANGE[1]) -> GrayVolume:
    if volume.unit != "mg_per_cm3":
        raise ValueError(f"clamp_bmd expects mg_per_cm3, got {volume.unit}")
    return GrayVolume(np.clip(volume.data, lo, hi), volume.spacing, volume.unit)


def _check_mask(mask: Optional[VoiMask], dims) -> None:
    if mask is not None and tuple(mask.dims) != tuple(dims):
        raise ValueError(f"mask dims {mask.dims} do not match volume dims {dims}")


def binarize(volume: GrayVolume, threshold: float = DEFAULT_THRESHOLD,
             mask: Optional[VoiMask] = None) -> BinaryVolume:
    """White iff ``value >= threshold`` (and inside `mask`, when given)."""
    if volume.unit != "mg_per_cm3":
        raise ValueError(f"binarize expects mg_per_cm3, got {volume.unit}")
    _check_mask(mask, volume.dims)
    white = volume.data >= threshold
    if mask is not None:
        white &= mask.data
    return BinaryVolume(white, volume.spacing, float(threshold))


def masked_mean(volume: GrayVolume, mask: VoiMask) -> float:
    _check_mask(mask, volume.dims)
    if not mask.data.any():
        raise ValueError("mask selects no voxels")
    return float(volume.data[mask.data].mean())


def write_bmd_csv(rows: Sequence[tuple[str, float]], path) -> None:
    """CSV of masked statistics, header ``specimen_id,mean_bmd``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["specimen_id", "mean_bmd"])
        for specimen_id, value in rows:
            writer.writerow([specimen_id, repr(float(value))])


def read_bmd_csv(path) -> list[tuple[str, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["specimen_id", "mean_bmd"]:
            raise VolumeFormatError(f"{os.fspath(path)}: unexpected header {header}")
        return [(row[0], float(row[1])) for row in reader if row]
