"""Normalised FA / theta / phi histograms and the mean-BMD baseline feature."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .anisotropy import AnisotropyMap
from .minkowski import FUNCTIONALS
from .volume_io import GrayVolume, VoiMask, masked_mean

QUANTITIES = ("fa", "theta", "phi")
DEFAULT_BINS = 16
QUANTITY_RANGES = {"fa": (0.0, 1.0), "theta": (0.0, 2 * math.pi), "phi": (0.0, math.pi / 2)}
# values within this fraction of a bin width below an edge go to the upper bin,
# so round-off between equivalent computations cannot flip a bin
EDGE_SNAP = 1e-9


class NoWhiteVoxelsError(ValueError):
    """Specimen has no white voxels; its histograms are undefined."""


@dataclass(frozen=True)
class HistogramSpec:
    quantity: str
    lo: float
    hi: float
    bins: int = DEFAULT_BINS

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError(f"need at least 2 bins, got {self.bins}")
        if not self.lo < self.hi:
            raise ValueError(f"empty range [{self.lo}, {self.hi}]")

    @classmethod
    def default(cls, quantity: str, bins: int = DEFAULT_BINS) -> "HistogramSpec":
        lo, hi = QUANTITY_RANGES[quantity]
        return cls(quantity, lo, hi, bins)


def default_specs(bins: int = DEFAULT_BINS) -> dict[str, HistogramSpec]:
    return {q: HistogramSpec.default(q, bins) for q in QUANTITIES}


def histogram(values, spec: HistogramSpec) -> np.ndarray:
    """Equal-width histogram over ``[lo, hi]`` normalised to unit mass.

    Bin of v is ``floor((v - lo) / width)``; out-of-range values (and v = hi)
    are clamped into the end bins.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("histogram of an empty sample")
    if not np.all(np.isfinite(v)):
        raise ValueError("histogram input contains NaN or infinite values")
    width = (spec.hi - spec.lo) / spec.bins
    idx = np.floor((v - spec.lo) / width + EDGE_SNAP).astype(np.int64)
    idx = np.clip(idx, 0, spec.bins - 1)
    return np.bincount(idx, minlength=spec.bins) / v.size


def feature_set_names() -> list[str]:
    return ["mean_bmd"] + [f"{f}_{q}" for f in FUNCTIONALS for q in QUANTITIES]


def feature_columns(bins: int = DEFAULT_BINS) -> list[str]:
    cols = ["mean_bmd"]
    for f in FUNCTIONALS:
        for q in QUANTITIES:
            cols.extend(f"{f}_{q}_{b:02d}" for b in range(bins))
    return cols


def columns_of_set(name: str, columns: Sequence[str]) -> list[str]:
    if name == "mean_bmd":
        return ["mean_bmd"]
    prefix = name + "_"
    return [c for c in columns if c.startswith(prefix) and c[len(prefix):].isdigit()]


@dataclass
class FeatureVector:
    specimen_id: str
    mean_bmd: float
    histograms: dict[str, np.ndarray] = field(default_factory=dict)

    def values(self) -> np.ndarray:
        parts = [np.array([self.mean_bmd])]
        parts += [self.histograms[f"{f}_{q}"] for f in FUNCTIONALS for q in QUANTITIES]
        return np.concatenate(parts)


def extract_features(maps: AnisotropyMap, bmd: GrayVolume, mask: VoiMask, specs=None,
                     specimen_id: str = "", include_background: bool = False) -> FeatureVector:
    """Histogram every functional x quantity over the white voxels; mean BMD over the VOI.

    With ``include_background`` the histograms run over every VOI voxel,
    background ones contributing their zero FA/theta/phi.
    """
    specs = specs or default_specs()
    if tuple(maps.dims) != tuple(bmd.dims) or tuple(mask.dims) != tuple(bmd.dims):
        raise ValueError("anisotropy maps, BMD volume and VOI mask dims differ")
    select = mask.data if include_background else (maps.white & mask.data)
    if not (maps.white & mask.data).any():
        raise NoWhiteVoxelsError(f"specimen {specimen_id!r} has no white voxels in its VOI")
    hists = {}
    for f in FUNCTIONALS:
        for q in QUANTITIES:
            hists[f"{f}_{q}"] = histogram(maps.quantity(q, f)[select], specs[q])
    return FeatureVector(specimen_id, masked_mean(bmd, mask), hists)


# --------------------------------------------------------------------------
# tables and files

@dataclass
class FeatureTable:
    ids: list[str]
    columns: list[str]
    values: np.ndarray
    config_hash: Optional[str] = None

    @classmethod
    def from_vectors(cls, vectors: Sequence[FeatureVector], bins: int = DEFAULT_BINS,
                     config_hash: Optional[str] = None) -> "FeatureTable":
        cols = feature_columns(bins)
        vals = np.array([v.values() for v in vectors]).reshape(len(vectors), len(cols))
        return cls([v.specimen_id for v in vectors], cols, vals, config_hash)

    def select(self, names: Sequence[str]) -> np.ndarray:
        idx = [self.columns.index(c) for c in names]
        return self.values[:, idx]

    def set_matrix(self, set_name: str) -> np.ndarray:
        return self.select(columns_of_set(set_name, self.columns))


def write_features_csv(table: FeatureTable, path) -> None:
    """``# config_hash=...`` comment line, header, one row per specimen."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={table.config_hash or ''}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["specimen_id"] + table.columns)
        for sid, row in zip(table.ids, table.values):
            writer.writerow([sid] + [repr(float(v)) for v in row])


def read_features_csv(path) -> FeatureTable:
    config_hash = None
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if lines and lines[0].startswith("#"):
        comment = lines.pop(0)[1:].strip()
        if comment.startswith("config_hash="):
            config_hash = comment[len("config_hash="):] or None
    rows = list(csv.reader(lines))
    header = rows[0]
    if header[0] != "specimen_id":
        raise ValueError(f"{path}: first column must be specimen_id")
    body = [r for r in rows[1:] if r]
    values = np.array([[float(v) for v in r[1:]] for r in body]).reshape(len(body), len(header) - 1)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{path}: non-finite feature values")
    return FeatureTable([r[0] for r in body], header[1:], values, config_hash)


def write_features_json(table: FeatureTable, path, provenance: Optional[dict] = None) -> None:
    doc = {
        "config_hash": table.config_hash,
        "provenance": provenance or {},
        "columns": table.columns,
        "rows": [{"specimen_id": sid, "values": [float(v) for v in row]}
                 for sid, row in zip(table.ids, table.values)],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
