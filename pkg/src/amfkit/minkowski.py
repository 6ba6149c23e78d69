"""Element counts, Minkowski functionals and locally weighted (anisotropic) functionals.

A white voxel is a closed unit cube; its 6 faces, 12 edges and 8 vertices are
"open" and each open element is counted once, however many white voxels
share it.  Out-of-volume voxels are black.

Elements are grouped into 8 classes by the axes on which they sit at a
lattice corner rather than a voxel centre: voxels ``()``, faces normal to x
``(x,)``, edges along x ``(y, z)``, vertices ``(x, y, z)``, and so on.  Along a
corner axis an element index ``a`` lies between voxels ``a-1`` and ``a``, so the
class indicator has one more entry on that axis than the volume.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from .kernelgen import DirectionSpec, Kernel
from .volume_io import BinaryVolume

FUNCTIONALS = ("volume", "surface", "mean_breadth", "euler")

# Kernels have unit mass, so responses are O(1); anything smaller than this is
# round-off of an exactly cancelling sum (FFT noise is ~1e-16 absolute).
RESPONSE_FLOOR = 1e-12

# corner-axis flags per class; class order fixed throughout the module
ELEMENT_CLASSES: tuple[tuple[bool, bool, bool], ...] = tuple(
    sorted(itertools.product((False, True), repeat=3), key=lambda c: (sum(c), c[::-1])))

# rows: n_p, n_f, n_e, n_v ; columns: FUNCTIONALS
MF_COEFFICIENTS = np.array([
    [1.0, -6.0, 3.0, -1.0],
    [0.0, 2.0, -2.0, 1.0],
    [0.0, 0.0, 1.0, -1.0],
    [0.0, 0.0, 0.0, 1.0],
])


@dataclass(frozen=True)
class ElementCounts:
    n_p: float
    n_f: float
    n_e: float
    n_v: float

    def as_tuple(self):
        return (self.n_p, self.n_f, self.n_e, self.n_v)


@dataclass(frozen=True)
class MFScalars:
    volume: float
    surface: float
    mean_breadth: float
    euler: float

    def as_tuple(self):
        return (self.volume, self.surface, self.mean_breadth, self.euler)


@dataclass(frozen=True, eq=False)
class AMFResponses:
    """Dense response field, ``values[x, y, z, d, m]`` for direction d, functional m."""
    values: np.ndarray
    white: np.ndarray
    directions: tuple[DirectionSpec, ...]

    @property
    def dims(self):
        return self.white.shape


def element_indicator(white: np.ndarray, corner: Sequence[bool]) -> np.ndarray:
    """Open-element indicator for one class (bool array)."""
    white = np.asarray(white, dtype=bool)
    padded = np.pad(white, [(1, 1) if c else (0, 0) for c in corner])
    shape = tuple(n + 1 if c else n for n, c in zip(white.shape, corner))
    out = np.zeros(shape, dtype=bool)
    for shift in itertools.product(*[(0, 1) if c else (0,) for c in corner]):
        slc = tuple(slice(s, s + m) if c else slice(None) for s, m, c in zip(shift, shape, corner))
        out |= padded[slc]
    return out


def element_weights(weights: np.ndarray, corner: Sequence[bool]) -> np.ndarray:
    """Per-element weight for one class: mean of the voxel weights around each element.

    Positions outside `weights` count as zero; output is aligned with
    :func:`element_indicator` on an array of the same shape.
    """
    weights = np.asarray(weights, dtype=np.float64)
    padded = np.pad(weights, [(1, 1) if c else (0, 0) for c in corner])
    shape = tuple(n + 1 if c else n for n, c in zip(weights.shape, corner))
    out = np.zeros(shape)
    shifts = list(itertools.product(*[(0, 1) if c else (0,) for c in corner]))
    for shift in shifts:
        slc = tuple(slice(s, s + m) if c else slice(None) for s, m, c in zip(shift, shape, corner))
        out += padded[slc]
    return out / len(shifts)


def _class_type(corner) -> int:
    return sum(corner)


def count_elements(window) -> ElementCounts:
    """Numbers of open voxels, faces, edges and vertices."""
    white = window.data if isinstance(window, BinaryVolume) else np.asarray(window, dtype=bool)
    totals = [0, 0, 0, 0]
    for corner in ELEMENT_CLASSES:
        totals[_class_type(corner)] += int(element_indicator(white, corner).sum())
    return ElementCounts(*totals)


def mf_from_counts(n_p, n_f, n_e, n_v):
    """The four functionals as linear combinations of element counts (works on arrays)."""
    return (
        n_p,
        -6 * n_p + 2 * n_f,
        3 * n_p - 2 * n_f + n_e,
        -n_p + n_f - n_e + n_v,
    )


def mf_scalar(counts: ElementCounts) -> MFScalars:
    return MFScalars(*mf_from_counts(*counts.as_tuple()))


def minkowski_functionals(window) -> MFScalars:
    return mf_scalar(count_elements(window))


def _pad_centered(weights: np.ndarray, shape) -> np.ndarray:
    extra = [m - k for m, k in zip(shape, weights.shape)]
    if any(e < 0 or e % 2 for e in extra):
        raise ValueError(f"kernel shape {weights.shape} cannot be centred in window {tuple(shape)}")
    return np.pad(weights, [(e // 2, e // 2) for e in extra])


def weighted_counts(window, kernel) -> ElementCounts:
    """Kernel-weighted element counts of a window centred on the kernel centre.

    `kernel` is a :class:`Kernel` or a weight array; if smaller than the
    window it is zero-padded symmetrically.  Each open voxel contributes its
    weight; each open face, edge and vertex the mean weight of its 2, 4 or 8
    surrounding voxel positions.
    """
    white = window.data if isinstance(window, BinaryVolume) else np.asarray(window, dtype=bool)
    weights = kernel.weights if isinstance(kernel, Kernel) else np.asarray(kernel, dtype=np.float64)
    weights = _pad_centered(weights, white.shape)
    totals = [0.0, 0.0, 0.0, 0.0]
    for corner in ELEMENT_CLASSES:
        ind = element_indicator(white, corner)
        totals[_class_type(corner)] += float(np.sum(element_weights(weights, corner)[ind]))
    return ElementCounts(*totals)


# --------------------------------------------------------------------------
# per-voxel oracle

class _WindowOracle:
    """Direct windowed sums around single voxels, for any number of kernels."""

    def __init__(self, white: np.ndarray, kernels: Sequence[Kernel]):
        sizes = {k.size for k in kernels}
        if len(sizes) != 1:
            raise ValueError(f"kernels must share one size, got {sorted(sizes)}")
        self.h = kernels[0].half
        # window reaches one voxel past the support so boundary elements see all neighbours
        self.m = 2 * self.h + 3
        self.padded = np.pad(np.asarray(white, dtype=bool), self.h + 1)
        stencils = []
        for corner in ELEMENT_CLASSES:
            stencils.append(np.stack([
                element_weights(_pad_centered(k.weights, (self.m,) * 3), corner) for k in kernels]))
        self.stencils = stencils

    def window(self, center) -> np.ndarray:
        x, y, z = center
        m = self.m
        return self.padded[x:x + m, y:y + m, z:z + m]

    def counts(self, center) -> np.ndarray:
        """(n_kernels, 4) weighted element counts at `center`."""
        win = self.window(center)
        out = np.zeros((self.stencils[0].shape[0], 4))
        for corner, stencil in zip(ELEMENT_CLASSES, self.stencils):
            ind = element_indicator(win, corner)
            out[:, _class_type(corner)] += stencil[:, ind].sum(axis=1)
        return out


def _check_center(white: np.ndarray, center) -> tuple[int, int, int]:
    center = tuple(int(c) for c in center)
    if len(center) != 3 or any(not 0 <= c < n for c, n in zip(center, white.shape)):
        raise IndexError(f"center {center} outside volume of dims {white.shape}")
    return center


def amf_at_voxel(volume: BinaryVolume, center, kernel: Kernel) -> MFScalars:
    """Weighted functionals of the kernel-sized neighbourhood of `center`."""
    center = _check_center(volume.data, center)
    counts = _WindowOracle(volume.data, [kernel]).counts(center)[0]
    return MFScalars(*(float(v) for v in mf_from_counts(*counts)))


def _mf_rows(counts: np.ndarray) -> np.ndarray:
    """(..., 4) counts -> (..., 4) functionals."""
    return counts @ MF_COEFFICIENTS


# --------------------------------------------------------------------------
# FFT fast path

def _axis_multipliers(n_fft: int, real_axis: bool) -> tuple[np.ndarray, np.ndarray]:
    """1-D Fourier multipliers for (non-corner, corner) axes.

    With the reversed kernel at the buffer origin, a non-corner axis needs a
    one-sample delay and a corner axis the two-tap mean (delay 0 and 1).
    """
    k = np.arange(n_fft // 2 + 1 if real_axis else n_fft)
    delay = np.exp(-2j * np.pi * k / n_fft)
    return delay, 0.5 * (1.0 + delay)


def _outer3(a, b, c):
    return a[:, None, None] * b[None, :, None] * c[None, None, :]


def _indicator_spectra(white: np.ndarray, shape, workers: int) -> list[np.ndarray]:
    """Spectra of n_p, n_f, n_e, n_v indicator fields, element-averaging folded in."""
    mults = [_axis_multipliers(n, i == 2) for i, n in enumerate(shape)]
    spectra = [None, None, None, None]
    for corner in ELEMENT_CLASSES:
        ind = element_indicator(white, corner).astype(np.float64)
        spec = sfft.rfftn(ind, s=shape, workers=workers)
        spec *= _outer3(*(mults[i][int(c)] for i, c in enumerate(corner)))
        t = _class_type(corner)
        spectra[t] = spec if spectra[t] is None else spectra[t] + spec
    return spectra


def _fast_counts(white: np.ndarray, kernels: Sequence[Kernel], workers: int = 1) -> np.ndarray:
    """(nx, ny, nz, n_kernels, 4) weighted counts via FFT correlation."""
    s = kernels[0].size
    h = s // 2
    dims = white.shape
    shape = tuple(sfft.next_fast_len(n + s + 1, real=True) for n in dims)
    spectra = _indicator_spectra(white, shape, workers)
    out = np.empty(dims + (len(kernels), 4))
    crop = tuple(slice(h + 1, h + 1 + n) for n in dims)
    for d, kernel in enumerate(kernels):
        kspec = sfft.rfftn(kernel.weights[::-1, ::-1, ::-1], s=shape, workers=workers)
        for t in range(4):
            full = sfft.irfftn(kspec * spectra[t], s=shape, workers=workers)
            out[..., d, t] = full[crop]
    return out


def volume_response_field(volume: BinaryVolume, kernels: Sequence[Kernel], workers: int = 1) -> np.ndarray:
    """Volume-functional responses only, (nx, ny, nz, n_kernels); black voxels zero.

    Cheaper than :func:`amf_field` when only the weighted voxel count is needed.
    """
    white = volume.data
    s = kernels[0].size
    h = s // 2
    shape = tuple(sfft.next_fast_len(n + s - 1, real=True) for n in white.shape)
    bspec = sfft.rfftn(white.astype(np.float64), s=shape, workers=workers)
    crop = tuple(slice(h, h + n) for n in white.shape)
    out = np.empty(white.shape + (len(kernels),))
    for d, kernel in enumerate(kernels):
        kspec = sfft.rfftn(kernel.weights[::-1, ::-1, ::-1], s=shape, workers=workers)
        out[..., d] = sfft.irfftn(kspec * bspec, s=shape, workers=workers)[crop]
    out[~white] = 0.0
    return out


def amf_field(volume: BinaryVolume, kernels: Sequence[Kernel], mode: str = "fast",
              workers: int = 1) -> AMFResponses:
    """Weighted functionals for every white voxel and every kernel.

    ``mode="oracle"`` evaluates each white voxel's window directly, single
    threaded; ``mode="fast"`` obtains the same numbers by FFT correlation of
    the element indicator fields with the kernels.
    """
    kernels = list(kernels)
    if not kernels:
        raise ValueError("need at least one kernel")
    sizes = {k.size for k in kernels}
    if len(sizes) != 1:
        raise ValueError(f"kernels must share one size, got {sorted(sizes)}")
    white = volume.data
    values = np.zeros(white.shape + (len(kernels), 4))
    if white.any():
        if mode == "fast":
            values = _mf_rows(_fast_counts(white, kernels, workers))
            values[~white] = 0.0
        elif mode == "oracle":
            oracle = _WindowOracle(white, kernels)
            for center in zip(*np.nonzero(white)):
                values[center] = _mf_rows(oracle.counts(center))
        else:
            raise ValueError(f"unknown mode {mode!r}; expected 'fast' or 'oracle'")
        values[np.abs(values) < RESPONSE_FLOOR] = 0.0
    return AMFResponses(values, white.copy(), tuple(k.direction for k in kernels))


# --------------------------------------------------------------------------
# responses.bin

RESPONSES_MAGIC = b"AMFRESP1"


def save_responses(field: AMFResponses, path, config_hash: str = "") -> None:
    """Raw field dump.

    Layout: 8-byte magic ``AMFRESP1``; five little-endian int64 (nx, ny, nz,
    n_directions, n_functionals); 64 ASCII bytes of config hash (space
    padded); then float64 little-endian values, voxel-major with x fastest,
    each voxel a directions x functionals block in row-major order.
    """
    nx, ny, nz, nd, nm = field.values.shape
    header = RESPONSES_MAGIC + np.array([nx, ny, nz, nd, nm], dtype="<i8").tobytes()
    header += config_hash.encode("ascii").ljust(64)[:64]
    payload = np.ascontiguousarray(field.values.transpose(2, 1, 0, 3, 4)).astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + payload)


def load_responses(path, directions: Sequence[DirectionSpec]) -> tuple[AMFResponses, str]:
    """Inverse of :func:`save_responses`.

    The white mask is recovered from the volume responses: a white voxel
    always carries its own strictly positive centre weight.
    """
    raw = open(path, "rb").read()
    if raw[:8] != RESPONSES_MAGIC:
        raise ValueError(f"{path}: not an amfkit responses file")
    nx, ny, nz, nd, nm = (int(v) for v in np.frombuffer(raw[8:48], dtype="<i8"))
    config_hash = raw[48:112].decode("ascii").strip()
    body = np.frombuffer(raw[112:], dtype="<f8")
    if body.size != nx * ny * nz * nd * nm:
        raise ValueError(f"{path}: payload length does not match header")
    values = body.reshape(nz, ny, nx, nd, nm).transpose(2, 1, 0, 3, 4).copy()
    if len(directions) != nd:
        raise ValueError(f"{path}: holds {nd} directions, {len(directions)} supplied")
    white = values[..., 0].max(axis=-1) > 0
    return AMFResponses(values, white, tuple(directions)), config_hash
