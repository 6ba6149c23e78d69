"""Per-voxel eigen-analysis of directional responses: FA and principal orientation.

The 13 responses of one functional become the symmetric point cloud
``{+r_d u_d, -r_d u_d}``; its covariance ``(1/13) sum_d r_d^2 u_d u_d^T`` is
diagonalised and summarised by fractional anisotropy and the orientation
(theta, phi) of the leading eigenvector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kernelgen import DirectionSpec, orientation_angles
from .minkowski import FUNCTIONALS, AMFResponses

SYMMETRY_TOL = 1e-12
HEMISPHERE_TOL = 1e-12
POLE_TOL = 1e-9


@dataclass(frozen=True)
class AnisotropyResult:
    lambdas: tuple[float, float, float]
    principal: tuple[float, float, float]
    fa: float
    theta: float
    phi: float


@dataclass(frozen=True, eq=False)
class AnisotropyMap:
    """FA, theta and phi per voxel and functional, arrays shaped ``(nx, ny, nz, 4)``."""
    fa: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    white: np.ndarray

    @property
    def dims(self):
        return self.white.shape

    def quantity(self, name: str, functional: str) -> np.ndarray:
        arr = {"fa": self.fa, "theta": self.theta, "phi": self.phi}[name]
        return arr[..., FUNCTIONALS.index(functional)]


def _unit_matrix(directions: Sequence[DirectionSpec]) -> np.ndarray:
    return np.array([d.u for d in directions], dtype=np.float64)


def responses_to_points(row, directions: Sequence[DirectionSpec]) -> np.ndarray:
    """(26, 3) point cloud: each response scales its direction, mirrored through the origin."""
    r = np.asarray(row, dtype=np.float64)
    u = _unit_matrix(directions)
    pts = r[:, None] * u
    return np.concatenate([pts, -pts])


def point_covariance(points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    return p.T @ p / len(p)


def covariance_from_responses(responses, directions: Sequence[DirectionSpec]) -> np.ndarray:
    """Closed form of the point-cloud covariance for arrays of shape (..., 13)."""
    u = _unit_matrix(directions)
    r2 = np.asarray(responses, dtype=np.float64) ** 2
    return np.einsum("...d,di,dj->...ij", r2, u, u) / len(u)


def canonicalize(vectors: np.ndarray, tol: float = HEMISPHERE_TOL) -> np.ndarray:
    """Flip vectors (..., 3) into the hemisphere z > 0, then y > 0, then x > 0."""
    v = np.array(vectors, dtype=np.float64)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    zero_z = np.abs(z) <= tol
    flip = (z < -tol) | (zero_z & (y < -tol)) | (zero_z & (np.abs(y) <= tol) & (x < 0))
    v[flip] *= -1.0
    return v


def eig3_sym(c) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and eigenvectors (columns) of symmetric 3x3 matrices.

    Accepts a single matrix or a stack (..., 3, 3).  Eigenvector signs are
    canonicalised to the hemisphere rule.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) matrices, got {c.shape}")
    scale = np.maximum(1.0, np.abs(c).max(axis=(-2, -1), initial=0.0))
    asym = np.abs(c - np.swapaxes(c, -1, -2)).max(axis=(-2, -1), initial=0.0)
    if np.any(asym > SYMMETRY_TOL * scale):
        raise ValueError("matrix is not symmetric")
    lam, vec = np.linalg.eigh(c)
    lam = lam[..., ::-1]
    vec = vec[..., ::-1]
    vec = np.swapaxes(canonicalize(np.swapaxes(vec, -1, -2)), -1, -2)
    return lam, vec


# mantissa bits kept when snapping a covariance before extracting its axes
AXIS_GRID_BITS = 20


def principal_axes(c) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and canonical eigenvectors, robust to round-off in `c`.

    Eigenvectors come from `c` snapped to a grid of 2^-20 of its largest
    entry, so two computations of the same covariance that differ only by
    round-off resolve (near-)ties identically.  Eigenvalues are the Rayleigh
    quotients of those vectors on the unsnapped `c`, accurate to second order.
    """
    c = np.asarray(c, dtype=np.float64)
    top = np.abs(c).max(axis=(-2, -1), keepdims=True)
    _, e = np.frexp(np.where(top > 0, top, 1.0))
    q = np.ldexp(1.0, e - AXIS_GRID_BITS)
    _, vec = eig3_sym(np.round(c / q) * q)
    lam = np.einsum("...ji,...jk,...ki->...i", vec, c, vec)
    # within a snapped tie the quotients may swap order by round-off; keep them sorted
    return -np.sort(-lam, axis=-1), vec


def fractional_anisotropy(l1, l2, l3):
    """FA of eigenvalue triples; 0 for the all-zero triple.  Broadcasts over arrays."""
    l1, l2, l3 = (np.maximum(np.asarray(v, dtype=np.float64), 0.0) for v in (l1, l2, l3))
    num = np.sqrt((l1 - l2) ** 2 + (l2 - l3) ** 2 + (l3 - l1) ** 2)
    den = np.sqrt(2.0 * (l1 * l1 + l2 * l2 + l3 * l3))
    with np.errstate(invalid="ignore", divide="ignore"):
        fa = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    fa = np.clip(fa, 0.0, 1.0)
    return float(fa) if fa.ndim == 0 else fa


def _angles(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    phi = np.arcsin(np.clip(np.abs(z), 0.0, 1.0))
    theta = np.mod(np.arctan2(y, x), 2 * np.pi)
    theta = np.where(theta >= 2 * np.pi, 0.0, theta)
    theta = np.where(np.hypot(x, y) <= POLE_TOL, 0.0, theta)
    return theta, phi


def principal_direction(eigenvectors, lambdas=None) -> tuple[float, float]:
    """(theta, phi) of the leading eigenvector (first column)."""
    v = canonicalize(np.asarray(eigenvectors, dtype=np.float64)[:, 0])
    return orientation_angles(v)


def analyse_row(row, directions: Sequence[DirectionSpec]) -> AnisotropyResult:
    """Full pipeline for one voxel and one functional."""
    c = point_covariance(responses_to_points(row, directions))
    lam, vec = principal_axes(c)
    lam = np.maximum(lam, 0.0)
    if not lam.any():
        return AnisotropyResult((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), 0.0, 0.0, math.pi / 2)
    theta, phi = principal_direction(vec, lam)
    return AnisotropyResult(tuple(lam), tuple(vec[:, 0]), fractional_anisotropy(*lam), theta, phi)


def analyse_responses(responses, directions: Sequence[DirectionSpec]):
    """Vectorised FA, theta, phi for responses of shape (n, 13)."""
    r = np.asarray(responses, dtype=np.float64)
    lam, vec = principal_axes(covariance_from_responses(r, directions))
    lam = np.maximum(lam, 0.0)
    fa = fractional_anisotropy(lam[..., 0], lam[..., 1], lam[..., 2])
    lead = vec[..., :, 0]
    zero = ~lam.any(axis=-1)
    lead[zero] = (0.0, 0.0, 1.0)
    theta, phi = _angles(lead)
    return np.atleast_1d(fa), theta, phi


def anisotropy_map(field: AMFResponses, mask=None, functionals: Sequence[int] = range(4)) -> AnisotropyMap:
    """FA/theta/phi for every white voxel; black voxels hold zeros."""
    white = field.white if mask is None else np.asarray(getattr(mask, "data", mask), dtype=bool)
    if white.shape != field.values.shape[:3]:
        raise ValueError(f"mask dims {white.shape} do not match field dims {field.values.shape[:3]}")
    shape = white.shape + (4,)
    fa, theta, phi = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    rows = field.values[white]
    for m in functionals:
        if len(rows):
            f, t, p = analyse_responses(rows[:, :, m], field.directions)
            fa[white, m], theta[white, m], phi[white, m] = f, t, p
    return AnisotropyMap(fa, theta, phi, white.copy())


def volume_fa(volume_responses: np.ndarray, white: np.ndarray, directions) -> np.ndarray:
    """FA of the volume functional at the white voxels, from (nx, ny, nz, 13) responses."""
    fa, _, _ = analyse_responses(volume_responses[white], directions)
    return fa
