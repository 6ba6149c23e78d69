"""Oriented (elongated) Gaussian weighting kernels on the 13 lattice directions."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_SIZE = 17
DEFAULT_SIGMA_MAJOR = 4.0
AXIS_RATIO = 4.0


@dataclass(frozen=True)
class DirectionSpec:
    index: int
    u: tuple[float, float, float]
    theta: float
    phi: float


def in_canonical_hemisphere(v, tol: float = 0.0) -> bool:
    x, y, z = v
    if z > tol:
        return True
    if abs(z) <= tol:
        if y > tol:
            return True
        return abs(y) <= tol and x > tol
    return False


def orientation_angles(v) -> tuple[float, float]:
    """(theta, phi) of a unit vector already in the canonical hemisphere.

    theta is the azimuth in [0, 2*pi); phi the elevation above the X-Y plane
    in [0, pi/2].  theta is 0 when v is within 1e-9 of the z-axis.  Vectors
    on the equator have y >= 0 by the hemisphere rule, so theta < pi there.
    """
    x, y, z = (float(c) for c in v)
    phi = math.asin(min(1.0, abs(z)))
    if math.hypot(x, y) <= 1e-9:
        return 0.0, phi
    theta = math.atan2(y, x)
    if theta < 0:
        theta += 2 * math.pi
    if theta >= 2 * math.pi:
        theta = 0.0
    return theta, phi


def direction_set_13() -> list[DirectionSpec]:
    """Canonical half of the 26-neighbourhood: 3 axes, 6 face and 4 body diagonals."""
    offsets = [o for o in itertools.product((-1, 0, 1), repeat=3)
               if any(o) and in_canonical_hemisphere(o)]
    # axes first, then face diagonals, then body diagonals
    offsets.sort(key=lambda o: (sum(map(abs, o)), o[::-1]))
    dirs = []
    for i, o in enumerate(offsets):
        norm = math.sqrt(sum(c * c for c in o))
        u = tuple(c / norm for c in o)
        theta, phi = orientation_angles(u)
        dirs.append(DirectionSpec(i, u, theta, phi))
    return dirs


@dataclass(frozen=True, eq=False)
class Kernel:
    direction: DirectionSpec
    weights: np.ndarray
    sigma_major: float
    sigma_minor: float

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def half(self) -> int:
        return self.weights.shape[0] // 2

    def as_volume(self):
        from .volume_io import GrayVolume
        return GrayVolume(self.weights, unit="none")


def _check_params(size: int, sigma: float) -> None:
    if size < 3 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 3, got {size}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")


def make_kernel(direction: DirectionSpec, size: int = DEFAULT_SIZE,
                sigma_major: float = DEFAULT_SIGMA_MAJOR, ratio: float = AXIS_RATIO) -> Kernel:
    """Gaussian elongated along ``direction.u``, truncated to size^3 and renormalised.

    The covariance has variance sigma_major^2 along u and (sigma_major/ratio)^2
    across it.  ``ratio=1`` gives the spherical control kernel.
    """
    _check_params(size, sigma_major)
    if not ratio >= 1:
        raise ValueError(f"axis ratio must be >= 1, got {ratio}")
    sigma_minor = sigma_major / ratio
    h = size // 2
    r = np.arange(-h, h + 1, dtype=np.float64)
    dx, dy, dz = np.meshgrid(r, r, r, indexing="ij")
    ux, uy, uz = direction.u
    along = dx * ux + dy * uy + dz * uz
    along2 = along * along
    across2 = (dx * dx + dy * dy + dz * dz) - along2
    q = along2 / sigma_major ** 2 + np.maximum(across2, 0.0) / sigma_minor ** 2
    w = np.exp(-0.5 * q)
    # fsum: total independent of traversal order, so axis-permuted kernels stay exact permutations
    w = w / math.fsum(w.ravel())
    w.flags.writeable = False
    return Kernel(direction, w, float(sigma_major), float(sigma_minor))


def isotropic_kernel(size: int = DEFAULT_SIZE, sigma: float = DEFAULT_SIGMA_MAJOR) -> Kernel:
    z = DirectionSpec(2, (0.0, 0.0, 1.0), 0.0, math.pi / 2)
    return make_kernel(z, size, sigma, ratio=1.0)


def kernel_bank(size: int = DEFAULT_SIZE, sigma_major: float = DEFAULT_SIGMA_MAJOR) -> list[Kernel]:
    return [make_kernel(d, size, sigma_major) for d in direction_set_13()]


def isotropic_bank(size: int = DEFAULT_SIZE, sigma: float = DEFAULT_SIGMA_MAJOR) -> list[Kernel]:
    """Spherical kernel in all 13 slots, each tagged with its slot's direction."""
    iso = isotropic_kernel(size, sigma)
    return [Kernel(d, iso.weights, iso.sigma_major, iso.sigma_minor) for d in direction_set_13()]
