"""Square image grids and ellipse-composite test phantoms.

Pixel ``data[iy, ix]`` has its centre at
``x = -fov/2 + (ix + 0.5) * pixel``, ``y = -fov/2 + (iy + 0.5) * pixel``;
row index grows with ``y``. Lengths are in cm.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class GridSpec:
    n: int
    fov: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n <= 0:
            raise InvalidArgument(f"grid size must be a positive integer, got {self.n!r}")
        if not np.isfinite(self.fov) or self.fov <= 0:
            raise InvalidArgument(f"fov must be positive, got {self.fov!r}")

    @property
    def pixel(self) -> float:
        return self.fov / self.n

    def centers(self) -> np.ndarray:
        """1-D pixel-centre coordinates along either axis."""
        return -self.fov / 2 + (np.arange(self.n) + 0.5) * self.pixel

    def mesh(self):
        c = self.centers()
        return np.meshgrid(c, c, indexing="xy")


@dataclass
class Image:
    grid: GridSpec
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (self.grid.n, self.grid.n):
            raise InvalidArgument(
                f"image data shape {self.data.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(self.data)):
            raise InvalidArgument("image contains non-finite values")


@dataclass(frozen=True)
class EllipseSpec:
    cx: float
    cy: float
    a: float
    b: float
    rotation: float = 0.0
    intensity: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise InvalidArgument(f"ellipse semi-axes must be positive, got a={self.a}, b={self.b}")

    def contains(self, x, y):
        dx = np.asarray(x) - self.cx
        dy = np.asarray(y) - self.cy
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return (u / self.a) ** 2 + (v / self.b) ** 2 <= 1.0


def make_grid(n: int, fov: float) -> GridSpec:
    if int(n) != n or n < 8:
        raise InvalidArgument(f"grid needs n >= 8, got {n!r}")
    return GridSpec(int(n), float(fov))


def ellipse_phantom(grid: GridSpec, ellipses) -> Image:
    ellipses = list(ellipses)
    if not ellipses:
        raise InvalidArgument("ellipse list is empty")
    xx, yy = grid.mesh()
    data = np.zeros((grid.n, grid.n))
    for e in ellipses:
        data[e.contains(xx, yy)] += e.intensity
    return Image(grid, data)


def disk_phantom(grid: GridSpec, radius_cm: float, value: float = 1.0) -> Image:
    if not 0 < radius_cm < grid.fov / 2:
        raise InvalidArgument(f"disk radius {radius_cm} outside (0, {grid.fov / 2})")
    return ellipse_phantom(grid, [EllipseSpec(0.0, 0.0, radius_cm, radius_cm, 0.0, value)])


# Modified Shepp-Logan table (intensity, a, b, x0, y0, angle in degrees) on the unit square.
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0),
)


def shepp_logan_ellipses(grid: GridSpec, scale: float = 0.9):
    """The ten Shepp-Logan ellipses, sized to ``scale * fov / 2``."""
    half = scale * grid.fov / 2
    return [
        EllipseSpec(x0 * half, y0 * half, a * half, b * half, np.deg2rad(phi), amp)
        for amp, a, b, x0, y0, phi in _SHEPP_LOGAN
    ]


def random_ellipses(rng: np.random.Generator, grid: GridSpec, n_inner: int = 6,
                    support: float = 0.45):
    """A random body ellipse plus ``n_inner`` interior features.

    Everything stays inside a disk of radius ``support * fov`` so the object
    fits the scanner's field of view.
    """
    rmax = support * grid.fov
    a0 = rng.uniform(0.7, 1.0) * rmax
    b0 = rng.uniform(0.6, 1.0) * a0
    body = EllipseSpec(0.0, 0.0, a0, b0, rng.uniform(0, np.pi), rng.uniform(0.8, 1.0))
    out = [body]
    for _ in range(n_inner):
        r = rng.uniform(0.05, 0.3) * a0
        a = r
        b = r * rng.uniform(0.4, 1.0)
        # keep features within the body's inscribed disk
        rho = rng.uniform(0, max(b0 - a, 1e-6))
        phi = rng.uniform(0, 2 * np.pi)
        out.append(EllipseSpec(rho * np.cos(phi), rho * np.sin(phi), a, b,
                               rng.uniform(0, np.pi), rng.uniform(-0.5, 0.5)))
    return out
