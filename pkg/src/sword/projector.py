"""Fan-beam forward/back projection with Siddon's exact ray traversal.

Geometry: at view angle ``beta`` the source sits at ``R_s * (cos b, sin b)``
and the flat detector is centred at ``-R_d * (cos b, sin b)`` with its
elements laid out along ``(-sin b, cos b)``.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument
from .phantom import GridSpec, Image

# Above this many estimated (ray, pixel) pairs the system matrix is not cached.
_MATRIX_NNZ_LIMIT = 2.5e7
_RAY_CHUNK = 16384


@dataclass(frozen=True)
class FanBeamGeometry:
    source_to_center_cm: float = 40.0
    center_to_detector_cm: float = 40.0
    detector_width_cm: float = 41.3
    n_detectors: int = 720
    n_views: int = 720

    def __post_init__(self):
        for name in ("source_to_center_cm", "center_to_detector_cm", "detector_width_cm"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        for name in ("n_detectors", "n_views"):
            v = getattr(self, name)
            if int(v) != v or v <= 0:
                raise InvalidArgument(f"{name} must be a positive integer")

    @property
    def view_angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n_views) / self.n_views

    @property
    def angular_step(self) -> float:
        return 2 * np.pi / self.n_views

    @property
    def detector_spacing(self) -> float:
        return self.detector_width_cm / self.n_detectors

    @property
    def detector_offsets(self) -> np.ndarray:
        """Signed element-centre positions along the detector, in cm."""
        return (np.arange(self.n_detectors) - (self.n_detectors - 1) / 2) * self.detector_spacing

    @property
    def magnification(self) -> float:
        return (self.source_to_center_cm + self.center_to_detector_cm) / self.source_to_center_cm

    @property
    def fov_radius(self) -> float:
        """Radius of the disk seen by every view."""
        half = self.detector_width_cm / 2 / self.magnification
        r = self.source_to_center_cm
        return r * half / np.hypot(r, half)

    def as_tuple(self):
        return (self.source_to_center_cm, self.center_to_detector_cm, self.detector_width_cm,
                float(self.n_detectors), float(self.n_views))

    def with_views(self, n_views: int) -> "FanBeamGeometry":
        return FanBeamGeometry(self.source_to_center_cm, self.center_to_detector_cm,
                               self.detector_width_cm, self.n_detectors, int(n_views))


@dataclass
class Sinogram:
    geometry: FanBeamGeometry
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        shape = (self.geometry.n_views, self.geometry.n_detectors)
        if self.data.shape != shape:
            raise InvalidArgument(f"sinogram shape {self.data.shape} != geometry {shape}")
        if not np.all(np.isfinite(self.data)):
            raise InvalidArgument("sinogram contains non-finite values")


@dataclass(frozen=True)
class ViewMask:
    total_views: int
    kept_indices: tuple

    def __post_init__(self):
        kept = tuple(int(k) for k in self.kept_indices)
        object.__setattr__(self, "kept_indices", kept)
        if not kept:
            raise InvalidArgument("view mask keeps no views")
        if any(b <= a for a, b in zip(kept, kept[1:])):
            raise InvalidArgument("kept view indices must be strictly increasing")
        if kept[0] < 0 or kept[-1] >= self.total_views:
            raise InvalidArgument("kept view index out of range")

    @property
    def n_kept(self) -> int:
        return len(self.kept_indices)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.kept_indices, dtype=np.intp)

    def boolean(self) -> np.ndarray:
        m = np.zeros(self.total_views, dtype=bool)
        m[self.as_array()] = True
        return m


@dataclass
class SparseSinogram:
    mask: ViewMask
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] != self.mask.n_kept:
            raise InvalidArgument(
                f"sparse data has {self.data.shape[0]} rows, mask keeps {self.mask.n_kept}")


def default_geometry(n_views: int = 720, n_detectors: int = 720) -> FanBeamGeometry:
    return FanBeamGeometry(40.0, 40.0, 41.3, n_detectors, n_views)


def _ray_endpoints(geo: FanBeamGeometry, views: np.ndarray):
    beta = geo.view_angles[views]
    c, s = np.cos(beta), np.sin(beta)
    t = geo.detector_offsets
    sx = np.repeat(geo.source_to_center_cm * c, geo.n_detectors)
    sy = np.repeat(geo.source_to_center_cm * s, geo.n_detectors)
    dx = (-geo.center_to_detector_cm * c)[:, None] - s[:, None] * t[None, :]
    dy = (-geo.center_to_detector_cm * s)[:, None] + c[:, None] * t[None, :]
    return sx, sy, dx.ravel(), dy.ravel()


def siddon(grid: GridSpec, sx, sy, dx, dy):
    """Trace rays from (sx, sy) to (dx, dy) through ``grid``.

    Returns ``(ray, pixel, length)`` triplets, one per non-empty ray/pixel
    intersection; ``pixel`` is the flat index ``iy * n + ix``.
    """
    sx, sy, dx, dy = (np.asarray(v, dtype=np.float64) for v in (sx, sy, dx, dy))
    n, p = grid.n, grid.pixel
    lo = -grid.fov / 2
    edges = lo + np.arange(n + 1) * p
    vx, vy = dx - sx, dy - sy
    length = np.hypot(vx, vy)

    with np.errstate(divide="ignore", invalid="ignore"):
        ax = (edges[None, :] - sx[:, None]) / vx[:, None]
        ay = (edges[None, :] - sy[:, None]) / vy[:, None]

    def box(a, start, v):
        inside = (start >= lo) & (start < lo + grid.fov)
        amin = np.where(v != 0, np.minimum(a[:, 0], a[:, -1]), np.where(inside, -np.inf, np.inf))
        amax = np.where(v != 0, np.maximum(a[:, 0], a[:, -1]), np.where(inside, np.inf, -np.inf))
        return amin, amax

    axmin, axmax = box(ax, sx, vx)
    aymin, aymax = box(ay, sy, vy)
    amin = np.maximum.reduce([np.zeros_like(sx), axmin, aymin])
    amax = np.minimum.reduce([np.ones_like(sx), axmax, aymax])
    hit = amax > amin

    alphas = np.concatenate([ax, ay, amin[:, None], amax[:, None]], axis=1)
    outside = ~np.isfinite(alphas) | (alphas < amin[:, None]) | (alphas > amax[:, None])
    alphas = np.where(outside, amax[:, None], alphas)
    alphas.sort(axis=1)
    seg = np.diff(alphas, axis=1)
    mid = 0.5 * (alphas[:, 1:] + alphas[:, :-1])
    # pixel owns its low edge; the small guard keeps exact edge hits there
    ix = np.floor((sx[:, None] + mid * vx[:, None] - lo) / p + 1e-9).astype(np.intp)
    iy = np.floor((sy[:, None] + mid * vy[:, None] - lo) / p + 1e-9).astype(np.intp)
    ok = (seg > 0) & hit[:, None] & (ix >= 0) & (ix < n) & (iy >= 0) & (iy < n)
    ray = np.broadcast_to(np.arange(len(sx))[:, None], ok.shape)[ok]
    w = (seg * length[:, None])[ok]
    return ray, iy[ok] * n + ix[ok], w


def _view_chunks(geo: FanBeamGeometry):
    per = max(1, _RAY_CHUNK // geo.n_detectors)
    for start in range(0, geo.n_views, per):
        yield np.arange(start, min(start + per, geo.n_views))


def _check_fit(geo: FanBeamGeometry, grid: GridSpec):
    if grid.fov * np.sqrt(2) / 2 > geo.source_to_center_cm:
        raise InvalidArgument(
            f"grid (fov {grid.fov} cm) does not fit inside the source orbit "
            f"(radius {geo.source_to_center_cm} cm)")


@functools.lru_cache(maxsize=8)
def _cached_matrix(geo: FanBeamGeometry, grid: GridSpec) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for views in _view_chunks(geo):
        r, c, w = siddon(grid, *_ray_endpoints(geo, views))
        rows.append(r + views[0] * geo.n_detectors)
        cols.append(c)
        vals.append(w)
    shape = (geo.n_views * geo.n_detectors, grid.n * grid.n)
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=shape)
    mat.sum_duplicates()
    return mat


def system_matrix(geo: FanBeamGeometry, grid: GridSpec) -> sp.csr_matrix:
    """The full system matrix as CSR (rows are rays in view-major order)."""
    _check_fit(geo, grid)
    return _cached_matrix(geo, grid)


def _use_matrix(geo, grid) -> bool:
    return geo.n_views * geo.n_detectors * 2 * grid.n <= _MATRIX_NNZ_LIMIT


def forward_project(img: Image, geo: FanBeamGeometry) -> Sinogram:
    grid = img.grid
    _check_fit(geo, grid)
    x = img.data.ravel()
    if _use_matrix(geo, grid):
        out = system_matrix(geo, grid) @ x
        return Sinogram(geo, out.reshape(geo.n_views, geo.n_detectors))
    out = np.zeros((geo.n_views, geo.n_detectors))
    for views in _view_chunks(geo):
        r, c, w = siddon(grid, *_ray_endpoints(geo, views))
        block = np.bincount(r, weights=w * x[c], minlength=len(views) * geo.n_detectors)
        out[views] = block.reshape(len(views), geo.n_detectors)
    return Sinogram(geo, out)


def back_project(sino: Sinogram, geo: FanBeamGeometry, grid: GridSpec) -> Image:
    """Transpose of :func:`forward_project` (same weights, scattered)."""
    if sino.geometry != geo:
        raise InvalidArgument("sinogram geometry does not match the requested geometry")
    _check_fit(geo, grid)
    y = sino.data
    if _use_matrix(geo, grid):
        img = system_matrix(geo, grid).T @ y.ravel()
        return Image(grid, img.reshape(grid.n, grid.n))
    img = np.zeros(grid.n * grid.n)
    for views in _view_chunks(geo):
        r, c, w = siddon(grid, *_ray_endpoints(geo, views))
        img += np.bincount(c, weights=w * y[views].ravel()[r], minlength=grid.n * grid.n)
    return Image(grid, img.reshape(grid.n, grid.n))


def ray_trace(geo: FanBeamGeometry, grid: GridSpec, view: int, detector: int):
    """Pixels crossed by one ray and the intersection lengths."""
    sx, sy, dx, dy = _ray_endpoints(geo, np.array([view]))
    _, pix, w = siddon(grid, sx[detector:detector + 1], sy[detector:detector + 1],
                       dx[detector:detector + 1], dy[detector:detector + 1])
    return pix, w


def view_mask(total: int, kept: int) -> ViewMask:
    if int(total) != total or total <= 0 or int(kept) != kept or kept <= 0:
        raise InvalidArgument("view counts must be positive integers")
    if kept > total:
        raise InvalidArgument(f"cannot keep {kept} of {total} views")
    if total % kept == 0:
        idx = np.arange(kept) * (total // kept)
    else:
        idx = np.floor(np.arange(kept) * total / kept + 0.5).astype(int)
    return ViewMask(int(total), tuple(int(i) for i in idx))


def subsample(sino: Sinogram, mask: ViewMask) -> SparseSinogram:
    if mask.total_views != sino.geometry.n_views:
        raise InvalidArgument(
            f"mask covers {mask.total_views} views, sinogram has {sino.geometry.n_views}")
    return SparseSinogram(mask, sino.data[mask.as_array()].copy())


def zero_fill(sparse: SparseSinogram, geo: FanBeamGeometry) -> Sinogram:
    if sparse.mask.total_views != geo.n_views or sparse.data.shape[1] != geo.n_detectors:
        raise InvalidArgument("sparse sinogram does not match geometry")
    full = np.zeros((geo.n_views, geo.n_detectors))
    full[sparse.mask.as_array()] = sparse.data
    return Sinogram(geo, full)
