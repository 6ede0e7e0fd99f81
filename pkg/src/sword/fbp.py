"""Fan-beam filtered backprojection for flat detectors (full 2*pi scans)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .phantom import GridSpec, Image
from .projector import FanBeamGeometry, Sinogram, SparseSinogram, zero_fill

FILTER_KINDS = ("ram-lak", "shepp-logan-window")


@dataclass(frozen=True)
class FilterSpec:
    kind: str = "ram-lak"
    cutoff: float = 1.0

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise InvalidArgument(f"unknown filter {self.kind!r}; expected one of {FILTER_KINDS}")
        if not 0 < self.cutoff <= 1:
            raise InvalidArgument(f"cutoff must lie in (0, 1], got {self.cutoff}")


def ramlak_kernel(n: np.ndarray, spacing: float) -> np.ndarray:
    """Spatial band-limited ramp kernel sampled at integer offsets ``n``."""
    n = np.asarray(n)
    h = np.zeros(n.shape)
    h[n == 0] = 1.0 / (4 * spacing**2)
    odd = (n % 2) == 1
    h[odd] = -1.0 / (np.pi * n[odd] * spacing) ** 2
    return h


def _padded_length(n: int) -> int:
    return 1 << int(np.ceil(np.log2(2 * n)))


def _filter_response(n_det: int, spacing: float, spec: FilterSpec) -> np.ndarray:
    size = _padded_length(n_det)
    offsets = np.arange(size)
    offsets = np.where(offsets <= size // 2, offsets, offsets - size)
    response = np.fft.fft(ramlak_kernel(offsets, spacing)).real
    freq = np.fft.fftfreq(size)
    if spec.kind == "shepp-logan-window":
        response = response * np.sinc(freq / spec.cutoff)
    if spec.cutoff < 1:
        response = np.where(np.abs(freq) <= 0.5 * spec.cutoff, response, 0.0)
    return response


def filter_rows(rows: np.ndarray, spacing: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Linear convolution of every row with the ramp kernel (no wrap-around)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    n_det = rows.shape[1]
    if n_det < 4:
        raise InvalidArgument("ramp filtering needs at least 4 detector elements")
    response = _filter_response(n_det, spacing, spec)
    spectrum = np.fft.fft(rows, n=len(response), axis=1)
    return np.fft.ifft(spectrum * response, axis=1).real[:, :n_det]


def ramp_filter_rows(sino: Sinogram, spec: FilterSpec = FilterSpec(), spacing=None) -> Sinogram:
    spacing = sino.geometry.detector_spacing if spacing is None else spacing
    return Sinogram(sino.geometry, filter_rows(sino.data, spacing, spec))


def _weighted_backprojection(rows, angles, weights, geo: FanBeamGeometry, grid: GridSpec,
                             spec: FilterSpec):
    r_src = geo.source_to_center_cm
    s = geo.detector_offsets / geo.magnification
    ds = geo.detector_spacing / geo.magnification
    q = rows * (r_src / np.sqrt(r_src**2 + s**2))[None, :]
    filtered = filter_rows(q, ds, spec) * ds
    xx, yy = grid.mesh()
    img = np.zeros((grid.n, grid.n))
    for beta, w, row in zip(angles, weights, filtered):
        c, sn = np.cos(beta), np.sin(beta)
        dist = r_src - (xx * c + yy * sn)
        s_proj = r_src * (-xx * sn + yy * c) / dist
        img += (w * 0.5) * (r_src / dist) ** 2 * np.interp(s_proj, s, row, left=0.0, right=0.0)
    img[np.hypot(xx, yy) > geo.fov_radius] = 0.0
    return img


def fbp_reconstruct(sino: Sinogram, grid: GridSpec, spec: FilterSpec = FilterSpec()) -> Image:
    """Cosine pre-weighting, ramp filter, distance-weighted backprojection.

    Pixels outside the disk seen by every view are set to zero.
    """
    geo = sino.geometry
    if not isinstance(grid, GridSpec):
        raise InvalidArgument("grid must be a GridSpec")
    weights = np.full(geo.n_views, geo.angular_step)
    return Image(grid, _weighted_backprojection(sino.data, geo.view_angles, weights, geo, grid, spec))


def fbp_sparse(sparse: SparseSinogram, geo: FanBeamGeometry, grid: GridSpec,
               spec: FilterSpec = FilterSpec()) -> Image:
    """FBP of the zero-filled sinogram, rescaled by ``total / kept``.

    Only measured views are backprojected, each weighted by ``2*pi / kept``.
    """
    full = zero_fill(sparse, geo)
    idx = sparse.mask.as_array()
    weights = np.full(len(idx), 2 * np.pi / len(idx))
    data = _weighted_backprojection(full.data[idx], geo.view_angles[idx], weights, geo, grid, spec)
    return Image(grid, data)
