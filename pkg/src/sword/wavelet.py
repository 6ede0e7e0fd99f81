"""Single-level orthonormal 2-D Haar transform of sinograms.

Axis 0 is the view axis, axis 1 the detector axis. Band names give the
filter applied along (views, detectors): ``LH`` is low-pass over views and
high-pass over detectors, ``HL`` the reverse.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgument
from .projector import FanBeamGeometry, Sinogram, default_geometry

BANDS = ("LL", "LH", "HL", "HH")
_S = 1.0 / np.sqrt(2.0)


def _split(x, axis):
    even = np.take(x, np.arange(0, x.shape[axis], 2), axis=axis)
    odd = np.take(x, np.arange(1, x.shape[axis], 2), axis=axis)
    return (even + odd) * _S, (even - odd) * _S


def _merge(lo, hi, axis):
    even, odd = (lo + hi) * _S, (lo - hi) * _S
    shape = list(lo.shape)
    shape[axis] *= 2
    out = np.empty(shape)
    idx = [slice(None)] * lo.ndim
    idx[axis] = slice(0, None, 2)
    out[tuple(idx)] = even
    idx[axis] = slice(1, None, 2)
    out[tuple(idx)] = odd
    return out


def haar2(x: np.ndarray) -> np.ndarray:
    """Array form of the forward transform: ``(rows, cols) -> (4, rows/2, cols/2)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] % 2 or x.shape[1] % 2:
        raise InvalidArgument(f"Haar transform needs an even-shaped 2-D array, got {x.shape}")
    lo, hi = _split(x, 0)
    ll, lh = _split(lo, 1)
    hl, hh = _split(hi, 1)
    return np.stack([ll, lh, hl, hh])


def ihaar2(planes: np.ndarray) -> np.ndarray:
    planes = np.asarray(planes, dtype=np.float64)
    if planes.ndim != 3 or planes.shape[0] != 4:
        raise InvalidArgument(f"expected a (4, h, w) plane stack, got {planes.shape}")
    ll, lh, hl, hh = planes
    return _merge(_merge(ll, lh, 1), _merge(hl, hh, 1), 0)


def _check_planes(planes, count, what):
    planes = np.asarray(planes, dtype=np.float64)
    if planes.ndim != 3 or planes.shape[0] != count:
        raise InvalidArgument(f"{what} needs {count} planes, got shape {planes.shape}")
    if not np.all(np.isfinite(planes)):
        raise InvalidArgument(f"{what} contains non-finite values")
    return planes


@dataclass
class SubbandStack:
    """The four sub-bands ``LL, LH, HL, HH`` as one ``(4, h, w)`` array."""

    planes: np.ndarray = field(repr=False)
    geometry: Optional[FanBeamGeometry] = None

    def __post_init__(self):
        self.planes = _check_planes(self.planes, 4, "SubbandStack")

    @property
    def ll(self):
        return self.planes[0]

    @property
    def shape(self):
        return self.planes.shape[1:]

    def high(self) -> "HighFreqStack":
        return extract_high(self)


@dataclass
class HighFreqStack:
    """The detail bands ``LH, HL, HH`` as one ``(3, h, w)`` array."""

    planes: np.ndarray = field(repr=False)
    geometry: Optional[FanBeamGeometry] = None

    def __post_init__(self):
        self.planes = _check_planes(self.planes, 3, "HighFreqStack")

    @property
    def shape(self):
        return self.planes.shape[1:]


def dwt2(sino) -> SubbandStack:
    """Accepts a :class:`Sinogram` or a bare even-shaped array."""
    if isinstance(sino, Sinogram):
        return SubbandStack(haar2(sino.data), sino.geometry)
    data = np.asarray(sino, dtype=np.float64)
    return SubbandStack(haar2(data), None)


def idwt2(stack: SubbandStack) -> Sinogram:
    data = ihaar2(stack.planes)
    geo = stack.geometry
    if geo is None:
        geo = default_geometry(n_views=data.shape[0], n_detectors=data.shape[1])
    return Sinogram(geo, data)


def extract_high(stack: SubbandStack) -> HighFreqStack:
    return HighFreqStack(stack.planes[1:].copy(), stack.geometry)


def embed_high(h: HighFreqStack, ll: np.ndarray) -> SubbandStack:
    ll = np.asarray(ll, dtype=np.float64)
    if ll.shape != h.shape:
        raise InvalidArgument(f"LL plane {ll.shape} does not match detail planes {h.shape}")
    return SubbandStack(np.concatenate([ll[None], h.planes]), h.geometry)
