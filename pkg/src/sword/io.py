"""File formats: images, sinograms, view masks, sub-band stacks and score-model
checkpoints, plus 16-bit PNG export.

Every binary format starts with a four-byte magic and little-endian sizes;
a wrong magic or a truncated payload raises :class:`FormatError`.

=========  ====================================================================
``SWIM``   u32 n, u32 reserved, f32 fov, then n*n f64 (row ``iy``, column ``ix``)
``SWSN``   u32 n_views, u32 n_detectors, five f64 geometry values, then f64 rows
``SWX1``   u32 planes (4), u32 rows, u32 cols, then f64 planes
``SWX2``   same with 3 planes
``SWSM``   u32 header length, UTF-8 JSON header, then the f64 arrays it lists
=========  ====================================================================
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .diffusion import NoiseSchedule
from .errors import FormatError
from .phantom import GridSpec, Image
from .projector import FanBeamGeometry, Sinogram, ViewMask
from .scorenet import PatchScoreNet

_F64 = np.dtype("<f8")
CHECKPOINT_VERSION = 1


def _write(path, blob: bytes):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _expect_magic(blob: bytes, magic: bytes, path):
    if blob[:4] != magic:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {magic!r}")


def _f64(blob: bytes, offset: int, count: int, path) -> np.ndarray:
    need = offset + 8 * count
    if len(blob) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(blob)}")
    return np.frombuffer(blob, dtype=_F64, count=count, offset=offset).astype(np.float64)


# -- images -------------------------------------------------------------------

def save_image(img: Image, path):
    n, fov = img.grid.n, img.grid.fov
    head = b"SWIM" + struct.pack("<IIf", n, 0, fov)
    _write(path, head + np.ascontiguousarray(img.data, dtype=_F64).tobytes())


def load_image(path) -> Image:
    blob = _read(path)
    _expect_magic(blob, b"SWIM", path)
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header")
    n, _, fov = struct.unpack_from("<IIf", blob, 4)
    data = _f64(blob, 16, n * n, path).reshape(n, n)
    return Image(GridSpec(int(n), float(fov)), data)


def export_png(img: Image, path, window=None):
    """Lossless 16-bit PNG; the window ``(lo, hi)`` goes to ``<path>.window.txt``."""
    data = img.data
    lo, hi = (float(data.min()), float(data.max())) if window is None else map(float, window)
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip((data - lo) / span, 0.0, 1.0)
    # flip so that +y points up in the picture
    pixels = np.round(scaled[::-1] * 65535).astype(np.uint16)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(pixels).save(path, format="PNG")
    with open(str(path) + ".window.txt", "w") as fh:
        fh.write(f"lo {lo!r}\nhi {hi!r}\n")
    return lo, hi


# -- sinograms and masks -------------------------------------------------------

def save_sinogram(sino: Sinogram, path):
    geo = sino.geometry
    head = b"SWSN" + struct.pack("<II", geo.n_views, geo.n_detectors)
    head += struct.pack("<5d", *geo.as_tuple())
    _write(path, head + np.ascontiguousarray(sino.data, dtype=_F64).tobytes())


def load_sinogram(path) -> Sinogram:
    blob = _read(path)
    _expect_magic(blob, b"SWSN", path)
    if len(blob) < 52:
        raise FormatError(f"{path}: truncated header")
    views, dets = struct.unpack_from("<II", blob, 4)
    r_s, r_d, width, n_det, n_views = struct.unpack_from("<5d", blob, 12)
    if (int(n_det), int(n_views)) != (dets, views):
        raise FormatError(f"{path}: geometry block disagrees with the header sizes")
    geo = FanBeamGeometry(r_s, r_d, width, int(dets), int(views))
    data = _f64(blob, 52, views * dets, path).reshape(views, dets)
    return Sinogram(geo, data)


def save_mask(mask: ViewMask, path):
    lines = [str(mask.total_views)] + [str(k) for k in mask.kept_indices]
    _write(path, ("\n".join(lines) + "\n").encode())


def load_mask(path) -> ViewMask:
    try:
        values = [int(tok) for tok in _read(path).decode().split()]
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"{path}: mask file must hold integers ({exc})") from None
    if len(values) < 2:
        raise FormatError(f"{path}: mask file needs a total and at least one index")
    try:
        return ViewMask(values[0], tuple(values[1:]))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


# -- sub-band stacks -----------------------------------------------------------

def save_stack(planes: np.ndarray, path):
    planes = np.asarray(planes, dtype=np.float64)
    if planes.ndim != 3 or planes.shape[0] not in (3, 4):
        raise FormatError(f"stack must be (4|3, rows, cols), got {planes.shape}")
    magic = b"SWX1" if planes.shape[0] == 4 else b"SWX2"
    head = magic + struct.pack("<III", *planes.shape)
    _write(path, head + np.ascontiguousarray(planes, dtype=_F64).tobytes())


def load_stack(path) -> np.ndarray:
    blob = _read(path)
    if blob[:4] not in (b"SWX1", b"SWX2"):
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected b'SWX1' or b'SWX2'")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header")
    planes, rows, cols = struct.unpack_from("<III", blob, 4)
    if planes != (4 if blob[:4] == b"SWX1" else 3):
        raise FormatError(f"{path}: {blob[:4].decode()} file with {planes} planes")
    return _f64(blob, 16, planes * rows * cols, path).reshape(planes, rows, cols)


# -- score-model checkpoints ------------------------------------------------------

def _model_arrays(model: PatchScoreNet):
    arrays = {f"param.{k}": v for k, v in model.params.items()}
    arrays["norm.shift"] = model.shift
    arrays["norm.scale"] = model.scale
    if model.base == "gaussian":
        arrays["prior.mean"] = model.prior_mean
        arrays["prior.vecs"] = model.prior_vecs
        arrays["prior.vals"] = model.prior_vals
    return arrays


def save_model(model: PatchScoreNet, path):
    arrays = _model_arrays(model)
    sched = model.schedule
    header = {
        "version": CHECKPOINT_VERSION,
        "channels": model.channels, "patch": model.patch, "hidden": model.hidden,
        "blocks": model.blocks, "n_fourier": model.n_fourier, "base": model.base,
        "schedule": None if sched is None else [sched.sigma_min, sched.sigma_max, sched.T],
        "arrays": [[name, list(a.shape)] for name, a in arrays.items()],
    }
    text = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype=_F64).tobytes() for a in arrays.values())
    _write(path, b"SWSM" + struct.pack("<I", len(text)) + text + body)


def load_model(path) -> PatchScoreNet:
    blob = _read(path)
    _expect_magic(blob, b"SWSM", path)
    try:
        (size,) = struct.unpack_from("<I", blob, 4)
        header = json.loads(blob[8:8 + size].decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
        sched = header["schedule"]
        model = PatchScoreNet(header["channels"], header["patch"], header["hidden"],
                              header["blocks"], header["n_fourier"],
                              schedule=None if sched is None else NoiseSchedule(*sched),
                              base=header["base"])
        shapes = [(name, tuple(shape)) for name, shape in header["arrays"]]
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed checkpoint header ({exc})") from None
    total = sum(int(np.prod(s)) for _, s in shapes)
    flat = _f64(blob, 8 + size, total, path)
    offset = 0
    for name, shape in shapes:
        count = int(np.prod(shape))
        arr = flat[offset:offset + count].reshape(shape)
        offset += count
        group, key = name.split(".", 1)
        if group == "param":
            if key not in model.params or model.params[key].shape != shape:
                raise FormatError(f"{path}: unexpected parameter {key} {shape}")
            model.params[key] = arr.copy()
        elif name == "norm.shift":
            model.shift = arr.copy()
        elif name == "norm.scale":
            model.scale = arr.copy()
        elif name == "prior.mean":
            model.prior_mean = arr.copy()
        elif name == "prior.vecs":
            model.prior_vecs = arr.copy()
        elif name == "prior.vals":
            model.prior_vals = arr.copy()
        else:
            raise FormatError(f"{path}: unknown array {name}")
    return model
