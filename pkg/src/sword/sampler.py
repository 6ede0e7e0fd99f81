"""Stage-by-stage predictor-corrector reconstruction in the Haar domain.

Per reverse iteration (noise level ``sigma_{i+1} -> sigma_i``):

1. full-band stack ``X1``: predictor, data consistency, corrector(s), data
   consistency;
2. detail stack ``X2``: the same sequence with the detail-band model and the
   detail-band consistency step ``X2 <- X2 - eta2 (X2 - E(X1))``;
3. merge: the detail bands of ``X1`` are replaced by ``X2``.

The final sinogram is assembled from ``LL(X1)`` and ``X2``, made consistent
with the measured views once more, and reconstructed with FBP.

Predictor and corrector run in each score model's own (normalised) frame;
data consistency and merging work on raw sub-band values.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .diffusion import NoiseSchedule, _as_array
from .errors import InvalidArgument, SamplerDiverged
from .fbp import FilterSpec, fbp_reconstruct
from .phantom import GridSpec, Image
from .projector import FanBeamGeometry, Sinogram, SparseSinogram
from .wavelet import HighFreqStack, SubbandStack, haar2, ihaar2

log = logging.getLogger(__name__)

MODES = ("sword", "wfdm-only", "whdm-only")
DC_MODES = ("rows", "literal", "coupled")


@dataclass
class SamplerConfig:
    schedule: NoiseSchedule = field(default_factory=lambda: NoiseSchedule(0.01, 50.0, 1450))
    eta: float = 1.0
    eta2: float = 0.5
    snr: float = 0.16
    corrector_steps_per_iter: int = 1
    seed: int = 0
    mode: str = "sword"
    dc_mode: str = "rows"
    lambda1: float = 0.1
    noisy_measurements: bool = False
    schedule_high: Optional[NoiseSchedule] = None
    filter: FilterSpec = field(default_factory=FilterSpec)
    check_every: int = 50
    log_every: int = 100

    def __post_init__(self):
        if not 0 < self.eta <= 1 or not 0 < self.eta2 <= 1:
            raise InvalidArgument("eta and eta2 must lie in (0, 1]")
        if not self.snr > 0:
            raise InvalidArgument("snr must be positive")
        if self.corrector_steps_per_iter < 0:
            raise InvalidArgument("corrector_steps_per_iter must be >= 0")
        if self.mode not in MODES:
            raise InvalidArgument(f"mode must be one of {MODES}")
        if self.dc_mode not in DC_MODES:
            raise InvalidArgument(f"dc_mode must be one of {DC_MODES}")
        if self.schedule_high is not None and self.schedule_high.T != self.schedule.T:
            raise InvalidArgument("both stages must use the same number of iterations")


@dataclass
class ReconState:
    X1: np.ndarray
    X2: np.ndarray
    i: int
    rng: np.random.Generator


# -- predictor / corrector --------------------------------------------------

def predictor_step(x, model, sigma_i: float, sigma_ip1: float, rng: np.random.Generator,
                   z=None) -> np.ndarray:
    """One reverse-diffusion step from ``sigma_ip1`` down to ``sigma_i``."""
    if not (sigma_ip1 > sigma_i >= 0):
        raise InvalidArgument(f"need sigma_ip1 > sigma_i >= 0, got {sigma_ip1}, {sigma_i}")
    x = _as_array(x)
    dvar = sigma_ip1**2 - sigma_i**2
    if z is None:
        z = rng.standard_normal(x.shape)
    return x + dvar * model(x, sigma_ip1) + np.sqrt(dvar) * z


def langevin_step_size(g, z, snr: float) -> float:
    gn = np.linalg.norm(g)
    if gn == 0:
        return 0.0
    return 2.0 * (snr * np.linalg.norm(z) / gn) ** 2


def corrector_step(x, model, sigma: float, snr: float, rng: np.random.Generator,
                   z=None) -> np.ndarray:
    """Annealed Langevin update with step ``2 (snr |z| / |g|)^2``.

    Norms are taken over the whole array. A zero score leaves ``x`` as is.
    """
    if not sigma > 0:
        raise InvalidArgument(f"corrector needs sigma > 0, got {sigma}")
    x = _as_array(x)
    g = model(x, sigma)
    if not np.any(g):
        return x.copy()
    if z is None:
        z = rng.standard_normal(x.shape)
    alpha = langevin_step_size(g, z, snr)
    return x + alpha * g + np.sqrt(2.0 * alpha) * z


def pc_sample(model, x_init, schedule: NoiseSchedule, snr: float = 0.16,
              corrector_steps: int = 1, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Unconditional reverse pass from ``x_init`` at ``sigma_max`` down to 0."""
    rng = rng or np.random.default_rng()
    x = _as_array(x_init).copy()
    for i in range(schedule.T - 1, -1, -1):
        s_i, s_ip1 = schedule.sigma(i), schedule.sigma(i + 1)
        x = predictor_step(x, model, s_i, s_ip1, rng)
        if s_i > 0:
            for _ in range(corrector_steps):
                x = corrector_step(x, model, s_i, snr, rng)
    return x


# -- data consistency ---------------------------------------------------------

def _check_rows(shape, y: SparseSinogram):
    views, dets = shape
    if y.mask.total_views != views or y.data.shape[1] != dets:
        raise InvalidArgument(
            f"measurements ({y.mask.total_views} views x {y.data.shape[1]} detectors) do not "
            f"match the stack ({views} x {dets})")


def dc_rows(planes: np.ndarray, y: SparseSinogram, eta: float) -> np.ndarray:
    """Relax the measured sinogram rows toward ``y``; other rows are untouched."""
    sino = ihaar2(planes)
    _check_rows(sino.shape, y)
    idx = y.mask.as_array()
    sino[idx] = (1.0 - eta) * sino[idx] + eta * y.data
    return haar2(sino)


def _zero_filled_planes(y: SparseSinogram, shape):
    full = np.zeros(shape)
    full[y.mask.as_array()] = y.data
    return haar2(full)


def data_consistency_full(X1: SubbandStack, y: SparseSinogram, eta: float) -> SubbandStack:
    if not 0 <= eta <= 1:
        raise InvalidArgument("eta must lie in [0, 1]")
    if eta == 0:
        return SubbandStack(X1.planes.copy(), X1.geometry)
    return SubbandStack(dc_rows(X1.planes, y, eta), X1.geometry)


def _relax_high(x2, target, eta2):
    # exact copy at eta2 = 1; the difference form keeps x2 == target a fixed point
    if eta2 == 1:
        return np.array(target, dtype=np.float64)
    return x2 - eta2 * (x2 - target)


def data_consistency_high(X2: HighFreqStack, X1: SubbandStack, eta2: float) -> HighFreqStack:
    if X2.planes.shape != X1.planes[1:].shape:
        raise InvalidArgument("detail stack and full stack have inconsistent shapes")
    return HighFreqStack(_relax_high(X2.planes, X1.planes[1:], eta2), X2.geometry)


def _dc_full(planes, y, cfg: SamplerConfig, X2=None):
    if cfg.dc_mode == "literal":
        target = _zero_filled_planes(y, (2 * planes.shape[1], 2 * planes.shape[2]))
        return planes - cfg.eta * (planes - target)
    out = dc_rows(planes, y, cfg.eta)
    if cfg.dc_mode == "coupled" and X2 is not None:
        out[1:] -= cfg.eta * cfg.lambda1 * (out[1:] - X2)
    return out


# -- full reconstruction ------------------------------------------------------

def _check_finite(state: ReconState):
    if not (np.all(np.isfinite(state.X1)) and np.all(np.isfinite(state.X2))):
        raise SamplerDiverged("non-finite values in the reconstruction state", state.i)


def _pc_block(x_raw, model, s_i, s_ip1, cfg, rng, consistency):
    x = model.from_model(predictor_step(model.to_model(x_raw), model, s_i, s_ip1, rng))
    x = consistency(x, s_i)
    if s_i > 0 and cfg.corrector_steps_per_iter:
        xm = model.to_model(x)
        for _ in range(cfg.corrector_steps_per_iter):
            xm = corrector_step(xm, model, s_i, cfg.snr, rng)
        x = consistency(model.from_model(xm), s_i)
    return x


def _noise_scale(model) -> float:
    scale = np.asarray(getattr(model, "scale", 1.0), dtype=np.float64)
    return float(scale.max())


def _check_models(m1, m2):
    for model, want in ((m1, 4), (m2, 3)):
        ch = getattr(model, "channels", None)
        if ch is not None and ch != want:
            raise InvalidArgument(f"expected a {want}-plane score model, got {ch} planes")


def sword_sinogram(y: SparseSinogram, geo: FanBeamGeometry, m1, m2, cfg: SamplerConfig,
                   callback: Optional[Callable[[ReconState], None]] = None) -> Sinogram:
    """Complete the full-view sinogram from sparse measurements ``y``."""
    _check_models(m1, m2)
    if y.mask.total_views != geo.n_views or y.data.shape[1] != geo.n_detectors:
        raise InvalidArgument("measurements do not match the geometry")
    if geo.n_views % 2 or geo.n_detectors % 2:
        raise InvalidArgument("view and detector counts must be even for the Haar transform")
    sched1 = cfg.schedule
    sched2 = cfg.schedule_high or cfg.schedule
    rng = np.random.default_rng(cfg.seed)
    half = (geo.n_views // 2, geo.n_detectors // 2)
    use_full = cfg.mode != "whdm-only"
    use_high = cfg.mode != "wfdm-only"

    if use_full:
        X1 = m1.from_model(sched1.sigma_max * rng.standard_normal((4,) + half))
    else:
        X1 = _zero_filled_planes(y, (geo.n_views, geo.n_detectors))
    X2 = m2.from_model(sched2.sigma_max * rng.standard_normal((3,) + half))
    state = ReconState(X1, X2, sched1.T, rng)
    idx = y.mask.as_array()
    raw_noise = _noise_scale(m1)

    def full_dc(planes, sigma):
        target = y
        if cfg.noisy_measurements and sigma > 0:
            target = SparseSinogram(y.mask, y.data + raw_noise * sigma * rng.standard_normal(y.data.shape))
        return _dc_full(planes, target, cfg, X2 if use_high else None)

    for i in range(sched1.T - 1, -1, -1):
        state.i = i
        if use_full:
            X1 = _pc_block(X1, m1, sched1.sigma(i), sched1.sigma(i + 1), cfg, rng, full_dc)
        else:
            X1 = _dc_full(X1, y, cfg)
        if use_high:
            X2 = _pc_block(X2, m2, sched2.sigma(i), sched2.sigma(i + 1), cfg, rng,
                           lambda p, _s: _relax_high(p, X1[1:], cfg.eta2))
            X1 = np.concatenate([X1[:1], X2])
        state.X1, state.X2 = X1, X2
        if cfg.check_every and i % cfg.check_every == 0:
            _check_finite(state)
        if cfg.log_every and i % cfg.log_every == 0:
            resid = np.linalg.norm(ihaar2(X1)[idx] - y.data)
            log.info("iter %d sigma %.4g measured-row residual %.3e", i, sched1.sigma(i), resid)
            if callback is not None:
                callback(state)
    _check_finite(state)

    final = X1 if not use_high else np.concatenate([X1[:1], X2])
    final = dc_rows(final, y, cfg.eta)
    return Sinogram(geo, ihaar2(final))


def sword_reconstruct(y: SparseSinogram, geo: FanBeamGeometry, grid: GridSpec, m1, m2,
                      cfg: SamplerConfig, callback=None):
    """Returns ``(image, completed full-view sinogram)``."""
    if cfg.schedule.T < 2:
        raise InvalidArgument("schedule needs at least two noise levels")
    sino = sword_sinogram(y, geo, m1, m2, cfg, callback)
    return fbp_reconstruct(sino, grid, cfg.filter), sino

