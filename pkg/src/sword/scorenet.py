"""A small trainable score network for sub-band stacks, written directly in numpy.

The network scores ``p x p`` patches of all channels jointly. A full stack is
scored by tiling it with half-overlapping patches and averaging the patch
outputs. Noise-level conditioning uses Fourier features of ``log sigma``
followed by per-block FiLM modulation.

The noise prediction is a Gaussian skip path plus a residual MLP ``F``.
With ``base="unit"`` (inputs in a unit-variance frame, see
``fit_normalization``) it reads
``eps(x) = -sigma x / (1 + sigma^2) + F(x / sqrt(1 + sigma^2)) / sqrt(1 + sigma^2)``.
``base="gaussian"`` replaces the unit covariance by the mean and covariance of
training patches (``fit_patch_prior``): the skip path is then the exact noise
prediction of that Gaussian and ``F`` sees the whitened patch. ``base="none"``
drops the skip path, leaving the network to learn everything. The score is
``eps / sigma``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .diffusion import NoiseSchedule, _as_array
from .errors import InvalidArgument, TrainingDiverged

log = logging.getLogger(__name__)

_EVAL_CHUNK = 1024
BASES = ("none", "unit", "gaussian")


def _silu(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s, s


def _dsilu(x, s):
    return s * (1.0 + x * (1.0 - s))


def tile_positions(size: int, patch: int):
    if size < patch:
        raise InvalidArgument(f"plane size {size} is smaller than the patch size {patch}")
    stride = max(1, patch // 2)
    pos = list(range(0, size - patch + 1, stride))
    if pos[-1] != size - patch:
        pos.append(size - patch)
    return pos


class PatchScoreNet:
    def __init__(self, channels: int, patch: int = 8, hidden: int = 128, blocks: int = 2,
                 n_fourier: int = 8, seed: int = 0, schedule: Optional[NoiseSchedule] = None,
                 base: str = "unit"):
        if channels < 1 or patch < 1 or hidden < 1 or blocks < 0:
            raise InvalidArgument("network dimensions must be positive")
        if base not in BASES:
            raise InvalidArgument(f"base must be one of {BASES}")
        self.base = base
        self.channels = int(channels)
        self.patch = int(patch)
        self.hidden = int(hidden)
        self.blocks = int(blocks)
        self.n_fourier = int(n_fourier)
        self.schedule = schedule
        self.shift = np.zeros(self.channels)
        self.scale = np.ones(self.channels)
        self.freqs = np.geomspace(0.25, 4.0, self.n_fourier)
        self.params = self._init_params(np.random.default_rng(seed))
        self.prior_mean = np.zeros(self.dim)
        self.prior_vecs = np.eye(self.dim)
        self.prior_vals = np.ones(self.dim)

    @property
    def dim(self) -> int:
        return self.channels * self.patch * self.patch

    def _init_params(self, rng):
        d, h, e = self.dim, self.hidden, 2 * self.n_fourier

        def kaiming(fan_in, fan_out, gain=1.0):
            return rng.standard_normal((fan_in, fan_out)) * gain * np.sqrt(2.0 / fan_in)

        p = {
            "W_e": kaiming(e, h), "b_e": np.zeros(h),
            "W_in": kaiming(d, h, np.sqrt(0.5)), "b_in": np.zeros(h),
            "W_out": np.zeros((h, d)), "b_out": np.zeros(d),
        }
        for k in range(self.blocks):
            p[f"W1_{k}"] = kaiming(h, h)
            p[f"b1_{k}"] = np.zeros(h)
            p[f"Wg_{k}"] = np.zeros((h, h))
            p[f"bg_{k}"] = np.zeros(h)
            p[f"Wb_{k}"] = np.zeros((h, h))
            p[f"bb_{k}"] = np.zeros(h)
            p[f"W2_{k}"] = kaiming(h, h, 0.1)
            p[f"b2_{k}"] = np.zeros(h)
        return p

    def param_names(self):
        return list(self.params)

    # -- normalisation -------------------------------------------------

    def fit_normalization(self, dataset, scale=None):
        """Per-channel mean shift and one shared scale (overall std unless given).

        A single scale keeps the diffusion noise isotropic in raw sub-band
        units, which row-wise data consistency and stage merging rely on.
        """
        data = np.stack([_as_array(x) for x in dataset])
        if data.ndim != 4 or data.shape[1] != self.channels:
            raise InvalidArgument(f"dataset must hold ({self.channels}, h, w) stacks")
        self.shift = data.mean(axis=(0, 2, 3))
        if scale is None:
            scale = float(np.sqrt(np.mean((data - self.shift[None, :, None, None]) ** 2)))
        if not scale > 0:
            scale = 1.0
        self.scale = np.full(self.channels, float(scale))
        return self

    def fit_patch_prior(self, dataset, rng: np.random.Generator, n_patches: int = 20000,
                        floor: float = 1e-6):
        """Fit the Gaussian skip path to training patches in the model frame."""
        draw = _patch_sampler([self.to_model(x) for x in dataset], self.patch)
        pts = draw(rng, n_patches)
        mean = pts.mean(axis=0)
        cov = np.cov(pts, rowvar=False)
        vals, vecs = np.linalg.eigh(cov)
        self.prior_mean = mean
        self.prior_vecs = vecs
        self.prior_vals = np.maximum(vals, floor)
        self.base = "gaussian"
        return self

    def to_model(self, x):
        x = _as_array(x)
        return (x - self.shift[:, None, None]) / self.scale[:, None, None]

    def from_model(self, x):
        return np.asarray(x) * self.scale[:, None, None] + self.shift[:, None, None]

    # -- patch network ---------------------------------------------------

    def _features(self, sigma):
        ls = np.log(sigma)[:, None] * self.freqs[None, :]
        return np.concatenate([np.sin(ls), np.cos(ls)], axis=1)

    def forward(self, patches: np.ndarray, sigma: np.ndarray, keep=False):
        """Noise prediction for flattened patches ``(B, dim)`` at levels ``sigma (B,)``."""
        p = self.params
        c_in = 1.0 / np.sqrt(1.0 + sigma**2)
        if self.base == "gaussian":
            proj = (patches - self.prior_mean) @ self.prior_vecs
            inv = 1.0 / (self.prior_vals[None, :] + sigma[:, None] ** 2)
            skip = -(sigma[:, None] * proj * inv) @ self.prior_vecs.T
            xin = proj * np.sqrt(inv)
        else:
            xin = patches * c_in[:, None]
            skip = -(sigma * c_in**2)[:, None] * patches if self.base == "unit" else 0.0
        c_out = c_in if self.base != "none" else np.ones_like(sigma)
        feats = self._features(sigma)
        pre_e = feats @ p["W_e"] + p["b_e"]
        emb, s_e = _silu(pre_e)
        h = xin @ p["W_in"] + p["b_in"]
        cache = []
        for k in range(self.blocks):
            a, s_a = _silu(h)
            u = a @ p[f"W1_{k}"] + p[f"b1_{k}"]
            g = emb @ p[f"Wg_{k}"] + p[f"bg_{k}"]
            bt = emb @ p[f"Wb_{k}"] + p[f"bb_{k}"]
            m = u * (1.0 + g) + bt
            v, s_m = _silu(m)
            if keep:
                cache.append((h, s_a, a, u, g, m, s_m, v))
            h = h + v @ p[f"W2_{k}"] + p[f"b2_{k}"]
        out = (h @ p["W_out"] + p["b_out"]) * c_out[:, None] + skip
        if keep:
            return out, (xin, feats, pre_e, s_e, emb, cache, h, c_out)
        return out

    def backward(self, dout, state):
        p = self.params
        xin, feats, pre_e, s_e, emb, cache, h, c_out = state
        dout = dout * c_out[:, None]
        g = {}
        g["W_out"] = h.T @ dout
        g["b_out"] = dout.sum(0)
        dh = dout @ p["W_out"].T
        demb = np.zeros_like(emb)
        for k in reversed(range(self.blocks)):
            h_in, s_a, a, u, gam, m, s_m, v = cache[k]
            g[f"W2_{k}"] = v.T @ dh
            g[f"b2_{k}"] = dh.sum(0)
            dm = (dh @ p[f"W2_{k}"].T) * _dsilu(m, s_m)
            du = dm * (1.0 + gam)
            dg = dm * u
            g[f"Wg_{k}"] = emb.T @ dg
            g[f"bg_{k}"] = dg.sum(0)
            g[f"Wb_{k}"] = emb.T @ dm
            g[f"bb_{k}"] = dm.sum(0)
            demb += dg @ p[f"Wg_{k}"].T + dm @ p[f"Wb_{k}"].T
            g[f"W1_{k}"] = a.T @ du
            g[f"b1_{k}"] = du.sum(0)
            dh = dh + (du @ p[f"W1_{k}"].T) * _dsilu(h_in, s_a)
        g["W_in"] = xin.T @ dh
        g["b_in"] = dh.sum(0)
        dpre = demb * _dsilu(pre_e, s_e)
        g["W_e"] = feats.T @ dpre
        g["b_e"] = dpre.sum(0)
        return g

    def loss_and_grad(self, x0_patches, sigma, z):
        """Weighted DSM loss ``mean ||sigma * score + z||^2`` on patches, and its gradient."""
        xt = x0_patches + sigma[:, None] * z
        out, state = self.forward(xt, sigma, keep=True)
        resid = out + z
        loss = float(np.mean(np.sum(resid**2, axis=1)))
        grads = self.backward(2.0 * resid / len(resid), state)
        return loss, grads

    # -- full stacks -------------------------------------------------------

    def _score_one(self, x, sigma):
        c, hh, ww = x.shape
        if c != self.channels:
            raise InvalidArgument(f"model expects {self.channels} planes, got {c}")
        rows, cols = tile_positions(hh, self.patch), tile_positions(ww, self.patch)
        windows = sliding_window_view(x, (self.patch, self.patch), axis=(1, 2))
        patches = windows[:, rows][:, :, cols]                       # (C, R, K, p, p)
        patches = patches.transpose(1, 2, 0, 3, 4).reshape(-1, self.dim)
        out = np.empty_like(patches)
        for start in range(0, len(patches), _EVAL_CHUNK):
            chunk = patches[start:start + _EVAL_CHUNK]
            out[start:start + _EVAL_CHUNK] = self.forward(chunk, np.full(len(chunk), sigma))
        out = out.reshape(len(rows), len(cols), c, self.patch, self.patch)
        acc = np.zeros_like(x)
        count = np.zeros((hh, ww))
        for i, r in enumerate(rows):
            for j, q in enumerate(cols):
                acc[:, r:r + self.patch, q:q + self.patch] += out[i, j]
                count[r:r + self.patch, q:q + self.patch] += 1.0
        return acc / count / sigma

    def __call__(self, x, sigma):
        x = _as_array(x)
        if x.ndim == 3:
            return self._score_one(x, float(sigma))
        sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (len(x),))
        return np.stack([self._score_one(xi, float(si)) for xi, si in zip(x, sig)])


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    schedule: Optional[NoiseSchedule] = None
    ema: float = 0.99
    cosine_decay: bool = True
    log_every: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise InvalidArgument("steps must be >= 0 and batch_size >= 1")
        if self.lr < 0:
            raise InvalidArgument("learning rate must be >= 0")
        if not 0 <= self.ema < 1:
            raise InvalidArgument("ema decay must lie in [0, 1)")


class Adam:
    def __init__(self, params, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _patch_sampler(dataset, patch):
    data = np.stack([_as_array(x) for x in dataset])
    if data.ndim != 4:
        raise InvalidArgument("dataset must be a list of (C, h, w) stacks of equal shape")
    windows = sliding_window_view(data, (patch, patch), axis=(2, 3))

    def draw(rng, n):
        idx = rng.integers(len(data), size=n)
        r = rng.integers(windows.shape[2], size=n)
        c = rng.integers(windows.shape[3], size=n)
        return windows[idx, :, r, c].reshape(n, -1)

    return draw


def suggest_sigma_max(model: PatchScoreNet, dataset, rng: np.random.Generator,
                      n_patches: int = 1000) -> float:
    """Largest pairwise distance between sampled training patches (model frame)."""
    draw = _patch_sampler([model.to_model(x) for x in dataset], model.patch)
    pts = draw(rng, n_patches)
    sq = np.sum(pts**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2 * pts @ pts.T
    return float(np.sqrt(max(d2.max(), 0.0)))


def train_score(model: PatchScoreNet, dataset, cfg: TrainConfig) -> PatchScoreNet:
    """Adam on the patch DSM loss.

    The returned model carries an exponential moving average of the iterates
    (decay ``cfg.ema``; 0 keeps the raw iterate) and ``model.loss_trace``.
    """
    dataset = list(dataset)
    if not dataset:
        raise InvalidArgument("training dataset is empty")
    shapes = {_as_array(x).shape for x in dataset}
    if len(shapes) != 1:
        raise InvalidArgument(f"training stacks differ in shape: {sorted(shapes)}")
    schedule = cfg.schedule or model.schedule
    if schedule is None:
        raise InvalidArgument("no noise schedule given")
    model.schedule = schedule
    rng = np.random.default_rng(cfg.seed)
    draw = _patch_sampler([model.to_model(x) for x in dataset], model.patch)
    opt = Adam(model.params, lr=cfg.lr)
    averaged = {k: v.copy() for k, v in model.params.items()}
    trace = []
    for step in range(cfg.steps):
        x0 = draw(rng, cfg.batch_size)
        sigma = schedule.sigmas[rng.integers(schedule.T, size=cfg.batch_size)]
        z = rng.standard_normal(x0.shape)
        loss, grads = model.loss_and_grad(x0, sigma, z)
        if not np.isfinite(loss):
            raise TrainingDiverged("training loss is not finite", step)
        trace.append(loss)
        if cfg.cosine_decay:
            opt.lr = 0.5 * cfg.lr * (1.0 + np.cos(np.pi * step / cfg.steps))
        opt.step(model.params, grads)
        for k, v in model.params.items():
            averaged[k] += (1.0 - cfg.ema) * (v - averaged[k])
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            log.info("step %d loss %.4f", step + 1, float(np.mean(trace[-cfg.log_every:])))
    model.params = averaged
    model.loss_trace = np.asarray(trace)
    return model
