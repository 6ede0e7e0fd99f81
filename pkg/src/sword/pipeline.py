"""End-to-end orchestration: training corpus, score-model training and the
desk-scale benchmark.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .config import PipelineConfig
from .errors import ConfigError, InvalidArgument
from .fbp import fbp_sparse
from .metrics import MetricReport, evaluate
from .phantom import disk_phantom, ellipse_phantom, random_ellipses
from .projector import forward_project, subsample, view_mask
from .sampler import SamplerConfig, sword_reconstruct
from .scorenet import PatchScoreNet, TrainConfig, suggest_sigma_max, train_score
from .wavelet import haar2

log = logging.getLogger(__name__)

METHODS = ("fbp", "wfdm-only", "whdm-only", "sword")
CSV_FIELDS = ("method", "views", "psnr_db", "ssim", "mse", "data_range")


# -- corpus ------------------------------------------------------------------------

def corpus_paths(out_dir, k: int):
    out_dir = Path(out_dir)
    return {
        "phantom": out_dir / f"phantom_{k:04d}.swim",
        "sinogram": out_dir / f"sino_{k:04d}.swsn",
        "x1": out_dir / f"x1_{k:04d}.swx1",
        "x2": out_dir / f"x2_{k:04d}.swx2",
    }


def generate_corpus(cfg: PipelineConfig, count: int, out_dir) -> Path:
    """Random-ellipse phantoms, their full-view sinograms and Haar stacks."""
    if count < 1:
        raise InvalidArgument(f"corpus count must be >= 1, got {count}")
    grid, geo = cfg.grid_spec(), cfg.geometry()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directory {out_dir}: {exc.strerror}") from None
    rng = np.random.default_rng(cfg.seed)
    for k in range(count):
        img = ellipse_phantom(grid, random_ellipses(rng, grid))
        sino = forward_project(img, geo)
        x1 = haar2(sino.data)
        paths = corpus_paths(out_dir, k)
        io.save_image(img, paths["phantom"])
        io.save_sinogram(sino, paths["sinogram"])
        io.save_stack(x1, paths["x1"])
        io.save_stack(x1[1:], paths["x2"])
        if (k + 1) % 50 == 0:
            log.info("corpus: %d/%d", k + 1, count)
    return out_dir


def load_corpus(corpus_dir):
    """Full-band stacks of a corpus directory, in file order."""
    files = sorted(Path(corpus_dir).glob("x1_*.swx1"))
    if not files:
        raise ConfigError(f"no x1_*.swx1 stacks found in {corpus_dir}")
    return [io.load_stack(f) for f in files]


# -- training --------------------------------------------------------------------

def corpus_scale(stacks) -> float:
    """Overall standard deviation of the full-band stacks after per-channel centring."""
    data = np.stack(stacks)
    centred = data - data.mean(axis=(0, 2, 3))[None, :, None, None]
    return float(np.sqrt(np.mean(centred**2)))


def corpus_sigma_max(cfg: PipelineConfig, stacks) -> float:
    """Configured ``sigma_max``, or the patch-distance heuristic on the full band."""
    if cfg.schedule.sigma_max is not None:
        return float(cfg.schedule.sigma_max)
    probe = PatchScoreNet(4, patch=cfg.train.patch, hidden=1, blocks=0)
    probe.fit_normalization(stacks, scale=corpus_scale(stacks))
    return suggest_sigma_max(probe, stacks, np.random.default_rng(cfg.seed))


def train_band(cfg: PipelineConfig, stacks, band: str, sigma_max=None, steps=None,
               seed=None) -> PatchScoreNet:
    """Train the full-band (``"full"``) or detail-band (``"high"``) model.

    Both models share the full-band normalisation scale and noise schedule so
    that their noise levels mean the same thing in raw sub-band units.
    """
    if band not in ("full", "high"):
        raise InvalidArgument(f"band must be 'full' or 'high', got {band!r}")
    t = cfg.train
    seed = cfg.seed if seed is None else seed
    channels = 4 if band == "full" else 3
    data = stacks if band == "full" else [x[1:] for x in stacks]
    if sigma_max is None:
        sigma_max = corpus_sigma_max(cfg, stacks)
    schedule = cfg.noise_schedule(sigma_max)
    model = PatchScoreNet(channels, patch=t.patch, hidden=t.hidden, blocks=t.blocks,
                          seed=seed + channels, schedule=schedule)
    model.fit_normalization(data, scale=corpus_scale(stacks))
    if t.gaussian_base:
        model.fit_patch_prior(data, np.random.default_rng(seed + 100 + channels))
    tc = TrainConfig(steps=t.steps if steps is None else steps, batch_size=t.batch, lr=t.lr,
                     seed=seed + channels, schedule=schedule, ema=t.ema, log_every=500)
    log.info("training %s-band model: %d steps, sigma_max %.4g", band, tc.steps, sigma_max)
    return train_score(model, data, tc)


def _load_checkpoint(path) -> PatchScoreNet:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing checkpoint: {path}")
    return io.load_model(path)


# -- benchmark -----------------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkRecord:
    method: str
    views: int
    report: MetricReport
    seconds: float = 0.0

    def row(self):
        r = self.report
        return {"method": self.method, "views": self.views, "psnr_db": r.psnr_db,
                "ssim": r.ssim, "mse": r.mse, "data_range": r.data_range}


def sampler_config(cfg: PipelineConfig, mode: str, schedule, iters=None) -> SamplerConfig:
    s = cfg.sampler
    if iters is not None:
        schedule = type(schedule)(schedule.sigma_min, schedule.sigma_max, iters)
    return SamplerConfig(schedule=schedule, eta=s.eta, eta2=s.eta2, snr=s.snr,
                         corrector_steps_per_iter=s.corrector_steps, seed=cfg.seed, mode=mode,
                         dc_mode=s.dc_mode, lambda1=s.lambda1, filter=cfg.filter_spec(),
                         log_every=0)


def bench_phantom(cfg: PipelineConfig):
    return disk_phantom(cfg.grid_spec(), 0.3 * cfg.grid.fov, 1.0)


def _run_cell(cfg: PipelineConfig, method: str, kept: int, sino, ref, m1, m2, iters=None):
    geo, grid = cfg.geometry(), cfg.grid_spec()
    y = subsample(sino, view_mask(geo.n_views, kept))
    t0 = time.perf_counter()
    if method == "fbp":
        image = fbp_sparse(y, geo, grid, cfg.filter_spec())
    else:
        scfg = sampler_config(cfg, method, m1.schedule, iters)
        image, _ = sword_reconstruct(y, geo, grid, m1, m2, scfg)
    seconds = time.perf_counter() - t0
    return image, BenchmarkRecord(method, kept, evaluate(image, ref), seconds)


def _cell_worker(args):
    cfg, method, kept, sino, ref, p1, p2, iters, cell_dir = args
    m1, m2 = io.load_model(p1), io.load_model(p2)
    image, rec = _run_cell(cfg, method, kept, sino, ref, m1, m2, iters)
    _write_cell(cell_dir, image, rec)
    return method, kept


def _cell_stem(cell_dir, method, kept):
    return Path(cell_dir) / f"{method}_{kept:03d}"


def _write_cell(cell_dir, image, rec: BenchmarkRecord):
    stem = _cell_stem(cell_dir, rec.method, rec.views)
    io.save_image(image, stem.with_suffix(".swim"))
    with open(stem.with_suffix(".json"), "w") as fh:
        json.dump(rec.row(), fh, sort_keys=True)
    # wall-clock time lives apart so the metric files stay reproducible
    stem.with_suffix(".time").write_text(f"{rec.seconds!r}\n")


def _read_cell(cell_dir, method, kept) -> BenchmarkRecord:
    with open(_cell_stem(cell_dir, method, kept).with_suffix(".json")) as fh:
        row = json.load(fh)
    seconds = float(_cell_stem(cell_dir, method, kept).with_suffix(".time").read_text())
    report = MetricReport(float(row["psnr_db"]), row["ssim"], row["mse"], row["data_range"])
    return BenchmarkRecord(row["method"], row["views"], report, seconds)


def run_benchmark(cfg: PipelineConfig, out_dir=None, iters=None, methods=METHODS,
                  models=None):
    """Fill the method x views grid; writes CSV, a text table, metadata and figures.

    ``models`` may pass ``(full, high)`` score models directly; otherwise the
    checkpoints named in ``cfg.paths`` are loaded.
    """
    from .plotting import plot_gallery, plot_psnr_curve

    out_dir = Path(out_dir or cfg.out_dir / "bench")
    cell_dir = out_dir / "cells"
    cell_dir.mkdir(parents=True, exist_ok=True)
    p1 = cfg.path("model_full", "model_full.swsm")
    p2 = cfg.path("model_high", "model_high.swsm")
    needs_models = any(m != "fbp" for m in methods)
    if models is None and needs_models:
        models = (_load_checkpoint(p1), _load_checkpoint(p2))
    m1, m2 = models if models is not None else (None, None)
    ref = bench_phantom(cfg)
    sino = forward_project(ref, cfg.geometry())
    kept_list = sorted(cfg.views.kept)
    cells = [(m, k) for m in methods for k in kept_list]

    if cfg.jobs > 1 and needs_models and models is None:
        work = [(cfg, m, k, sino, ref, p1, p2, iters, cell_dir) for m, k in cells]
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for method, kept in pool.map(_cell_worker, work):
                log.info("bench cell done: %s @ %d views", method, kept)
    else:
        for method, kept in cells:
            image, rec = _run_cell(cfg, method, kept, sino, ref, m1, m2, iters)
            _write_cell(cell_dir, image, rec)
            log.info("bench %-9s %3d views: PSNR %.2f dB (%.1f s)", method, kept,
                     rec.report.psnr_db, rec.seconds)

    records = [_read_cell(cell_dir, m, k) for m, k in cells]
    write_csv(records, out_dir / "bench.csv")
    with open(out_dir / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "views", "seconds"])
        for r in records:
            w.writerow([r.method, r.views, f"{r.seconds:.3f}"])
    (out_dir / "bench_table.txt").write_text(render_table(records))
    schedule = m1.schedule if m1 is not None else None
    meta = {
        "grid": [cfg.grid.n, cfg.grid.fov],
        "full_views": cfg.views.full,
        "detectors": cfg.views.detectors,
        "kept_views": kept_list,
        "sparsity_ratios": [k / cfg.views.full for k in kept_list],
        "iterations": iters or (schedule.T if schedule else None),
        "sigma": [schedule.sigma_min, schedule.sigma_max] if schedule else None,
        "seed": cfg.seed,
        "phantom": "disk",
    }
    (out_dir / "bench_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    plot_psnr_curve(records, out_dir / "psnr_vs_views.png")
    images = {(m, k): io.load_image(_cell_stem(cell_dir, m, k).with_suffix(".swim"))
              for m, k in cells}
    plot_gallery(ref, images, out_dir / "gallery.png")
    return records


# -- tables ----------------------------------------------------------------------------

def write_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in records:
            row = r.row()
            w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in row.items()})


def read_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            report = MetricReport(float(row["psnr_db"]), float(row["ssim"]), float(row["mse"]),
                                  float(row["data_range"]))
            out.append(BenchmarkRecord(row["method"], int(row["views"]), report))
    return out


def render_table(records) -> str:
    """Methods as rows, kept views as columns, cells ``PSNR/SSIM/MSE``."""
    views = sorted({r.views for r in records})
    methods = [m for m in METHODS if any(r.method == m for r in records)]
    cell = {(r.method, r.views): r.report for r in records}

    def fmt(rep):
        if rep is None:
            return "-"
        psnr = "inf" if math.isinf(rep.psnr_db) else f"{rep.psnr_db:.2f}"
        return f"{psnr}/{rep.ssim:.4f}/{rep.mse:.2e}"

    head = ["method"] + [f"{v} views" for v in views]
    rows = [[m] + [fmt(cell.get((m, v))) for v in views] for m in methods]
    widths = [max(len(str(r[i])) for r in [head] + rows) for i in range(len(head))]
    lines = ["PSNR(dB)/SSIM/MSE"]
    lines.append("  ".join(h.ljust(w) for h, w in zip(head, widths)))
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"
