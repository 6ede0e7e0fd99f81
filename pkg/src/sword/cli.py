"""Command-line interface: ``sword <command> [options]``.

Exit codes: 0 success, 2 configuration or argument error, 3 numerical
divergence, 4 file input/output error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import load_config
from .diffusion import NoiseSchedule, ZeroScore
from .errors import ConfigError, DivergenceError, FormatError, SwordError
from .fbp import FilterSpec, fbp_sparse
from .metrics import evaluate
from .phantom import (GridSpec, disk_phantom, ellipse_phantom, random_ellipses,
                      shepp_logan_ellipses)
from .projector import SparseSinogram, forward_project, subsample, view_mask
from .sampler import MODES, SamplerConfig, sword_reconstruct

log = logging.getLogger("sword")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _grid(args, cfg) -> GridSpec:
    return GridSpec(args.n or cfg.grid.n, args.fov or cfg.grid.fov)


# -- commands ----------------------------------------------------------------------

def cmd_phantom(args, cfg):
    grid = _grid(args, cfg)
    if args.kind == "disk":
        img = disk_phantom(grid, args.radius or 0.3 * grid.fov, args.value)
    elif args.kind == "shepp-logan":
        img = ellipse_phantom(grid, shepp_logan_ellipses(grid))
    else:
        img = ellipse_phantom(grid, random_ellipses(np.random.default_rng(args.seed), grid))
    io.save_image(img, args.out)
    if args.png:
        io.export_png(img, args.png)
    log.info("wrote %s (%dx%d, fov %.3g cm)", args.out, grid.n, grid.n, grid.fov)


def cmd_project(args, cfg):
    img = io.load_image(args.image)
    geo = cfg.geometry()
    if args.views or args.detectors:
        geo = type(geo)(geo.source_to_center_cm, geo.center_to_detector_cm,
                        geo.detector_width_cm, args.detectors or geo.n_detectors,
                        args.views or geo.n_views)
    sino = forward_project(img, geo)
    io.save_sinogram(sino, args.out)
    log.info("wrote %s (%d views x %d detectors)", args.out, geo.n_views, geo.n_detectors)


def cmd_mask(args, cfg):
    mask = view_mask(args.total or cfg.views.full, args.kept)
    io.save_mask(mask, args.out)
    log.info("wrote %s (%d of %d views)", args.out, mask.n_kept, mask.total_views)


def cmd_corpus(args, cfg):
    from .pipeline import generate_corpus

    if args.seed is not None:
        cfg.seed = args.seed
    out = generate_corpus(cfg, args.count or cfg.train.corpus_size,
                          args.out_dir or cfg.path("corpus", "corpus"))
    log.info("corpus written to %s", out)


def cmd_train(args, cfg):
    from .pipeline import load_corpus, train_band
    from .plotting import plot_loss

    t = cfg.train
    if args.seed is not None:
        cfg.seed = args.seed
    for name in ("steps", "lr", "batch"):
        if getattr(args, name) is not None:
            setattr(t, name, getattr(args, name))
    if args.sigma_min is not None:
        cfg.schedule.sigma_min = args.sigma_min
    if args.sigma_max is not None:
        cfg.schedule.sigma_max = args.sigma_max
    if args.iters is not None:
        cfg.schedule.T = args.iters
    stacks = load_corpus(args.corpus or cfg.path("corpus", "corpus"))
    model = train_band(cfg, stacks, args.band)
    default = "model_full.swsm" if args.band == "full" else "model_high.swsm"
    out = Path(args.out) if args.out else cfg.path(f"model_{args.band}", default)
    io.save_model(model, out)
    if args.loss_plot:
        plot_loss(model.loss_trace, args.loss_plot)
    log.info("wrote %s (final loss %.4f)", out, float(np.mean(model.loss_trace[-100:])))


def _measurements(args):
    sino = io.load_sinogram(args.sinogram)
    mask = io.load_mask(args.mask)
    geo = sino.geometry
    if geo.n_views == mask.total_views:
        return subsample(sino, mask), geo
    if geo.n_views == mask.n_kept:
        return SparseSinogram(mask, sino.data), geo.with_views(mask.total_views)
    raise ConfigError(f"sinogram has {geo.n_views} views; mask expects {mask.total_views} "
                      f"(full) or {mask.n_kept} (measured only)")


def _load_models(args, cfg):
    need_full = args.mode in ("sword", "wfdm-only")
    need_high = args.mode in ("sword", "whdm-only")
    models = []
    for needed, flag, name, ch in ((need_full, args.model_full, "model_full", 4),
                                   (need_high, args.model_high, "model_high", 3)):
        path = Path(flag) if flag else cfg.path(name, name + ".swsm")
        if not needed:
            models.append(ZeroScore(ch))
        elif not path.exists():
            raise ConfigError(f"missing checkpoint: {path}")
        else:
            models.append(io.load_model(path))
    return models


def cmd_reconstruct(args, cfg):
    y, geo = _measurements(args)
    grid = _grid(args, cfg)
    spec = FilterSpec(args.filter or cfg.filter.kind, args.cutoff or cfg.filter.cutoff)
    if args.mode == "fbp":
        image = fbp_sparse(y, geo, grid, spec)
        sino = None
    else:
        m1, m2 = _load_models(args, cfg)
        base = getattr(m1, "schedule", None) or getattr(m2, "schedule", None)
        if base is None:
            raise ConfigError("checkpoints carry no noise schedule")
        schedule = NoiseSchedule(base.sigma_min, base.sigma_max, args.iters or cfg.schedule.T)
        s = cfg.sampler
        scfg = SamplerConfig(
            schedule=schedule, eta=args.eta if args.eta is not None else s.eta,
            eta2=args.eta2 if args.eta2 is not None else s.eta2,
            snr=args.snr if args.snr is not None else s.snr,
            corrector_steps_per_iter=s.corrector_steps,
            seed=args.seed if args.seed is not None else cfg.seed,
            mode=args.mode, dc_mode=s.dc_mode, lambda1=s.lambda1, filter=spec, log_every=100)
        image, sino = sword_reconstruct(y, geo, grid, m1, m2, scfg)
    io.save_image(image, args.out_image)
    if args.out_sinogram and sino is not None:
        io.save_sinogram(sino, args.out_sinogram)
    if args.png:
        io.export_png(image, args.png)
    log.info("wrote %s", args.out_image)


def cmd_fbp(args, cfg):
    sino = io.load_sinogram(args.sinogram)
    grid = _grid(args, cfg)
    spec = FilterSpec(args.filter, args.cutoff)
    if args.mask:
        mask = io.load_mask(args.mask)
        if mask.total_views != sino.geometry.n_views:
            raise ConfigError("mask and sinogram disagree on the number of views")
        image = fbp_sparse(subsample(sino, mask), sino.geometry, grid, spec)
    else:
        from .fbp import fbp_reconstruct
        image = fbp_reconstruct(sino, grid, spec)
    io.save_image(image, args.out_image)
    if args.png:
        io.export_png(image, args.png)
    log.info("wrote %s", args.out_image)


def cmd_evaluate(args, cfg):
    report = evaluate(io.load_image(args.recon), io.load_image(args.ref), args.data_range)
    text = json.dumps(report.as_dict(), sort_keys=True)
    if args.json:
        Path(args.json).write_text(text + "\n")
    print(text)


def cmd_bench(args, cfg):
    from .pipeline import run_benchmark

    if args.jobs:
        cfg.jobs = args.jobs
    records = run_benchmark(cfg, args.out_dir, iters=args.iters)
    from .pipeline import render_table
    print(render_table(records), end="")


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sword", description="Wavelet-domain score diffusion for sparse-view CT.")
    p.add_argument("--config", help="YAML pipeline config (may include others)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def grid_flags(sp):
        sp.add_argument("--n", type=int, help="image size in pixels")
        sp.add_argument("--fov", type=float, help="field of view in cm")

    sp = sub.add_parser("phantom", help="write a phantom image")
    sp.add_argument("--kind", choices=("disk", "shepp-logan", "random"), default="shepp-logan")
    sp.add_argument("--radius", type=float, help="disk radius in cm")
    sp.add_argument("--value", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--png")
    grid_flags(sp)
    sp.set_defaults(func=cmd_phantom)

    sp = sub.add_parser("project", help="fan-beam forward projection")
    sp.add_argument("--image", required=True)
    sp.add_argument("--views", type=int)
    sp.add_argument("--detectors", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_project)

    sp = sub.add_parser("mask", help="uniform sparse-view mask")
    sp.add_argument("--total", type=int)
    sp.add_argument("--kept", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_mask)

    sp = sub.add_parser("corpus", help="generate the training corpus")
    sp.add_argument("--count", type=int)
    sp.add_argument("--out-dir")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_corpus)

    sp = sub.add_parser("train", help="train a score model on a corpus")
    sp.add_argument("--corpus")
    sp.add_argument("--band", choices=("full", "high"), default="full")
    sp.add_argument("--out")
    sp.add_argument("--sigma-min", type=float)
    sp.add_argument("--sigma-max", type=float)
    sp.add_argument("--iters", type=int, help="number of noise levels in the schedule")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--loss-plot", help="write a loss-curve PNG here")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("reconstruct", help="sparse-view reconstruction")
    sp.add_argument("--sinogram", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--model-full")
    sp.add_argument("--model-high")
    sp.add_argument("--iters", type=int)
    sp.add_argument("--eta", type=float)
    sp.add_argument("--eta2", type=float)
    sp.add_argument("--snr", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out-image", required=True)
    sp.add_argument("--out-sinogram")
    sp.add_argument("--png")
    sp.add_argument("--mode", choices=MODES + ("fbp",), default="sword")
    sp.add_argument("--filter", choices=("ram-lak", "shepp-logan-window"))
    sp.add_argument("--cutoff", type=float)
    grid_flags(sp)
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("fbp", help="filtered backprojection")
    sp.add_argument("--sinogram", required=True)
    sp.add_argument("--mask")
    sp.add_argument("--filter", choices=("ram-lak", "shepp-logan-window"), default="ram-lak")
    sp.add_argument("--cutoff", type=float, default=1.0)
    sp.add_argument("--out-image", required=True)
    sp.add_argument("--png")
    grid_flags(sp)
    sp.set_defaults(func=cmd_fbp)

    sp = sub.add_parser("evaluate", help="PSNR, SSIM and MSE against a reference")
    sp.add_argument("--recon", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--json")
    sp.add_argument("--data-range", type=float, help="fixed range instead of the reference's")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("bench", help="desk-scale benchmark over methods and view counts")
    sp.add_argument("--out-dir")
    sp.add_argument("--iters", type=int)
    sp.add_argument("--jobs", type=int)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                            stream=sys.stderr)
        cfg = load_config(args.config)
        args.func(args, cfg)
        return EXIT_OK
    except DivergenceError as exc:
        print(f"sword: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FormatError, OSError) as exc:
        print(f"sword: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"sword: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SwordError as exc:
        print(f"sword: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
