import csv
import json
import math

import numpy as np
import pytest

from sword import io
from sword.config import config_from_dict
from sword.errors import ConfigError
from sword.metrics import MetricReport
from sword.pipeline import (CSV_FIELDS, METHODS, BenchmarkRecord, corpus_paths, corpus_scale,
                            corpus_sigma_max, generate_corpus, load_corpus, read_csv,
                            render_table, run_benchmark, train_band, write_csv)
from sword.wavelet import extract_high, idwt2, SubbandStack

SMALL = {
    "grid": {"n": 16, "fov": 20.0},
    "views": {"full": 24, "detectors": 32, "kept": [6, 12]},
    "schedule": {"T": 8},
    "train": {"corpus_size": 4, "steps": 10, "batch": 8, "hidden": 16, "blocks": 1, "patch": 4},
}


@pytest.fixture
def cfg(tmp_path):
    doc = dict(SMALL, paths={"out": str(tmp_path / "out")})
    return config_from_dict(doc).validate()


@pytest.fixture
def corpus(cfg, tmp_path):
    return generate_corpus(cfg, 4, tmp_path / "corpus")


def test_corpus_files_and_consistency(cfg, corpus):
    for k in range(4):
        paths = corpus_paths(corpus, k)
        assert all(p.exists() for p in paths.values())
        sino = io.load_sinogram(paths["sinogram"])
        x1, x2 = io.load_stack(paths["x1"]), io.load_stack(paths["x2"])
        assert np.array_equal(x2, extract_high(SubbandStack(x1)).planes)
        assert np.max(np.abs(idwt2(SubbandStack(x1)).data - sino.data)) <= 1e-12
        assert io.load_image(paths["phantom"]).grid == cfg.grid_spec()
    assert len(load_corpus(corpus)) == 4


def test_corpus_is_deterministic(cfg, tmp_path):
    a = generate_corpus(cfg, 2, tmp_path / "a")
    b = generate_corpus(cfg, 2, tmp_path / "b")
    for name in sorted(p.name for p in a.iterdir()):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_empty_corpus_dir(tmp_path):
    with pytest.raises(ConfigError):
        load_corpus(tmp_path)


def test_corpus_statistics(cfg, corpus):
    stacks = load_corpus(corpus)
    data = np.stack(stacks)
    centred = data - data.mean(axis=(0, 2, 3), keepdims=True)
    assert corpus_scale(stacks) == pytest.approx(centred.std(), rel=1e-12)
    assert corpus_sigma_max(cfg, stacks) > 0
    cfg.schedule.sigma_max = 7.5
    assert corpus_sigma_max(cfg, stacks) == 7.5


def test_train_band_shares_schedule_and_scale(cfg, corpus):
    stacks = load_corpus(corpus)
    full = train_band(cfg, stacks, "full")
    high = train_band(cfg, stacks, "high")
    assert (full.channels, high.channels) == (4, 3)
    assert full.schedule == high.schedule
    assert np.allclose(full.scale, full.scale[0])
    assert high.scale[0] == pytest.approx(full.scale[0])
    assert len(full.loss_trace) == 10
    with pytest.raises(ValueError):
        train_band(cfg, stacks, "mid")


def _record(method, views, psnr):
    return BenchmarkRecord(method, views, MetricReport(psnr, 0.5, 1e-3, 1.0))


def test_csv_round_trip(tmp_path):
    recs = [_record("fbp", 30, 21.123456789012345), _record("sword", 30, math.inf)]
    p = tmp_path / "t.csv"
    write_csv(recs, p)
    with open(p) as fh:
        assert tuple(next(csv.reader(fh))) == CSV_FIELDS
    back = read_csv(p)
    assert [r.row() for r in back] == [r.row() for r in recs]


def test_render_table_layout():
    recs = [_record(m, v, 20.0 + i) for i, m in enumerate(reversed(METHODS)) for v in (60, 30)]
    text = render_table(recs).splitlines()
    assert text[0] == "PSNR(dB)/SSIM/MSE"
    assert text[1].split() == ["method", "30", "views", "60", "views"]
    assert [line.split()[0] for line in text[3:]] == list(METHODS)
    assert "23.00/0.5000/1.00e-03" in text[3]
    assert "inf/" in render_table([_record("fbp", 30, math.inf)])


def test_benchmark_needs_checkpoints(cfg, tmp_path):
    with pytest.raises(ConfigError, match="missing checkpoint"):
        run_benchmark(cfg, tmp_path / "bench")


def test_fbp_only_benchmark_outputs(cfg, tmp_path):
    out = tmp_path / "bench"
    recs = run_benchmark(cfg, out, methods=("fbp",))
    assert [(r.method, r.views) for r in recs] == [("fbp", 6), ("fbp", 12)]
    for name in ("bench.csv", "timing.csv", "bench_table.txt", "bench_meta.json",
                 "psnr_vs_views.png", "gallery.png"):
        assert (out / name).exists(), name
    meta = json.loads((out / "bench_meta.json").read_text())
    assert meta["sparsity_ratios"] == [0.25, 0.5]
    assert recs[1].report.psnr_db > recs[0].report.psnr_db


def test_small_benchmark_is_reproducible(cfg, corpus, tmp_path):
    stacks = load_corpus(corpus)
    models = (train_band(cfg, stacks, "full"), train_band(cfg, stacks, "high"))
    a = run_benchmark(cfg, tmp_path / "a", models=models)
    b = run_benchmark(cfg, tmp_path / "b", models=models)
    assert [r.row() for r in a] == [r.row() for r in b]
    assert (tmp_path / "a" / "bench.csv").read_bytes() == (tmp_path / "b" / "bench.csv").read_bytes()
    assert {r.method for r in a} == set(METHODS)
