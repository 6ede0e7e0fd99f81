import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import ssim_sliding
from sword.errors import InvalidArgument
from sword.metrics import MetricReport, evaluate, mse, psnr, ssim
from sword.phantom import Image, make_grid


def test_mse_examples(rng):
    x = rng.standard_normal((20, 20))
    assert mse(x, x) == 0
    assert mse(np.zeros((4, 4)), np.full((4, 4), 3.0)) == 9.0
    a, b = rng.standard_normal((2, 33, 17))
    direct = math.fsum(float(v) ** 2 for v in (a - b).ravel()) / a.size
    assert mse(a, b) == pytest.approx(direct, rel=1e-15)


def test_mse_accepts_images(rng):
    g = make_grid(8, 1.0)
    a, b = Image(g, rng.random((8, 8))), Image(g, rng.random((8, 8)))
    assert mse(a, b) == mse(a.data, b.data)
    with pytest.raises(InvalidArgument):
        mse(np.zeros((3, 3)), np.zeros((3, 4)))


def test_psnr_examples(rng):
    x = rng.random((16, 16))
    assert psnr(x, x) == math.inf
    ref = np.zeros((4, 4))
    assert psnr(ref + 2.0, ref, data_range=2.0) == pytest.approx(0.0, abs=1e-12)
    a, b = rng.random((2, 16, 16))
    gain = psnr(a, b, 2.0) - psnr(a, b, 1.0)
    assert gain == pytest.approx(20 * math.log10(2), abs=1e-12)
    assert 20 * math.log10(2) == pytest.approx(6.0206, abs=1e-4)


def test_psnr_uses_reference_range_by_default(rng):
    ref = rng.random((10, 10)) * 4
    rec = ref + 0.1
    expected = 10 * math.log10((ref.max() - ref.min()) ** 2 / 0.01)
    assert psnr(rec, ref) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(InvalidArgument):
        psnr(rec, np.zeros((10, 10)))


@given(st.floats(1e-6, 10), st.floats(1e-6, 10))
def test_psnr_strictly_decreasing_in_mse(e1, e2):
    if e1 == e2:
        return
    ref = np.zeros((4, 4))
    p1 = psnr(ref + math.sqrt(e1), ref, 1.0)
    p2 = psnr(ref + math.sqrt(e2), ref, 1.0)
    assert (p1 > p2) == (e1 < e2)


def test_ssim_identity_and_anticorrelation(rng):
    x = rng.standard_normal((32, 32))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    x = x - x.mean()
    assert ssim(x, -x + 0.5, data_range=float(x.max() - x.min())) < 0


def test_ssim_matches_sliding_window_oracle(rng):
    a, b = rng.random((2, 64, 64))
    b = 0.6 * a + 0.4 * b
    assert ssim(a, b, 1.0) == pytest.approx(ssim_sliding(a, b, 1.0), abs=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_symmetry_and_range(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((2, 24, 24))
    assert mse(a, b) == mse(b, a)
    assert ssim(a, b, 1.0) == pytest.approx(ssim(b, a, 1.0), abs=1e-15)
    assert -1 <= ssim(a, b, 1.0) <= 1


def test_shift_with_fixed_range(rng):
    a, b = rng.random((2, 20, 20))
    assert mse(a + 3, b + 3) == pytest.approx(mse(a, b), rel=1e-12)
    # contrast-structure terms do not see a common shift; luminance does, at fixed range
    base, moved = ssim(a, b, 1.0), ssim(a + 3, b + 3, 1.0)
    assert moved != base
    assert -1 <= moved <= 1


def test_ssim_needs_room_for_window():
    with pytest.raises(InvalidArgument):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)), 1.0)


def test_evaluate_report(rng):
    ref = rng.random((16, 16))
    rep = evaluate(ref, ref)
    assert isinstance(rep, MetricReport)
    d = rep.as_dict()
    assert d["psnr_db"] == "inf" and d["mse"] == 0.0 and d["ssim"] == pytest.approx(1.0)
    rep = evaluate(ref + 0.1, ref, data_range=2.0)
    assert rep.data_range == 2.0
    assert rep.psnr_db == pytest.approx(10 * math.log10(4 / 0.01))
