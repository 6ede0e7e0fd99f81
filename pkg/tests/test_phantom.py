import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sword.errors import InvalidArgument
from sword.phantom import (EllipseSpec, GridSpec, Image, disk_phantom, ellipse_phantom, make_grid,
                           random_ellipses, shepp_logan_ellipses)


def test_make_grid_pixel_size():
    g = make_grid(256, 25.6)
    assert (g.n, g.fov) == (256, 25.6)
    assert g.pixel == pytest.approx(0.1)
    assert make_grid(8, 8.0).pixel == 1.0


@pytest.mark.parametrize("n, fov", [(0, 10.0), (4, 10.0), (16, 0.0), (16, -1.0), (8.5, 4.0)])
def test_make_grid_rejects_bad_input(n, fov):
    with pytest.raises(InvalidArgument):
        make_grid(n, fov)


def test_grid_centred_at_origin():
    g = make_grid(10, 5.0)
    c = g.centers()
    assert np.allclose(c, -c[::-1])
    assert c[1] - c[0] == pytest.approx(0.5)


def test_image_rejects_wrong_shape_and_nan():
    g = make_grid(8, 8.0)
    with pytest.raises(InvalidArgument):
        Image(g, np.zeros((8, 9)))
    bad = np.zeros((8, 8))
    bad[2, 3] = np.nan
    with pytest.raises(InvalidArgument):
        Image(g, bad)


def test_ellipse_needs_positive_axes():
    with pytest.raises(InvalidArgument):
        EllipseSpec(0, 0, 0.0, 1.0)
    with pytest.raises(InvalidArgument):
        ellipse_phantom(make_grid(8, 8.0), [])


def test_single_disk_is_indicator():
    g = make_grid(64, 16.0)
    img = ellipse_phantom(g, [EllipseSpec(0, 0, g.fov / 4, g.fov / 4, 0, 1.0)])
    xx, yy = g.mesh()
    inside = xx**2 + yy**2 <= (g.fov / 4) ** 2
    assert np.array_equal(img.data, inside.astype(float))


def test_overlapping_disks_add():
    g = make_grid(64, 16.0)
    e1 = EllipseSpec(-1.0, 0, 3.0, 3.0, 0, 1.0)
    e2 = EllipseSpec(1.0, 0, 3.0, 3.0, 0, -0.5)
    img = ellipse_phantom(g, [e1, e2])
    xx, yy = g.mesh()
    both = e1.contains(xx, yy) & e2.contains(xx, yy)
    assert both.any()
    assert np.all(img.data[both] == 0.5)
    sep = ellipse_phantom(g, [e1]).data + ellipse_phantom(g, [e2]).data
    assert np.array_equal(img.data, sep)


def test_shepp_logan_matches_pixel_membership_oracle():
    g = make_grid(64, 20.0)
    ells = shepp_logan_ellipses(g)
    img = ellipse_phantom(g, ells)
    # independent per-pixel loop over the table
    ref = np.zeros((64, 64))
    c = (np.arange(64) - 31.5) * g.pixel
    for iy in range(64):
        for ix in range(64):
            x, y = c[ix], c[iy]
            for e in ells:
                dx, dy = x - e.cx, y - e.cy
                u = dx * math.cos(e.rotation) + dy * math.sin(e.rotation)
                v = -dx * math.sin(e.rotation) + dy * math.cos(e.rotation)
                if (u / e.a) ** 2 + (v / e.b) ** 2 <= 1.0:
                    ref[iy, ix] += e.intensity
    assert np.allclose(img.data, ref, atol=1e-12)
    assert img.data.sum() == pytest.approx(ref.sum(), abs=1e-9)


def test_disk_examples():
    g = make_grid(64, 6.4)
    half = disk_phantom(g, 1.6, 1.0)
    row = half.data[32]
    assert row.sum() == pytest.approx(32, abs=1)       # 3.2 cm across = half the width
    tiny = disk_phantom(g, 0.05, 1.0)
    assert np.count_nonzero(tiny.data) <= 4
    with pytest.raises(InvalidArgument):
        disk_phantom(g, 3.3)


@given(st.floats(0.3, 3.0))
def test_disk_area_within_perimeter_band(r):
    g = make_grid(64, 6.4)
    img = disk_phantom(g, r, 1.0)
    count = np.count_nonzero(img.data)
    area = math.pi * r**2 / g.pixel**2
    assert abs(count - area) <= 2 * math.pi * r / g.pixel


def test_phantom_is_deterministic():
    g = make_grid(32, 20.0)
    a = ellipse_phantom(g, random_ellipses(np.random.default_rng(5), g))
    b = ellipse_phantom(g, random_ellipses(np.random.default_rng(5), g))
    assert a.data.tobytes() == b.data.tobytes()


def test_symmetric_disk_invariant_under_half_turn():
    g = make_grid(48, 20.0)
    img = disk_phantom(g, 5.3)
    assert np.array_equal(np.rot90(img.data, 2), img.data)


def test_random_ellipses_stay_inside_support(rng):
    g = make_grid(64, 20.0)
    for _ in range(20):
        img = ellipse_phantom(g, random_ellipses(rng, g))
        xx, yy = g.mesh()
        outside = np.hypot(xx, yy) > 0.45 * g.fov
        assert np.all(img.data[outside] == 0)


def test_grid_spec_is_frozen():
    g = GridSpec(16, 4.0)
    with pytest.raises(AttributeError):
        g.n = 8
