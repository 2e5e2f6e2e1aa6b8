import numpy as np
import pytest

from lcmflow.exceptions import DomainError
from lcmflow.flow import (FlowField, LkParams, bilinear, build_pyramid, dense_flow,
                          lucas_kanade, pyramid_levels)

H, W = 144, 192


def band_limited(dx=0.0, dy=0.0, seed=0, n=24):
    """Sum of random low-frequency sinusoids sampled at (u - dx, v - dy).

    Shifting the sampling grid moves the content by exactly (dx, dy) pixels.
    """
    rng = np.random.default_rng(seed)
    freq = rng.uniform(0.02, 0.12, n)
    ang = rng.uniform(0, 2 * np.pi, n)
    phase = rng.uniform(0, 2 * np.pi, n)
    amp = rng.uniform(5, 15, n)
    vv, uu = np.mgrid[0:H, 0:W].astype(np.float64)
    img = np.full((H, W), 128.0)
    for f, a, p, m in zip(freq, ang, phase, amp):
        img += m * np.sin(2 * np.pi * f * ((uu - dx) * np.cos(a) + (vv - dy) * np.sin(a)) + p)
    return img


INTERIOR = (slice(32, H - 32), slice(32, W - 32))


@pytest.mark.parametrize("shift, tol", [((1.0, 0.0), 0.05), ((0.0, -2.0), 0.05),
                                        ((3.0, 2.0), 0.05), ((0.5, 0.0), 0.1),
                                        ((-0.5, 1.5), 0.1)])
def test_sparse_lk_recovers_shift(shift, tol):
    prev, nxt = band_limited(), band_limited(*shift)
    vv, uu = np.mgrid[32:H - 32:8, 32:W - 32:8]
    pts = np.column_stack([uu.ravel(), vv.ravel()]).astype(float)
    flow = lucas_kanade(prev, nxt, pts)
    assert flow.valid.all()
    np.testing.assert_allclose(flow.vectors, np.broadcast_to(shift, flow.vectors.shape),
                               atol=tol)


@pytest.mark.parametrize("shift, tol", [((1.0, 0.0), 0.05), ((-2.0, 1.0), 0.05),
                                        ((0.5, -0.5), 0.1)])
def test_dense_flow_recovers_shift(shift, tol):
    flow = dense_flow(band_limited(seed=2), band_limited(*shift, seed=2))
    grid = flow.as_grid()[INTERIOR]
    np.testing.assert_allclose(grid[..., 0], shift[0], atol=tol)
    np.testing.assert_allclose(grid[..., 1], shift[1], atol=tol)


def test_dense_methods_agree_on_interior():
    prev, nxt = band_limited(seed=3), band_limited(0.7, -0.3, seed=3)
    params = LkParams(window=11, max_level=2)
    a = dense_flow(prev, nxt, params).as_grid()[INTERIOR]
    b = dense_flow(prev, nxt, params, method="pointwise").as_grid()[INTERIOR]
    np.testing.assert_allclose(a, b, atol=0.05)


def test_identical_frames_give_zero_flow():
    img = band_limited(seed=4)
    flow = dense_flow(img, img)
    np.testing.assert_allclose(flow.vectors, 0.0, atol=1e-12)


def test_flat_window_is_invalid_for_sparse_tracking():
    img = np.full((64, 64), 90.0)
    flow = lucas_kanade(img, img, [[32.0, 32.0]])
    assert not flow.valid[0]


def test_lk_rejects_points_outside_image():
    img = band_limited()
    with pytest.raises(DomainError):
        lucas_kanade(img, img, [[W + 1.0, 3.0]])


def test_lk_rejects_mismatched_frames():
    with pytest.raises(DomainError):
        lucas_kanade(np.zeros((20, 20)), np.zeros((20, 21)), [[5.0, 5.0]])


def test_pyramid_halves_resolution():
    pyr = build_pyramid(np.zeros((96, 128)), 4)
    assert [p.shape for p in pyr] == [(96, 128), (48, 64), (24, 32), (12, 16)]


def test_bilinear_is_exact_on_planes_and_nodes():
    vv, uu = np.mgrid[0:10, 0:12].astype(float)
    img = 3 * uu - 2 * vv + 1
    x = np.array([0.0, 2.5, 7.25, 11.0])
    y = np.array([0.0, 3.5, 1.75, 9.0])
    np.testing.assert_allclose(bilinear(img, x, y), 3 * x - 2 * y + 1, atol=1e-12)


@pytest.mark.parametrize("kwargs", [dict(window=4), dict(window=1), dict(eps=0.0),
                                    dict(max_iters=0)])
def test_lk_params_validation(kwargs):
    with pytest.raises(DomainError):
        LkParams(**kwargs)


def test_flow_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pos = rng.uniform(0, 100, (50, 2)).astype(np.float32).astype(float)
    vec = rng.normal(size=(50, 2)).astype(np.float32).astype(float)
    valid = rng.random(50) > 0.3
    path = tmp_path / "f.flf"
    FlowField(pos, vec, valid).save(path)
    back = FlowField.load(path)
    np.testing.assert_array_equal(back.positions, pos)
    np.testing.assert_array_equal(back.valid, valid)
    np.testing.assert_array_equal(back.vectors[valid], vec[valid])
    assert path.stat().st_size == 8 + 17 * 50


def test_flow_file_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.flf"
    path.write_bytes(b"NOPE\x00\x00\x00\x00")
    with pytest.raises(DomainError):
        FlowField.load(path)


def test_pyramid_depth_stops_before_window_covers_a_level():
    params = LkParams(window=21, max_level=3)
    assert pyramid_levels((144, 192), params) == 3
    assert pyramid_levels((360, 640), params) == 4
    assert pyramid_levels((40, 40), params) == 1
    assert pyramid_levels((144, 192), LkParams(max_level=0)) == 1


def test_sparse_lk_does_not_diverge_on_coarse_levels():
    # with a 21 px window on an 18 x 24 top level this texture used to walk off
    prev, nxt = band_limited(seed=1), band_limited(3.0, 2.0, seed=1)
    vv, uu = np.mgrid[32:H - 32:4, 32:W - 32:4]
    pts = np.column_stack([uu.ravel(), vv.ravel()]).astype(float)
    flow = lucas_kanade(prev, nxt, pts)
    assert flow.valid.all()
    np.testing.assert_allclose(flow.vectors, np.broadcast_to((3.0, 2.0), flow.vectors.shape),
                               atol=0.05)
