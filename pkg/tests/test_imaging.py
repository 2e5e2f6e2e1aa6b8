import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from lcmflow.exceptions import DomainError
from lcmflow.imaging import (eigendecompose_2x2, from_eigenbasis, gaussian_window, gradients,
                             read_pgm, rotation_2d, structure_field, structure_tensor,
                             to_eigenbasis, write_pgm)

UU, VV = np.meshgrid(np.arange(40.0), np.arange(30.0))


def _textured(seed=0, shape=(48, 64)):
    rng = np.random.default_rng(seed)
    return 128 + 40 * ndimage.gaussian_filter(rng.normal(size=shape), 2.0)


def test_constant_image_has_no_gradient_or_texture():
    img = np.full((30, 40), 77.0)
    ix, iy = gradients(img)
    assert not ix.any() and not iy.any()
    sf = structure_field(img)
    assert not sf.t1.any() and not sf.t2.any()


@pytest.mark.parametrize("img, gx, gy", [(2 * UU, 2.0, 0.0), (3 * VV, 0.0, 3.0),
                                         (1.5 * UU - 0.5 * VV, 1.5, -0.5)])
def test_ramps_have_unit_normalised_gradient(img, gx, gy):
    ix, iy = gradients(img)
    np.testing.assert_allclose(ix[1:-1, 1:-1], gx, atol=1e-12)
    np.testing.assert_allclose(iy[1:-1, 1:-1], gy, atol=1e-12)


def test_gradients_reject_tiny_images():
    with pytest.raises(DomainError):
        gradients(np.zeros((2, 5)))


def test_vertical_edge_ramp_tensor():
    # I = a u: S = diag(a^2, 0) away from the border, e1 along +u
    a = 4.0
    s11, s12, s22 = structure_tensor(a * UU, window=7)
    np.testing.assert_allclose(s11[5:-5, 5:-5], a * a, rtol=1e-12)
    np.testing.assert_allclose(s12[5:-5, 5:-5], 0.0, atol=1e-12)
    np.testing.assert_allclose(s22[5:-5, 5:-5], 0.0, atol=1e-12)
    sf = structure_field(a * UU, window=7)
    np.testing.assert_allclose(sf.phi[5:-5, 5:-5], 0.0, atol=1e-12)
    np.testing.assert_allclose(sf.t1[5:-5, 5:-5], a * a, rtol=1e-12)


def test_gaussian_window_weights():
    taps = gaussian_window(21, 21 / 6)
    assert taps.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(taps, taps[::-1])
    assert np.argmax(taps) == 10


def test_structure_field_rotation_equivariance():
    img = _textured()
    a = structure_field(img)
    b = structure_field(np.rot90(img))
    # np.rot90: new[i, j] = old[j, W - 1 - i]; compare interior pixels
    h, w = img.shape
    j, i = np.meshgrid(np.arange(12, w - 12), np.arange(12, h - 12))
    bi, bj = w - 1 - j, i
    np.testing.assert_allclose(b.t1[bi, bj], a.t1[i, j], rtol=1e-6)
    np.testing.assert_allclose(b.t2[bi, bj], a.t2[i, j], rtol=1e-6, atol=1e-9)
    # the dominant direction turns by a quarter turn (mod pi)
    d = np.angle(np.exp(2j * (b.phi[bi, bj] - a.phi[i, j]))) / 2
    aniso = a.t1[i, j] > 1.5 * a.t2[i, j]
    np.testing.assert_allclose(np.abs(d[aniso]), np.pi / 2, atol=1e-6)


@pytest.mark.parametrize("s, expected", [((4.0, 0.0, 1.0), (4.0, 1.0, 0.0)),
                                         ((1.0, 0.0, 1.0), (1.0, 1.0, 0.0)),
                                         ((2.0, 1.0, 2.0), (3.0, 1.0, np.pi / 4)),
                                         ((1.0, 0.0, 4.0), (4.0, 1.0, np.pi / 2))])
def test_eigendecompose_examples(s, expected):
    np.testing.assert_allclose(eigendecompose_2x2(*s), expected, atol=1e-15)


def test_eigendecompose_clamps_round_off_and_rejects_indefinite():
    t1, t2, _ = eigendecompose_2x2(1.0, 1.0, 1.0 - 1e-13)
    assert t2 == 0.0 and t1 == pytest.approx(2.0)
    with pytest.raises(DomainError):
        eigendecompose_2x2(1.0, 2.0, 1.0)


psd = st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3),
                st.floats(-1e3, 1e3))


@given(psd)
def test_eigendecompose_reconstructs_tensor(g):
    # A = G G^T is PSD by construction
    gm = np.array(g).reshape(2, 2)
    a = gm @ gm.T
    t1, t2, phi = eigendecompose_2x2(a[0, 0], a[0, 1], a[1, 1])
    scale = max(1.0, np.abs(a).max())
    assert t1 >= t2 >= 0
    assert -np.pi / 2 < phi <= np.pi / 2
    assert t1 + t2 == pytest.approx(np.trace(a), abs=1e-9 * scale)
    assert t1 * t2 == pytest.approx(a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0], abs=1e-9 * scale ** 2)
    r = rotation_2d(phi)
    np.testing.assert_allclose(r @ np.diag([t1, t2]) @ r.T, a, atol=1e-9 * scale)
    assert np.linalg.det(r) == pytest.approx(1.0)


def test_to_eigenbasis_examples():
    np.testing.assert_allclose(to_eigenbasis([1.0, 2.0], 0.0), [1.0, 2.0])
    np.testing.assert_allclose(to_eigenbasis([1.0, 0.0], np.pi / 2), [0.0, -1.0], atol=1e-15)


def test_eigenbasis_is_isometry_with_inverse():
    rng = np.random.default_rng(1)
    y = rng.normal(size=(1000, 2))
    phi = rng.uniform(-np.pi / 2, np.pi / 2, 1000)
    ye = to_eigenbasis(y, phi)
    np.testing.assert_allclose(np.linalg.norm(ye, axis=1), np.linalg.norm(y, axis=1), atol=1e-12)
    np.testing.assert_allclose(from_eigenbasis(ye, phi), y, atol=1e-12)
    # same as applying R(phi)^T explicitly
    np.testing.assert_allclose(ye, np.einsum("nji,nj->ni", rotation_2d(phi), y), atol=1e-12)


def test_pgm_round_trip(tmp_path):
    img = np.rint(_textured(4)).clip(0, 255)
    path = tmp_path / "a.pgm"
    write_pgm(path, img)
    np.testing.assert_array_equal(read_pgm(path), img)
    assert path.read_bytes().startswith(b"P5\n64 48\n255\n")
