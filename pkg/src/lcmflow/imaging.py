"""Gradients, structure tensors and eigenbasis transforms of grayscale images.

Images are plain 2-D float arrays indexed ``[v, u]`` (row, column) with
intensities on the 0-255 scale, so texture comes out in intensity^2/pixel^2.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._validation import check_image, check_scalar
from .exceptions import DomainError

# Scharr derivative taps, normalised so a unit-slope ramp has gradient 1.
_SCHARR_SMOOTH = np.array([3.0, 10.0, 3.0]) / 16.0
_SCHARR_DIFF = np.array([-1.0, 0.0, 1.0]) / 2.0

DEGENERATE_TOL = 1e-12
PSD_TOL = 1e-9


def gradients(img):
    """Scharr image gradients ``(Ix, Iy)`` with replicated borders."""
    arr = check_image(img, min_size=3)
    ix = ndimage.correlate1d(arr, _SCHARR_DIFF, axis=1, mode="nearest")
    ix = ndimage.correlate1d(ix, _SCHARR_SMOOTH, axis=0, mode="nearest")
    iy = ndimage.correlate1d(arr, _SCHARR_DIFF, axis=0, mode="nearest")
    iy = ndimage.correlate1d(iy, _SCHARR_SMOOTH, axis=1, mode="nearest")
    return ix, iy


def gaussian_window(window, sigma):
    """Normalised 1-D Gaussian taps of odd length ``window``."""
    half = window // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (x / sigma) ** 2)
    return taps / taps.sum()


@dataclass(frozen=True)
class StructureField:
    """Per-pixel structure-tensor eigenvalues ``t1 >= t2 >= 0`` and eigenbasis angle.

    ``phi`` is the angle of the dominant eigenvector ``e1`` measured from the
    image ``u`` axis towards ``v``, wrapped to (-pi/2, pi/2].
    """

    t1: np.ndarray
    t2: np.ndarray
    phi: np.ndarray

    @property
    def shape(self):
        return np.shape(self.t1)

    def texture(self):
        """Stacked (t1, t2) texture field, shape ``(2,) + shape``."""
        return np.stack([self.t1, self.t2])

    def sample(self, pixels):
        """Nearest-pixel lookup of ``(t1, t2, phi)`` at (N, 2) pixel coordinates."""
        pts = np.asarray(pixels, dtype=np.float64)
        h, w = self.shape
        u = np.clip(np.rint(pts[:, 0]).astype(int), 0, w - 1)
        v = np.clip(np.rint(pts[:, 1]).astype(int), 0, h - 1)
        return self.t1[v, u], self.t2[v, u], self.phi[v, u]


def eigendecompose_2x2(s11, s12, s22):
    """Closed-form eigensystem of symmetric PSD 2x2 matrices (broadcasts).

    Returns ``(t1, t2, phi)`` with ``t1 >= t2 >= 0`` and ``phi`` the angle of
    the ``t1`` eigenvector in (-pi/2, pi/2].  Isotropic inputs get ``phi = 0``.
    Negative eigenvalues within round-off are clamped to zero; anything more
    negative raises :class:`DomainError`.
    """
    a = np.asarray(s11, dtype=np.float64)
    b = np.asarray(s12, dtype=np.float64)
    c = np.asarray(s22, dtype=np.float64)
    half_tr = 0.5 * (a + c)
    half_diff = 0.5 * (a - c)
    radius = np.hypot(half_diff, b)
    t1 = half_tr + radius
    det = a * c - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        # det / t1 avoids the cancellation in half_tr - radius
        t2 = np.where(t1 > 0, det / np.where(t1 > 0, t1, 1.0), half_tr - radius)
    scale = np.maximum(1.0, np.abs(t1))
    if np.any(t2 < -PSD_TOL * scale):
        raise DomainError("structure tensor is not positive semi-definite")
    t2 = np.maximum(t2, 0.0)
    t1 = np.maximum(t1, t2)
    phi = 0.5 * np.arctan2(2.0 * b, a - c)
    phi = np.where(phi <= -np.pi / 2, phi + np.pi, phi)
    degenerate = (np.abs(b) < DEGENERATE_TOL) & (np.abs(a - c) < DEGENERATE_TOL)
    phi = np.where(degenerate, 0.0, phi)
    if np.ndim(t1) == 0:
        return float(t1), float(t2), float(phi)
    return t1, t2, phi


def structure_tensor(img, window=21, sigma=None):
    """Gaussian-windowed gradient outer products ``(S11, S12, S22)``; weights sum to 1."""
    window = check_scalar(window, "window", lo=3, integer=True)
    if window % 2 == 0:
        raise DomainError(f"window must be odd, got {window}")
    sigma = window / 6.0 if sigma is None else check_scalar(sigma, "sigma", lo=0.0, lo_open=True)
    ix, iy = gradients(img)
    taps = gaussian_window(window, sigma)

    def smooth(a):
        a = ndimage.correlate1d(a, taps, axis=0, mode="nearest")
        return ndimage.correlate1d(a, taps, axis=1, mode="nearest")

    return smooth(ix * ix), smooth(ix * iy), smooth(iy * iy)


def structure_field(img, window=21, sigma=None):
    """Structure-tensor eigen-field of ``img`` (see :class:`StructureField`)."""
    s11, s12, s22 = structure_tensor(img, window, sigma)
    t1, t2, phi = eigendecompose_2x2(s11, s12, s22)
    return StructureField(t1, t2, phi)


def rotation_2d(phi):
    """Eigenbasis-to-image rotation(s) with columns ``e1, e2``; shape (..., 2, 2)."""
    c, s = np.cos(phi), np.sin(phi)
    return np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)


def to_eigenbasis(y_i, phi):
    """Express image-basis vectors ``y_i`` (..., 2) in the eigenbasis at angle ``phi``."""
    y = np.asarray(y_i, dtype=np.float64)
    c, s = np.cos(phi), np.sin(phi)
    return np.stack([c * y[..., 0] + s * y[..., 1], -s * y[..., 0] + c * y[..., 1]], axis=-1)


def from_eigenbasis(y_e, phi):
    y = np.asarray(y_e, dtype=np.float64)
    c, s = np.cos(phi), np.sin(phi)
    return np.stack([c * y[..., 0] - s * y[..., 1], s * y[..., 0] + c * y[..., 1]], axis=-1)


def write_pgm(path, img):
    """Write an 8-bit binary (P5) PGM.  Intensities are rounded and clipped to 0-255."""
    arr = np.clip(np.rint(np.asarray(img, dtype=np.float64)), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path):
    """Read an 8-bit binary PGM written by :func:`write_pgm` (comments allowed)."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise DomainError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise DomainError(f"{path}: only 8-bit PGM supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1)
    return pixels.reshape(h, w).astype(np.float64)
