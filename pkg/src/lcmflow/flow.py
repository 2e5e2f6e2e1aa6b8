"""Two-frame pyramidal Lucas-Kanade flow, sparse and dense.

``lucas_kanade`` tracks an arbitrary point set: every point carries its own
window, sampled bilinearly, and is refined coarse-to-fine.  ``dense_flow``
solves the same windowed normal equations at every pixel at once with the
iterative-warp formulation (the window sums become box filters), which is
orders of magnitude faster; ``method="pointwise"`` runs the per-point tracker
on every pixel centre instead.
"""
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._validation import check_image, check_points, check_scalar
from .exceptions import DomainError
from .imaging import gradients

FLF_MAGIC = b"FLF1"
_FLF_RECORD = np.dtype([("u", "<f4"), ("v", "<f4"), ("du", "<f4"), ("dv", "<f4"),
                        ("valid", "u1")])

_PYRAMID_TAPS = np.exp(-0.5 * np.arange(-2.0, 3.0) ** 2)
_PYRAMID_TAPS /= _PYRAMID_TAPS.sum()
MIN_PYRAMID_SIDE = 8


@dataclass
class FlowField:
    """Flow vectors (image basis, pixels/frame) at sample positions.

    ``grid_shape`` is set when the samples are every pixel centre of an image in
    row-major order, which lets :meth:`as_grid` reshape them.
    """

    positions: np.ndarray
    vectors: np.ndarray
    valid: np.ndarray
    grid_shape: tuple = None

    def __post_init__(self):
        self.positions = check_points(self.positions, "positions")
        self.vectors = np.asarray(self.vectors, dtype=np.float64).reshape(-1, 2)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        if not (len(self.positions) == len(self.vectors) == len(self.valid)):
            raise DomainError("positions, vectors and valid must have equal length")
        if self.grid_shape is not None:
            self.grid_shape = tuple(int(s) for s in self.grid_shape)
            if self.grid_shape[0] * self.grid_shape[1] != len(self.positions):
                raise DomainError("grid_shape does not match sample count")

    def __len__(self):
        return len(self.positions)

    def as_grid(self):
        """Vectors reshaped to ``(H, W, 2)``; invalid samples hold NaN."""
        if self.grid_shape is None:
            raise DomainError("flow field is not a dense grid")
        vec = np.where(self.valid[:, None], self.vectors, np.nan)
        return vec.reshape(self.grid_shape + (2,))

    def subset(self, mask):
        mask = np.asarray(mask)
        return FlowField(self.positions[mask], self.vectors[mask], self.valid[mask])

    def save(self, path):
        """Write the little-endian FLF1 format: magic, u32 count, 17-byte records."""
        rec = np.empty(len(self), dtype=_FLF_RECORD)
        rec["u"], rec["v"] = self.positions[:, 0], self.positions[:, 1]
        vec = np.where(self.valid[:, None], self.vectors, 0.0)
        rec["du"], rec["dv"] = vec[:, 0], vec[:, 1]
        rec["valid"] = self.valid
        with open(path, "wb") as fh:
            fh.write(FLF_MAGIC)
            fh.write(struct.pack("<I", len(self)))
            fh.write(rec.tobytes())

    @classmethod
    def load(cls, path, grid_shape=None):
        data = Path(path).read_bytes()
        if data[:4] != FLF_MAGIC:
            raise DomainError(f"{path}: bad flow file magic")
        (count,) = struct.unpack("<I", data[4:8])
        if len(data) != 8 + count * _FLF_RECORD.itemsize:
            raise DomainError(f"{path}: truncated flow file")
        rec = np.frombuffer(data, dtype=_FLF_RECORD, count=count, offset=8)
        pos = np.column_stack([rec["u"], rec["v"]]).astype(np.float64)
        vec = np.column_stack([rec["du"], rec["dv"]]).astype(np.float64)
        return cls(pos, vec, rec["valid"].astype(bool), grid_shape=grid_shape)


@dataclass(frozen=True)
class LkParams:
    """Lucas-Kanade settings; defaults follow the calibrated LK configuration."""

    window: int = 21
    max_level: int = 3
    max_iters: int = 30
    eps: float = 0.01
    min_eig: float = 1e-4

    def __post_init__(self):
        check_scalar(self.window, "window", lo=3, integer=True)
        if self.window % 2 == 0:
            raise DomainError("window must be odd")
        check_scalar(self.max_level, "max_level", lo=0, integer=True)
        check_scalar(self.max_iters, "max_iters", lo=1, integer=True)
        check_scalar(self.eps, "eps", lo=0.0, lo_open=True)
        check_scalar(self.min_eig, "min_eig", lo=0.0)


def pyr_down(img):
    blurred = ndimage.correlate1d(img, _PYRAMID_TAPS, axis=0, mode="nearest")
    blurred = ndimage.correlate1d(blurred, _PYRAMID_TAPS, axis=1, mode="nearest")
    return blurred[::2, ::2]


def build_pyramid(img, levels):
    """Gaussian pyramid with ``levels`` images, finest first.

    Level ``L`` pixel ``(u, v)`` sits at ``(2**L * u, 2**L * v)`` in level 0.
    """
    levels = check_scalar(levels, "levels", lo=1, integer=True)
    arr = check_image(img)
    pyramid = [arr]
    for _ in range(levels - 1):
        nxt = pyr_down(pyramid[-1])
        if min(nxt.shape) < MIN_PYRAMID_SIDE:
            raise DomainError(f"{levels} pyramid levels leave a level smaller than "
                              f"{MIN_PYRAMID_SIDE}x{MIN_PYRAMID_SIDE} for a {arr.shape} image")
        pyramid.append(nxt)
    return pyramid


def pyramid_levels(shape, params):
    """Levels actually used: at most ``max_level + 1``, and never one whose side
    is no larger than the window (a window covering a whole coarse level sees
    mostly clamped border and can walk the estimate far off)."""
    h, w = shape
    levels = 1
    while levels <= params.max_level:
        h, w = (h + 1) // 2, (w + 1) // 2
        if min(h, w) <= params.window:
            break
        levels += 1
    return levels


def _bilinear_stencil(shape, x, y):
    h, w = shape
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.minimum(x.astype(np.intp), w - 2)
    y0 = np.minimum(y.astype(np.intp), h - 2)
    return y0 * w + x0, x - x0, y - y0


def _gather(img, stencil):
    i00, fx, fy = stencil
    w = img.shape[1]
    flat = img.ravel()
    a, b = flat.take(i00), flat.take(i00 + 1)
    c, d = flat.take(i00 + w), flat.take(i00 + w + 1)
    top = a + (b - a) * fx
    bot = c + (d - c) * fx
    return top + (bot - top) * fy


def bilinear(img, x, y):
    """Sample ``img`` (at least 2x2) at real coordinates with edge clamping."""
    return _gather(img, _bilinear_stencil(img.shape, x, y))


def _check_pair(prev, nxt):
    prev = check_image(prev, "prev", min_size=3)
    nxt = check_image(nxt, "next", min_size=3)
    if prev.shape != nxt.shape:
        raise DomainError(f"frame sizes differ: {prev.shape} vs {nxt.shape}")
    return prev, nxt


def _solve_2x2(s11, s12, s22, b1, b2, ok):
    det = s11 * s22 - s12 * s12
    safe = np.where(ok, det, 1.0)
    d1 = np.where(ok, (s22 * b1 - s12 * b2) / safe, 0.0)
    d2 = np.where(ok, (s11 * b2 - s12 * b1) / safe, 0.0)
    return d1, d2


def _min_eig(s11, s12, s22):
    return 0.5 * (s11 + s22) - np.hypot(0.5 * (s11 - s22), s12)


def lucas_kanade(prev, next, points, params=None, *, chunk=2048):
    """Track ``points`` (N, 2) from ``prev`` to ``next``.

    A point is invalid when its window structure tensor is near-singular
    (smaller eigenvalue of the window-mean tensor below ``params.min_eig``) at
    the finest level, or when the tracked position leaves the image.
    """
    params = params or LkParams()
    prev, nxt = _check_pair(prev, next)
    pts = check_points(points)
    h, w = prev.shape
    if np.any((pts[:, 0] < 0) | (pts[:, 0] > w - 1) | (pts[:, 1] < 0) | (pts[:, 1] > h - 1)):
        raise DomainError("points must lie inside the image")
    flow, singular = _track(prev, nxt, pts, params, chunk)
    end = pts + flow
    inside = (end[:, 0] >= 0) & (end[:, 0] <= w - 1) & (end[:, 1] >= 0) & (end[:, 1] <= h - 1)
    return FlowField(pts, flow, inside & ~singular)


def _track(prev, nxt, pts, params, chunk):
    levels = pyramid_levels(prev.shape, params)
    prev_pyr = build_pyramid(prev, levels)
    next_pyr = build_pyramid(nxt, levels)
    grads = [gradients(level) for level in prev_pyr]
    half = params.window // 2
    off = np.arange(-half, half + 1, dtype=np.float64)
    ox, oy = (a.ravel() for a in np.meshgrid(off, off))

    flow = np.zeros_like(pts)
    singular = np.zeros(len(pts), dtype=bool)
    for start in range(0, len(pts), chunk):
        sl = slice(start, start + chunk)
        flow[sl], singular[sl] = _track_chunk(prev_pyr, next_pyr, grads, pts[sl],
                                              ox, oy, params)
    return flow, singular


def _track_chunk(prev_pyr, next_pyr, grads, pts, ox, oy, params):
    guess = np.zeros_like(pts)
    singular = np.zeros(len(pts), dtype=bool)
    for level in range(len(prev_pyr) - 1, -1, -1):
        scale = 2.0 ** level
        px = pts[:, 0:1] / scale + ox
        py = pts[:, 1:2] / scale + oy
        stencil = _bilinear_stencil(prev_pyr[level].shape, px, py)
        tmpl = _gather(prev_pyr[level], stencil)
        gx = _gather(grads[level][0], stencil)
        gy = _gather(grads[level][1], stencil)
        s11 = np.mean(gx * gx, axis=1)
        s12 = np.mean(gx * gy, axis=1)
        s22 = np.mean(gy * gy, axis=1)
        ok = _min_eig(s11, s12, s22) >= params.min_eig
        d = np.zeros_like(pts)
        active = ok.copy()
        for _ in range(params.max_iters):
            if not np.any(active):
                break
            idx = np.flatnonzero(active)
            warped = bilinear(next_pyr[level], px[idx] + (guess[idx, 0] + d[idx, 0])[:, None],
                              py[idx] + (guess[idx, 1] + d[idx, 1])[:, None])
            it = warped - tmpl[idx]
            b1 = -np.mean(gx[idx] * it, axis=1)
            b2 = -np.mean(gy[idx] * it, axis=1)
            d1, d2 = _solve_2x2(s11[idx], s12[idx], s22[idx], b1, b2, True)
            d[idx, 0] += d1
            d[idx, 1] += d2
            active[idx] = np.hypot(d1, d2) >= params.eps
        guess = guess + d
        if level > 0:
            guess = 2.0 * guess
        else:
            singular = ~ok
    return guess, singular


def dense_flow(prev, next, params=None, *, method="ilk"):
    """Flow at every pixel centre, row-major, as a gridded :class:`FlowField`.

    Low-texture pixels are emitted as valid (with whatever the solver left,
    zero on flat regions); only tracks that leave the image are invalid.
    """
    params = params or LkParams()
    prev, nxt = _check_pair(prev, next)
    h, w = prev.shape
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    pts = np.column_stack([uu.ravel(), vv.ravel()])
    if method == "ilk":
        u, v = _dense_ilk(prev, nxt, params)
        flow = np.column_stack([u.ravel(), v.ravel()])
    elif method == "pointwise":
        flow, _ = _track(prev, nxt, pts, params, chunk=2048)
    else:
        raise DomainError(f"unknown dense flow method {method!r}")
    end = pts + flow
    inside = (end[:, 0] >= 0) & (end[:, 0] <= w - 1) & (end[:, 1] >= 0) & (end[:, 1] <= h - 1)
    return FlowField(pts, flow, inside, grid_shape=(h, w))


def _dense_ilk(prev, nxt, params):
    levels = pyramid_levels(prev.shape, params)
    prev_pyr = build_pyramid(prev, levels)
    next_pyr = build_pyramid(nxt, levels)
    u = v = None
    for level in range(levels - 1, -1, -1):
        i0, i1 = prev_pyr[level], next_pyr[level]
        h, w = i0.shape
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        if u is None:
            u = np.zeros((h, w))
            v = np.zeros((h, w))
        else:
            u = 2.0 * bilinear(u, xx / 2.0, yy / 2.0)
            v = 2.0 * bilinear(v, xx / 2.0, yy / 2.0)
        def box(a):
            return ndimage.uniform_filter(a, size=params.window, mode="nearest")

        for _ in range(params.max_iters):
            # linearise the warped next frame and solve for the total flow, so the
            # window sums see each neighbour's own current estimate
            warped = bilinear(i1, xx + u, yy + v)
            gx, gy = gradients(warped)
            err = gx * u + gy * v - (warped - i0)
            s11, s12, s22 = box(gx * gx), box(gx * gy), box(gy * gy)
            ok = _min_eig(s11, s12, s22) >= params.min_eig
            nu, nv = _solve_2x2(s11, s12, s22, box(gx * err), box(gy * err), ok)
            nu = np.where(ok, nu, u)
            nv = np.where(ok, nv, v)
            change = np.max(np.hypot(nu - u, nv - v))
            u, v = nu, nv
            if change < params.eps:
                break
    return u, v
