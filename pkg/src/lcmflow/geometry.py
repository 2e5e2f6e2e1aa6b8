"""Pinhole camera, rigid-body poses and ground-truth flow from known depth.

Frames and conventions
----------------------
The world frame coincides with the camera frame of a pose with zero attitude:
``+x`` right, ``+y`` down, ``+z`` forward along the optical axis.  Attitude is
the aerospace yaw-pitch-roll (Z-Y-X intrinsic) sequence expressed in camera
axes, i.e. yaw turns about the vertical ``y`` axis, pitch about the lateral
``x`` axis and roll about the optical ``z`` axis::

    R(yaw, pitch, roll) = Ry(yaw) @ Rx(pitch) @ Rz(roll)

``R`` maps camera-frame vectors into the world frame.  Depth maps store the
inverse of the ``z`` coordinate of the surface point in the camera frame.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_points, check_scalar
from .exceptions import BehindCameraError, DomainError


@dataclass(frozen=True)
class CameraModel:
    """Distortion-free pinhole camera with square pixels.

    Pixel ``(u, v)`` indexes column ``u`` and row ``v``; pixel centres sit on
    integer coordinates and the principal point is the image centre.
    """

    width: int = 640
    height: int = 360
    horizontal_fov: float = np.deg2rad(120.0)

    def __post_init__(self):
        check_scalar(self.width, "width", lo=1, integer=True)
        check_scalar(self.height, "height", lo=1, integer=True)
        check_scalar(self.horizontal_fov, "horizontal_fov", lo=0.0, hi=np.pi,
                     lo_open=True, hi_open=True)

    @property
    def focal(self):
        return (self.width / 2.0) / np.tan(self.horizontal_fov / 2.0)

    @property
    def principal_point(self):
        return np.array([(self.width - 1) / 2.0, (self.height - 1) / 2.0])

    @property
    def shape(self):
        return (self.height, self.width)

    def pixel_grid(self, step=1, margin=0):
        """Integer pixel centres on a regular grid, as an (N, 2) array of (u, v)."""
        us = np.arange(margin, self.width - margin, step, dtype=np.float64)
        vs = np.arange(margin, self.height - margin, step, dtype=np.float64)
        uu, vv = np.meshgrid(us, vs)
        return np.column_stack([uu.ravel(), vv.ravel()])

    def in_bounds(self, pixels):
        pix = np.asarray(pixels, dtype=np.float64)
        return ((pix[..., 0] >= -0.5) & (pix[..., 0] <= self.width - 0.5)
                & (pix[..., 1] >= -0.5) & (pix[..., 1] <= self.height - 0.5))

    def to_dict(self):
        return {"width": self.width, "height": self.height,
                "horizontal_fov": float(self.horizontal_fov)}


def _axis_rotations(yaw, pitch, roll):
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    rz = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    dry = np.array([[-sy, 0.0, cy], [0.0, 0.0, 0.0], [-cy, 0.0, -sy]])
    drx = np.array([[0.0, 0.0, 0.0], [0.0, -sp, -cp], [0.0, cp, -sp]])
    drz = np.array([[-sr, -cr, 0.0], [cr, -sr, 0.0], [0.0, 0.0, 0.0]])
    return (ry, rx, rz), (dry, drx, drz)


def euler_to_rotation(yaw, pitch, roll):
    """``R = Ry(yaw) @ Rx(pitch) @ Rz(roll)`` (intrinsic yaw, then pitch, then roll)."""
    (ry, rx, rz), _ = _axis_rotations(float(yaw), float(pitch), float(roll))
    return ry @ rx @ rz


def euler_rotation_derivatives(yaw, pitch, roll):
    """``(R, [dR/dyaw, dR/dpitch, dR/droll])`` for :func:`euler_to_rotation`."""
    (ry, rx, rz), (dry, drx, drz) = _axis_rotations(float(yaw), float(pitch), float(roll))
    rxz = rx @ rz
    return ry @ rxz, [dry @ rxz, ry @ drx @ rz, ry @ rx @ drz]


def rotation_to_euler(rot):
    """Inverse of :func:`euler_to_rotation`; pitch is returned in [-pi/2, pi/2]."""
    rot = np.asarray(rot, dtype=np.float64)
    pitch = np.arcsin(np.clip(-rot[1, 2], -1.0, 1.0))
    yaw = np.arctan2(rot[0, 2], rot[2, 2])
    roll = np.arctan2(rot[1, 0], rot[1, 1])
    return np.array([yaw, pitch, roll])


@dataclass(frozen=True)
class Pose:
    """Camera position (metres, world frame) and attitude (yaw, pitch, roll)."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        pos = np.array(self.position, dtype=np.float64).reshape(3)
        ori = np.array(self.orientation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(ori))):
            raise DomainError("pose components must be finite")
        pos.flags.writeable = False
        ori.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", ori)

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=np.float64)
        return cls(x[:3], x[3:6])

    @classmethod
    def from_transform(cls, transform):
        transform = np.asarray(transform, dtype=np.float64)
        return cls(transform[:3, 3], rotation_to_euler(transform[:3, :3]))

    def as_vector(self):
        return np.concatenate([self.position, self.orientation])

    def rotation(self):
        return euler_to_rotation(*self.orientation)

    def transform(self):
        """Homogeneous camera-to-world transform."""
        out = np.eye(4)
        out[:3, :3] = self.rotation()
        out[:3, 3] = self.position
        return out


def invert_transform(transform):
    rot = transform[:3, :3]
    out = np.eye(4)
    out[:3, :3] = rot.T
    out[:3, 3] = -rot.T @ transform[:3, 3]
    return out


def relative_transform(x_k, x_km1):
    """Transform taking camera-frame points at ``x_km1`` into the camera frame at ``x_k``."""
    return invert_transform(x_k.transform()) @ x_km1.transform()


def pixel_to_ray(camera, p):
    """Unit viewing ray(s) through pixel coordinates ``p``; shape follows the input."""
    pts = check_points(p, "p")
    if not np.all(camera.in_bounds(pts)):
        raise DomainError("pixel coordinates outside the image")
    rays = _normalized_rays(camera, pts)
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    return rays[0] if np.ndim(p) == 1 else rays


def ray_to_pixel(camera, v):
    """Perspective projection of camera-frame direction(s) ``v``.  Result may be off-image."""
    vec = np.asarray(v, dtype=np.float64)
    single = vec.ndim == 1
    vec = np.atleast_2d(vec)
    if vec.shape[1] != 3:
        raise DomainError(f"v must have shape (N, 3), got {vec.shape}")
    if np.any(vec[:, 2] <= 0.0):
        raise BehindCameraError("direction does not point in front of the camera")
    pix = _project(camera, vec)
    return pix[0] if single else pix


def _normalized_rays(camera, pts):
    """Rays scaled to unit z: ((u - cx) / f, (v - cy) / f, 1)."""
    c = camera.principal_point
    f = camera.focal
    return np.column_stack([(pts[:, 0] - c[0]) / f, (pts[:, 1] - c[1]) / f,
                            np.ones(len(pts))])


def _project(camera, vec):
    c = camera.principal_point
    f = camera.focal
    return np.column_stack([c[0] + f * vec[:, 0] / vec[:, 2],
                            c[1] + f * vec[:, 1] / vec[:, 2]])


def transfer_pixels(transform, pixels, inv_depth, camera):
    """Map pixels with known inverse depth through a relative transform.

    Each pixel is lifted to the homogeneous point ``[ray / ray_z; rho]`` so an
    inverse depth of zero is a point at infinity.  Returns ``(pixels, valid)``;
    invalid rows (non-finite or negative inverse depth, or behind the camera
    after the transform) hold NaN.
    """
    pts = check_points(pixels)
    rho = np.asarray(inv_depth, dtype=np.float64).reshape(-1)
    rays = _normalized_rays(camera, pts)
    moved = rays @ transform[:3, :3].T + rho[:, None] * transform[:3, 3]
    valid = np.isfinite(rho) & (rho >= 0.0) & (moved[:, 2] > 0.0)
    out = np.full_like(pts, np.nan)
    if np.any(valid):
        out[valid] = _project(camera, moved[valid])
    return out, valid


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel inverse depth (1/m) aligned to a frame; NaN marks invalid pixels."""

    inverse_depth: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.inverse_depth, dtype=np.float64)
        if arr.ndim != 2:
            raise DomainError("inverse_depth must be 2-D")
        finite = arr[np.isfinite(arr)]
        if np.any(finite <= 0.0):
            raise DomainError("finite inverse depths must be positive")
        object.__setattr__(self, "inverse_depth", arr)

    @property
    def shape(self):
        return self.inverse_depth.shape

    def sample(self, pixels):
        """Bilinear inverse depth at pixel coordinates; NaN outside or near invalid pixels."""
        pts = check_points(pixels)
        h, w = self.shape
        u, v = pts[:, 0], pts[:, 1]
        inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
        out = np.full(len(pts), np.nan)
        if not np.any(inside):
            return out
        u, v = u[inside], v[inside]
        u0 = np.minimum(np.floor(u).astype(int), w - 1)
        v0 = np.minimum(np.floor(v).astype(int), h - 1)
        du, dv = u - u0, v - v0
        u1 = np.minimum(u0 + 1, w - 1)
        v1 = np.minimum(v0 + 1, h - 1)
        d = self.inverse_depth
        val = d[v0, u0] * (1 - du) * (1 - dv)
        # Zero weights must not pull NaN neighbours in at exact pixel centres.
        for vv, uu, wt in ((v0, u1, du * (1 - dv)), (v1, u0, (1 - du) * dv),
                           (v1, u1, du * dv)):
            val = val + np.where(wt > 0, d[vv, uu] * wt, 0.0)
        out[inside] = val
        return out


def predict_pixel(x_k, x_km1, p, depth, camera):
    """Where pixel(s) ``p`` of frame k-1 land in frame k.  Returns ``(pixels, valid)``."""
    pts = check_points(p, "p")
    rho = depth.sample(pts)
    pred, valid = transfer_pixels(relative_transform(x_k, x_km1), pts, rho, camera)
    if np.ndim(p) == 1:
        return pred[0], bool(valid[0])
    return pred, valid


def ground_truth_flow(x_k, x_km1, pixels, depth, camera):
    """Ground-truth flow ``g(p) - p`` at ``pixels`` (all pixel centres if None)."""
    from .flow import FlowField

    pts = camera.pixel_grid() if pixels is None else check_points(pixels)
    pred, valid = predict_pixel(x_k, x_km1, pts, depth, camera)
    grid_shape = camera.shape if pixels is None else None
    return FlowField(pts, pred - pts, valid, grid_shape=grid_shape)
