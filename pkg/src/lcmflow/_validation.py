"""Small input-checking helpers in the spirit of ``sklearn.utils.validation``."""
import numbers

import numpy as np

from .exceptions import DomainError


def check_scalar(value, name, *, lo=None, hi=None, lo_open=False, hi_open=False,
                 integer=False):
    """Validate a scalar against optional bounds and return it as float/int."""
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind):
        raise DomainError(f"{name} must be {'an integer' if integer else 'a real number'}, "
                          f"got {value!r}")
    if not integer and not np.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value!r}")
    if lo is not None and (value <= lo if lo_open else value < lo):
        raise DomainError(f"{name}={value!r} must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and (value >= hi if hi_open else value > hi):
        raise DomainError(f"{name}={value!r} must be {'<' if hi_open else '<='} {hi}")
    return int(value) if integer else float(value)


def check_image(img, name="img", min_size=1):
    """Return ``img`` as a finite 2-D float64 array with both sides >= min_size."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise DomainError(f"{name} must be 2-D, got shape {arr.shape}")
    if min(arr.shape) < min_size:
        raise DomainError(f"{name} must be at least {min_size}x{min_size}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite intensities")
    return arr


def check_points(points, name="points"):
    """Return an (N, 2) float64 array of pixel coordinates."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1 and pts.shape[0] == 2:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DomainError(f"{name} must have shape (N, 2), got {pts.shape}")
    return pts


def check_1d(values, name, *, finite=True):
    arr = np.asarray(values, dtype=np.float64).ravel()
    if finite and not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr
