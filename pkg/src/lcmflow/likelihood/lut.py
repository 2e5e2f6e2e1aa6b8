"""Texture-indexed lookup table of LCM parameters."""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..exceptions import DomainError
from .distributions import LcmParams, check_lcm_params

T_FLOOR = 1e-3
TEXTURE_UNITS = "intensity2_per_pixel2"


@dataclass(frozen=True)
class ParamLut:
    """LCM parameters at ``M`` texture knots.

    ``entries`` has shape ``(M, 3)`` with columns (beta, gamma, w_l).  Between
    knots parameters are linear in ``log10(t)``; outside they are clamped to
    the end entries.
    """

    knots: np.ndarray
    entries: np.ndarray
    t_floor: float = T_FLOOR

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64).reshape(-1)
        entries = np.asarray(self.entries, dtype=np.float64).reshape(-1, 3)
        if len(knots) < 1 or len(knots) != len(entries):
            raise DomainError("need one entry per knot and at least one knot")
        if np.any(knots <= 0) or np.any(np.diff(knots) <= 0):
            raise DomainError("knots must be positive and strictly increasing")
        check_lcm_params(entries[:, 0], entries[:, 1], entries[:, 2])
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.knots)

    @property
    def log_knots(self):
        return np.log10(self.knots)

    def lookup(self, t):
        """Interpolated ``(beta, gamma, w_l)`` arrays for texture(s) ``t``."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0):
            raise DomainError("texture must be non-negative")
        s = np.log10(np.maximum(t, self.t_floor))
        lk = self.log_knots
        return tuple(np.interp(s, lk, self.entries[:, j]) for j in range(3))

    def to_dict(self):
        return {
            "knots": [float(k) for k in self.knots],
            "entries": [LcmParams(*row).to_dict() for row in self.entries],
            "texture_units": TEXTURE_UNITS,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("texture_units", TEXTURE_UNITS) != TEXTURE_UNITS:
            raise DomainError(f"unsupported texture units {doc['texture_units']!r}")
        entries = [[e["beta"], e["gamma"], e["w_l"]] for e in doc["entries"]]
        return cls(np.array(doc["knots"], dtype=np.float64), np.array(entries, dtype=np.float64))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def lut_lookup(t, lut):
    """:class:`LcmParams` for a scalar texture, or parameter arrays for an array."""
    beta, gamma, w_l = lut.lookup(t)
    if np.ndim(beta) == 0:
        return LcmParams(float(beta), float(gamma), float(w_l))
    return beta, gamma, w_l
