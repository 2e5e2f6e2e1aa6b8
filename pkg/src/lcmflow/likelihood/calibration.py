"""Negative log-likelihood calibration of the LCM lookup table.

The table entries are found by minimising the mean negative log-likelihood of
eigenbasis flow errors under the texture-interpolated LCM.  The optimiser is
derivative-free (Nelder-Mead) on an unconstrained reparametrisation
``(logit beta, log gamma, logit w_l)``, so no analytic gradient exists and
there is nothing to check against finite differences.

Because interpolation couples only neighbouring knots, the joint problem is
solved block-coordinate-wise: each sweep re-optimises one knot's three
parameters over the samples that depend on it.  Every accepted step lowers
the objective, so the cost history is non-increasing.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import expit, logit

from ..exceptions import CalibrationError, DomainError
from .distributions import lcm_logpdf, loglogistic_logpdf
from .lut import T_FLOOR, ParamLut

MIN_BIN_SAMPLES = 100
DEFAULT_KNOTS = 8
_W_CLIP = 1e-9
_CAUCHY_P95 = np.tan(0.475 * np.pi)


@dataclass
class TrainingSet:
    """Flattened eigenbasis error components ``z`` with their textures ``t``."""

    z: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64).ravel()
        self.t = np.asarray(self.t, dtype=np.float64).ravel()
        if self.z.shape != self.t.shape:
            raise DomainError("z and t must have the same length")
        if not np.all(np.isfinite(self.z)):
            raise DomainError("errors must be finite")
        if np.any(~np.isfinite(self.t)) or np.any(self.t < 0):
            raise DomainError("textures must be finite and non-negative")

    def __len__(self):
        return len(self.z)

    def concat(self, other):
        return TrainingSet(np.concatenate([self.z, other.z]), np.concatenate([self.t, other.t]))


def to_unconstrained(entries):
    e = np.asarray(entries, dtype=np.float64).reshape(-1, 3)
    return np.column_stack([logit(e[:, 0]), np.log(e[:, 1]),
                            logit(np.clip(e[:, 2], _W_CLIP, 1.0 - _W_CLIP))])


def from_unconstrained(params):
    p = np.asarray(params, dtype=np.float64).reshape(-1, 3)
    beta = np.clip(expit(p[:, 0]), 1e-12, 1.0 - 1e-12)
    return np.column_stack([beta, np.exp(p[:, 1]), expit(p[:, 2])])


def nll_cost(entries, data, knots, t_floor=T_FLOOR):
    """Mean negative log-likelihood of ``data`` under the LUT ``(knots, entries)``."""
    if len(data) == 0:
        raise DomainError("cost needs at least one sample")
    lut = ParamLut(knots, entries, t_floor)
    return float(-np.mean(lcm_logpdf(data.z, lut.lookup(data.t))))


def bin_edges(knots):
    """Texture bin edges aligned to knot midpoints in log space (outer edges 0, inf)."""
    lk = np.log10(np.asarray(knots, dtype=np.float64))
    mids = 10.0 ** (0.5 * (lk[1:] + lk[:-1]))
    return np.concatenate([[0.0], mids, [np.inf]])


def assign_bins(t, knots):
    return np.searchsorted(bin_edges(knots)[1:-1], np.asarray(t, dtype=np.float64), side="right")


def bin_counts(t, knots):
    return np.bincount(assign_bins(t, knots), minlength=len(knots))


def place_knots(t, n_knots=DEFAULT_KNOTS, *, lo_quantile=0.005, hi_quantile=0.995,
                t_floor=T_FLOOR, min_samples=MIN_BIN_SAMPLES):
    """Log-spaced knots over the activated texture range of ``t``.

    Knots whose bin would hold fewer than ``min_samples`` samples are dropped,
    one at a time from the sparsest, and reported as ``{knot: count}``.
    """
    t = np.asarray(t, dtype=np.float64)
    t = t[t > t_floor]
    if len(t) < min_samples:
        raise CalibrationError(f"only {len(t)} samples above the texture floor",
                               starved={})
    lo, hi = np.quantile(t, [lo_quantile, hi_quantile])
    if n_knots == 1 or hi <= lo:
        knots = np.array([np.sqrt(lo * hi)])
    else:
        knots = np.logspace(np.log10(lo), np.log10(hi), n_knots)
    dropped = {}
    while len(knots) > 1:
        counts = bin_counts(t, knots)
        worst = int(np.argmin(counts))
        if counts[worst] >= min_samples:
            break
        dropped[float(knots[worst])] = int(counts[worst])
        knots = np.delete(knots, worst)
    return knots, dropped


def initial_entry(z):
    """Robust starting parameters for one bin of errors."""
    az = np.abs(np.asarray(z, dtype=np.float64))
    med = max(float(np.median(az)), 1e-9)
    beta = np.clip(2.0 / np.pi * np.arctan(np.log(2.0) / med), 0.01, 0.99)
    gamma = max(float(np.quantile(az, 0.95)) / _CAUCHY_P95, 1e-6)
    return np.array([beta, gamma, 0.8])


@dataclass
class _Interp:
    """Per-sample interpolation: theta = (1 - lam) * e[left] + lam * e[left + 1]."""

    left: np.ndarray
    lam: np.ndarray
    m: int

    @classmethod
    def build(cls, t, knots, t_floor):
        lk = np.log10(knots)
        s = np.log10(np.maximum(t, t_floor))
        m = len(knots)
        if m == 1:
            return cls(np.zeros(len(t), dtype=int), np.zeros(len(t)), 1)
        s = np.clip(s, lk[0], lk[-1])
        left = np.clip(np.searchsorted(lk, s, side="right") - 1, 0, m - 2)
        lam = (s - lk[left]) / (lk[left + 1] - lk[left])
        return cls(left, lam, m)

    def params(self, entries, idx=slice(None)):
        left, lam = self.left[idx], self.lam[idx]
        if self.m == 1:
            return tuple(np.full(len(left), entries[0, j]) for j in range(3))
        right = left + 1
        return tuple((1.0 - lam) * entries[left, j] + lam * entries[right, j] for j in range(3))

    def support(self, k):
        """Samples whose parameters depend on knot ``k``."""
        if self.m == 1:
            return np.ones(len(self.left), dtype=bool)
        return ((self.left == k) & (self.lam < 1.0)) | ((self.left == k - 1) & (self.lam > 0.0))


@dataclass
class LutFit:
    lut: ParamLut
    cost: float
    initial_cost: float
    history: list = field(default_factory=list)
    counts: np.ndarray = None


def _nm(fun, x0, maxiter):
    res = optimize.minimize(fun, x0, method="Nelder-Mead",
                            options={"xatol": 1e-7, "fatol": 1e-11, "maxiter": maxiter,
                                     "maxfev": maxiter * 2})
    return res.x, float(res.fun)


def fit_lut_detailed(data, knots, *, min_samples=MIN_BIN_SAMPLES, n_restarts=5,
                     random_state=0, max_sweeps=20, tol=1e-9, t_floor=T_FLOOR, maxiter=2000):
    """Fit LUT entries at ``knots``; returns a :class:`LutFit` with the cost history."""
    knots = np.asarray(knots, dtype=np.float64).reshape(-1)
    if len(data) == 0:
        raise CalibrationError("empty training set")
    counts = bin_counts(data.t, knots)
    starved = {float(k): int(c) for k, c in zip(knots, counts) if c < min_samples}
    if starved:
        detail = ", ".join(f"t={k:.4g}: {c}" for k, c in starved.items())
        raise CalibrationError(f"knots starved of data (need {min_samples}): {detail}",
                               starved=starved)
    rng = np.random.default_rng(random_state)
    bins = assign_bins(data.t, knots)
    interp = _Interp.build(data.t, knots, t_floor)

    entries = np.array([initial_entry(data.z[bins == k]) for k in range(len(knots))])
    initial = entries.copy()
    initial_cost = nll_cost(entries, data, knots, t_floor)
    history = [initial_cost]

    # Stage 1: each knot on its own bin, with random restarts around the robust start.
    for k in range(len(knots)):
        zk = data.z[bins == k]

        def bin_cost(p, zk=zk):
            return -np.mean(lcm_logpdf(zk, tuple(from_unconstrained(p)[0])))

        start = to_unconstrained(entries[k])[0]
        best_x, best_f = _nm(bin_cost, start, maxiter)
        for _ in range(n_restarts):
            x, f = _nm(bin_cost, start + rng.normal(0.0, 0.5, size=3), maxiter)
            if f < best_f:
                best_x, best_f = x, f
        entries[k] = from_unconstrained(best_x)[0]
    cost = nll_cost(entries, data, knots, t_floor)
    if cost > initial_cost:
        # per-bin optima can lose to the robust start once interpolation couples bins
        entries, cost = initial, initial_cost
    history.append(cost)

    # Stage 2: block-coordinate descent on the interpolated objective.
    if len(knots) > 1:
        supports = [np.flatnonzero(interp.support(k)) for k in range(len(knots))]
        n = len(data)
        for _ in range(max_sweeps):
            before = cost
            for k, idx in enumerate(supports):
                if len(idx) == 0:
                    continue
                z = data.z[idx]

                def block_cost(p, k=k, idx=idx, z=z):
                    trial = entries.copy()
                    trial[k] = from_unconstrained(p)[0]
                    return -np.sum(lcm_logpdf(z, interp.params(trial, idx))) / n

                old = block_cost(to_unconstrained(entries[k])[0])
                x, f = _nm(block_cost, to_unconstrained(entries[k])[0], maxiter)
                if f < old:
                    entries[k] = from_unconstrained(x)[0]
                    cost = nll_cost(entries, data, knots, t_floor)
                    history.append(cost)
            if before - cost <= tol * max(1.0, abs(before)):
                break
    lut = ParamLut(knots, entries, t_floor)
    return LutFit(lut, cost, initial_cost, history, counts)


def fit_lut(data, knots, **kwargs):
    """Minimum-NLL :class:`ParamLut` for ``data`` at the given knots."""
    return fit_lut_detailed(data, knots, **kwargs).lut


@dataclass
class BaselineFit:
    """Gaussian (signed errors) and log-logistic (magnitudes) fits to one bin."""

    n: int
    sigma: float = np.nan
    ll_scale: float = np.nan
    ll_shape: float = np.nan
    degenerate: bool = False


def fit_gaussian(z):
    """Zero-mean Gaussian by moments: ``sigma**2 = mean(z**2)``."""
    z = np.asarray(z, dtype=np.float64)
    return float(np.sqrt(np.mean(z * z)))


def fit_loglogistic(a):
    """Maximum-likelihood log-logistic ``(scale, shape)`` for positive magnitudes."""
    a = np.asarray(a, dtype=np.float64)
    a = a[a > 0]
    if len(a) < 2 or np.all(a == a[0]):
        raise DomainError("log-logistic fit needs at least two distinct positive values")
    la = np.log(a)
    x0 = np.array([np.median(la), np.log(np.pi / (np.sqrt(3.0) * max(np.std(la), 1e-12)))])

    def cost(p):
        return -np.mean(loglogistic_logpdf(a, np.exp(p[0]), np.exp(p[1])))

    res = optimize.minimize(cost, x0, method="Nelder-Mead",
                            options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 4000})
    return float(np.exp(res.x[0])), float(np.exp(res.x[1]))


def baseline_fits(z):
    """Fit both baseline families to one bin; all-zero bins come back ``degenerate``."""
    z = np.asarray(z, dtype=np.float64).ravel()
    if len(z) == 0:
        raise DomainError("baseline fit needs a non-empty bin")
    fit = BaselineFit(n=len(z))
    if not np.any(z != 0):
        fit.degenerate = True
        return fit
    fit.sigma = fit_gaussian(z)
    try:
        fit.ll_scale, fit.ll_shape = fit_loglogistic(np.abs(z))
    except DomainError:
        fit.degenerate = True
    return fit
