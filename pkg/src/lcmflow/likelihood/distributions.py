"""Laplace-Cauchy mixture (LCM) density and the baseline families.

The LCM has parameters ``beta`` (Laplace rate encoded as an angle,
``rate = tan(pi * beta / 2)``), ``gamma`` (Cauchy scale) and ``w_l`` (Laplace
weight).  All functions broadcast over ``x`` and the parameters, so a
per-sample parameter schedule can be evaluated in one call.
"""
from dataclasses import dataclass

import numpy as np

from ..exceptions import DomainError


@dataclass(frozen=True)
class LcmParams:
    beta: float
    gamma: float
    w_l: float

    def __post_init__(self):
        check_lcm_params(self.beta, self.gamma, self.w_l)

    def as_tuple(self):
        return (self.beta, self.gamma, self.w_l)

    def to_dict(self):
        return {"beta": float(self.beta), "gamma": float(self.gamma), "w_l": float(self.w_l)}


def check_lcm_params(beta, gamma, w_l):
    beta, gamma, w_l = (np.asarray(p, dtype=np.float64) for p in (beta, gamma, w_l))
    if not (np.all(beta > 0) and np.all(beta < 1)):
        raise DomainError("beta must lie in (0, 1)")
    if not np.all(gamma > 0) or not np.all(np.isfinite(gamma)):
        raise DomainError("gamma must be positive and finite")
    if not (np.all(w_l >= 0) and np.all(w_l <= 1)):
        raise DomainError("w_l must lie in [0, 1]")
    return beta, gamma, w_l


def _unpack(theta):
    if isinstance(theta, LcmParams):
        return theta.as_tuple()
    return theta


def laplace_rate(beta):
    return np.tan(0.5 * np.pi * np.asarray(beta, dtype=np.float64))


def lcm_pdf(x, theta):
    """LCM density.  ``theta`` is an :class:`LcmParams` or a (beta, gamma, w_l) triple."""
    beta, gamma, w_l = check_lcm_params(*_unpack(theta))
    x = np.asarray(x, dtype=np.float64)
    rate = laplace_rate(beta)
    lap = 0.5 * w_l * rate * np.exp(-np.abs(x) * rate)
    cau = (1.0 - w_l) * gamma / (np.pi * (gamma * gamma + x * x))
    return lap + cau


def lcm_logpdf(x, theta):
    """Log-density, stable far into the tails where the Laplace term underflows."""
    beta, gamma, w_l = check_lcm_params(*_unpack(theta))
    x = np.asarray(x, dtype=np.float64)
    rate = laplace_rate(beta)
    with np.errstate(divide="ignore"):
        log_lap = np.log(w_l) + np.log(0.5 * rate) - np.abs(x) * rate
        log_cau = np.log1p(-w_l) + np.log(gamma / np.pi) - np.log(gamma * gamma + x * x)
    return np.logaddexp(log_lap, log_cau)


def lcm_cdf(x, theta):
    beta, gamma, w_l = check_lcm_params(*_unpack(theta))
    x = np.asarray(x, dtype=np.float64)
    rate = laplace_rate(beta)
    tail = 0.5 * np.exp(-np.abs(x) * rate)
    lap = np.where(x < 0, tail, 1.0 - tail)
    cau = 0.5 + np.arctan(x / gamma) / np.pi
    return w_l * lap + (1.0 - w_l) * cau


def lcm_central_mass(c, theta):
    """Probability of ``|x| <= c``: ``F(c) - F(-c)`` written without cancellation."""
    beta, gamma, w_l = check_lcm_params(*_unpack(theta))
    c = np.asarray(c, dtype=np.float64)
    rate = laplace_rate(beta)
    return w_l * -np.expm1(-c * rate) + (1.0 - w_l) * (2.0 / np.pi) * np.arctan(c / gamma)


def lcm_confidence_halfwidth(theta, level=0.9, *, iters=64):
    """Half-width ``c`` of the symmetric region holding probability ``level``.

    Solved by bisection in log(c).  The bracket comes from the two pure
    components: the mixture's central mass is a convex combination of theirs,
    so ``c`` lies between the component half-widths.
    """
    beta, gamma, w_l = check_lcm_params(*_unpack(theta))
    if not 0.0 < level < 1.0:
        raise DomainError("level must lie in (0, 1)")
    rate = laplace_rate(beta)
    c_lap = -np.log1p(-level) / rate
    c_cau = gamma * np.tan(0.5 * np.pi * level)
    lo = np.log(np.minimum(c_lap, c_cau))
    hi = np.log(np.maximum(c_lap, c_cau))
    lo, hi = np.broadcast_arrays(lo, hi)
    lo, hi = lo.astype(np.float64).copy(), hi.astype(np.float64).copy()
    params = np.broadcast_arrays(beta, gamma, w_l, lo)[:3]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = lcm_central_mass(np.exp(mid), params) < level
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out = np.exp(0.5 * (lo + hi))
    return float(out) if out.ndim == 0 else out


def lcm_irls_weight(x, theta, floor=1e-9):
    """``psi(x) / x`` with ``psi = -d log q / dx``; the iteratively reweighted
    least-squares weight of a residual.  ``|x|`` is floored so the Laplace
    cusp yields a large but finite weight at zero.
    """
    beta, gamma, w_l = check_lcm_params(*_unpack(theta))
    ax = np.maximum(np.abs(np.asarray(x, dtype=np.float64)), floor)
    rate = laplace_rate(beta)
    lap = 0.5 * w_l * rate * np.exp(-ax * rate)
    g2 = gamma * gamma + ax * ax
    cau = (1.0 - w_l) * gamma / (np.pi * g2)
    num = lap * rate / ax + cau * 2.0 / g2
    dens = lap + cau
    # far tails: both terms underflow; fall back to the Cauchy limit 2/(gamma^2+x^2)
    return np.where(dens > 0, num / np.where(dens > 0, dens, 1.0), 2.0 / g2)


def lcm_rvs(theta, size, random_state=None):
    """Draw LCM samples: pick a component, then invert its CDF."""
    beta, gamma, w_l = check_lcm_params(*_unpack(theta))
    rng = np.random.default_rng(random_state)
    pick = rng.random(size)
    u = rng.random(size)
    rate = laplace_rate(beta)
    lap = np.where(u < 0.5, np.log(2.0 * u), -np.log(2.0 * (1.0 - u))) / rate
    cau = gamma * np.tan(np.pi * (u - 0.5))
    return np.where(pick < w_l, lap, cau)


def gaussian_logpdf(x, sigma):
    x = np.asarray(x, dtype=np.float64)
    return -0.5 * (x / sigma) ** 2 - np.log(sigma) - 0.5 * np.log(2.0 * np.pi)


def gaussian_cdf(x, sigma):
    from scipy.special import ndtr

    return ndtr(np.asarray(x, dtype=np.float64) / sigma)


def loglogistic_logpdf(x, scale, shape):
    """Log-logistic (Fisk) density on x > 0; ``-inf`` at or below zero."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = np.log(x) - np.log(scale)
        out = np.log(shape) - np.log(scale) + (shape - 1.0) * lr - 2.0 * np.logaddexp(0.0, shape * lr)
    return np.where(x > 0, out, -np.inf)


def loglogistic_cdf(x, scale, shape):
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore"):
        lr = np.log(np.maximum(x, 0.0)) - np.log(scale)
    return np.where(x > 0, 1.0 / (1.0 + np.exp(-shape * lr)), 0.0)
