"""scikit-learn style estimators for texture-conditioned flow-error likelihoods.

Every estimator takes textures as ``X`` (shape ``(n,)`` or ``(n, 1)``) and
eigenbasis errors as ``y``.  ``score`` is the mean log-likelihood, i.e. the
negated calibration cost.
"""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..exceptions import DomainError
from .calibration import (DEFAULT_KNOTS, MIN_BIN_SAMPLES, TrainingSet, fit_gaussian,
                          fit_loglogistic, fit_lut_detailed, place_knots)
from .distributions import (gaussian_cdf, gaussian_logpdf, lcm_cdf, lcm_confidence_halfwidth,
                            lcm_irls_weight, lcm_logpdf, loglogistic_cdf, loglogistic_logpdf)
from .lut import T_FLOOR, ParamLut


def _texture(X):
    t = np.asarray(X, dtype=np.float64)
    if t.ndim == 2:
        if t.shape[1] != 1:
            raise DomainError(f"X must be a single texture column, got shape {t.shape}")
        t = t[:, 0]
    if t.ndim != 1:
        raise DomainError(f"X must be 1-D or (n, 1), got shape {t.shape}")
    if np.any(~np.isfinite(t)) or np.any(t < 0):
        raise DomainError("textures must be finite and non-negative")
    return t


def _errors(y, n):
    z = np.asarray(y, dtype=np.float64).ravel()
    if len(z) != n:
        raise DomainError(f"X and y lengths differ ({n} vs {len(z)})")
    if not np.all(np.isfinite(z)):
        raise DomainError("errors must be finite")
    return z


class BoundLikelihood:
    """A likelihood with the per-component textures already resolved.

    ``quadratic`` marks a Gaussian log-density, for which a Gauss-Newton step
    is already the exact minimiser along its direction.
    """

    def __init__(self, logpdf, weight, halfwidth, quadratic=False):
        self.logpdf = logpdf
        self.irls_weight = weight
        self.halfwidth = halfwidth
        self.quadratic = quadratic


class LcmLikelihood(BaseEstimator):
    """Texture-scheduled Laplace-Cauchy mixture calibrated by minimum NLL.

    Parameters
    ----------
    n_knots : int
        Number of log-spaced LUT knots placed over the observed texture range
        when ``knots`` is not given.  Starved knots are dropped (see
        ``dropped_knots_``).
    knots : array-like, optional
        Explicit knot textures; no knot is dropped, starvation raises.
    min_bin_samples : int
        Minimum number of samples in each knot's bin.
    n_restarts : int
        Random Nelder-Mead restarts per knot during initialisation.
    random_state : int
        Seed for the restarts.

    Attributes
    ----------
    lut_ : ParamLut
    cost_, initial_cost_ : float
        Final and starting mean NLL on the training data.
    history_ : list of float
        Cost after each accepted optimisation step (non-increasing).
    """

    def __init__(self, n_knots=DEFAULT_KNOTS, knots=None, min_bin_samples=MIN_BIN_SAMPLES,
                 n_restarts=5, random_state=0, t_floor=T_FLOOR):
        self.n_knots = n_knots
        self.knots = knots
        self.min_bin_samples = min_bin_samples
        self.n_restarts = n_restarts
        self.random_state = random_state
        self.t_floor = t_floor

    @classmethod
    def from_lut(cls, lut):
        est = cls(n_knots=len(lut), knots=lut.knots, t_floor=lut.t_floor)
        est.lut_ = lut
        est.dropped_knots_ = {}
        return est

    def fit(self, X, y):
        t = _texture(X)
        data = TrainingSet(_errors(y, len(t)), t)
        if self.knots is None:
            knots, dropped = place_knots(t, self.n_knots, t_floor=self.t_floor,
                                         min_samples=self.min_bin_samples)
        else:
            knots, dropped = np.asarray(self.knots, dtype=np.float64), {}
        fit = fit_lut_detailed(data, knots, min_samples=self.min_bin_samples,
                               n_restarts=self.n_restarts, random_state=self.random_state,
                               t_floor=self.t_floor)
        self.lut_ = fit.lut
        self.dropped_knots_ = dropped
        self.cost_ = fit.cost
        self.initial_cost_ = fit.initial_cost
        self.history_ = fit.history
        self.bin_counts_ = fit.counts
        return self

    def predict(self, X):
        """Interpolated ``(beta, gamma, w_l)`` per texture, shape ``(n, 3)``."""
        check_is_fitted(self, "lut_")
        return np.column_stack(self.lut_.lookup(_texture(X)))

    def score_samples(self, X, y):
        check_is_fitted(self, "lut_")
        t = _texture(X)
        return lcm_logpdf(_errors(y, len(t)), self.lut_.lookup(t))

    def score(self, X, y):
        return float(np.mean(self.score_samples(X, y)))

    def cdf(self, X, y):
        check_is_fitted(self, "lut_")
        t = _texture(X)
        return lcm_cdf(_errors(y, len(t)), self.lut_.lookup(t))

    def confidence_halfwidth(self, X, level=0.9):
        check_is_fitted(self, "lut_")
        return lcm_confidence_halfwidth(self.lut_.lookup(_texture(X)), level)

    def bind(self, X):
        check_is_fitted(self, "lut_")
        theta = self.lut_.lookup(_texture(X))
        return BoundLikelihood(lambda z: lcm_logpdf(z, theta),
                               lambda z: lcm_irls_weight(z, theta),
                               lambda level: lcm_confidence_halfwidth(theta, level))


class GaussianLikelihood(BaseEstimator):
    """Zero-mean, texture-independent Gaussian; ``sigma=None`` fits it by moments."""

    def __init__(self, sigma=None):
        self.sigma = sigma

    def fit(self, X, y):
        t = _texture(X)
        z = _errors(y, len(t))
        self.sigma_ = float(self.sigma) if self.sigma is not None else fit_gaussian(z)
        if not self.sigma_ > 0:
            raise DomainError("Gaussian scale must be positive")
        return self

    def _scale(self):
        if self.sigma is not None and not hasattr(self, "sigma_"):
            return float(self.sigma)
        check_is_fitted(self, "sigma_")
        return self.sigma_

    def score_samples(self, X, y):
        t = _texture(X)
        return gaussian_logpdf(_errors(y, len(t)), self._scale())

    def score(self, X, y):
        return float(np.mean(self.score_samples(X, y)))

    def cdf(self, X, y):
        t = _texture(X)
        return gaussian_cdf(_errors(y, len(t)), self._scale())

    def bind(self, X):
        s = self._scale()
        n = len(_texture(X))
        return BoundLikelihood(lambda z: gaussian_logpdf(z, s),
                               lambda z: np.full(np.shape(z), 1.0 / (s * s)),
                               lambda level: np.full(n, _gauss_halfwidth(s, level)),
                               quadratic=True)


def _gauss_halfwidth(sigma, level):
    from scipy.special import ndtri

    return float(sigma * ndtri(0.5 * (1.0 + level)))


class LogLogisticLikelihood(BaseEstimator):
    """Log-logistic law on error magnitudes ``|y|``, fitted by maximum likelihood."""

    def fit(self, X, y):
        t = _texture(X)
        self.scale_, self.shape_ = fit_loglogistic(np.abs(_errors(y, len(t))))
        return self

    def score_samples(self, X, y):
        check_is_fitted(self, "scale_")
        t = _texture(X)
        return loglogistic_logpdf(np.abs(_errors(y, len(t))), self.scale_, self.shape_)

    def score(self, X, y):
        return float(np.mean(self.score_samples(X, y)))

    def cdf(self, X, y):
        """CDF of the magnitudes ``|y|``."""
        check_is_fitted(self, "scale_")
        t = _texture(X)
        return loglogistic_cdf(np.abs(_errors(y, len(t))), self.scale_, self.shape_)
