"""One-sample Kolmogorov-Smirnov statistics."""
import numpy as np

from ..exceptions import DomainError


def ks_uniform(u):
    """K-S distance between the sample ``u`` and the uniform law on [0, 1]."""
    u = np.sort(np.asarray(u, dtype=np.float64).ravel())
    n = len(u)
    if n == 0:
        raise DomainError("K-S statistic needs at least one sample")
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - u), np.max(u - (i - 1) / n)))


def ks_statistic(samples, cdf):
    """``max_x |F_n(x) - F(x)|`` for a callable model CDF.

    The empirical step is checked on both sides of every order statistic.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if len(x) == 0:
        raise DomainError("K-S statistic needs at least one sample")
    return ks_uniform(cdf(np.sort(x)))
