"""Per-texture-bin goodness of fit for the LCM and the two baseline families."""
from dataclasses import dataclass

import numpy as np

from .calibration import baseline_fits, bin_edges
from .distributions import gaussian_cdf, lcm_cdf, loglogistic_cdf
from .goodness import ks_uniform

MIN_KS_SAMPLES = 100


@dataclass
class BinFit:
    lo: float
    hi: float
    n: int
    median_abs: float
    ks_lcm: float
    ks_gauss: float
    ks_loglogistic: float


def binned_ks(data, lut, edges=None, min_samples=MIN_KS_SAMPLES):
    """K-S statistics per texture bin.

    The LCM is evaluated through the LUT at each sample's own texture (a
    probability integral transform), the Gaussian and log-logistic are fitted
    to the bin by maximum likelihood.  Bins under ``min_samples`` report NaN.
    ``edges`` defaults to the LUT's knot bins.
    """
    edges = bin_edges(lut.knots) if edges is None else np.asarray(edges, dtype=np.float64)
    idx = np.searchsorted(edges[1:-1], data.t, side="right")
    rows = []
    for b in range(len(edges) - 1):
        sel = idx == b
        z, t = data.z[sel], data.t[sel]
        n = int(len(z))
        row = BinFit(float(edges[b]), float(edges[b + 1]), n,
                     float(np.median(np.abs(z))) if n else np.nan, np.nan, np.nan, np.nan)
        if n >= min_samples:
            row.ks_lcm = ks_uniform(lcm_cdf(z, lut.lookup(t)))
            fit = baseline_fits(z)
            if not fit.degenerate:
                row.ks_gauss = ks_uniform(gaussian_cdf(z, fit.sigma))
                a = np.abs(z)
                row.ks_loglogistic = ks_uniform(loglogistic_cdf(a, fit.ll_scale, fit.ll_shape))
        rows.append(row)
    return rows
