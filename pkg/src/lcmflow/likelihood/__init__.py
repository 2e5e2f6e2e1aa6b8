"""Texture-scheduled Laplace-Cauchy mixture likelihood for flow errors."""
from .calibration import (BaselineFit, LutFit, TrainingSet, assign_bins, baseline_fits,
                          bin_counts, bin_edges, fit_gaussian, fit_loglogistic, fit_lut,
                          fit_lut_detailed, nll_cost, place_knots)
from .distributions import (LcmParams, gaussian_cdf, gaussian_logpdf, lcm_cdf,
                            lcm_central_mass, lcm_confidence_halfwidth, lcm_irls_weight,
                            lcm_logpdf, lcm_pdf, lcm_rvs, loglogistic_cdf, loglogistic_logpdf)
from .estimators import GaussianLikelihood, LcmLikelihood, LogLogisticLikelihood
from .evaluation import BinFit, binned_ks
from .goodness import ks_statistic, ks_uniform
from .lut import ParamLut, lut_lookup

__all__ = [
    "BaselineFit", "BinFit", "GaussianLikelihood", "LcmLikelihood", "LcmParams", "LogLogisticLikelihood",
    "LutFit", "ParamLut", "TrainingSet", "assign_bins", "baseline_fits", "bin_counts",
    "bin_edges", "binned_ks", "fit_gaussian", "fit_loglogistic", "fit_lut", "fit_lut_detailed",
    "gaussian_cdf", "gaussian_logpdf", "ks_statistic", "ks_uniform", "lcm_cdf",
    "lcm_central_mass", "lcm_confidence_halfwidth", "lcm_irls_weight", "lcm_logpdf",
    "lcm_pdf", "lcm_rvs", "loglogistic_cdf", "loglogistic_logpdf", "lut_lookup", "nll_cost",
    "place_knots",
]
