"""RMSE, forecast-error sampling and the significance Z-test.

The Z statistic divides the mean shift by the square root of the *sum of the
two variances* (not standard errors); this matches the published procedure
verbatim. `conventional=True` switches to the usual two-sample statistic with
per-sample variance scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

DEFAULT_N_SAMPLES = 10_000

# p-value boundaries for the significance stars, left-closed
STAR_LEVELS = ((0.01, "‡"), (0.05, "†"), (0.2, "*"))


@dataclass(frozen=True)
class ErrorDistribution:
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", s)
        if not np.isfinite(s).all():
            raise ValidationError("error samples must be finite")

    @property
    def mean(self) -> float:
        return float(self.samples.mean())

    @property
    def variance(self) -> float:
        return float(self.samples.var())


@dataclass(frozen=True)
class SignificanceReport:
    z: float
    p: float
    stars: str


def rmse(pred, actual) -> float:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or pred.size == 0:
        raise ValidationError("pred and actual must be equal-length, non-empty")
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def stars_for_p(p: float) -> str:
    for threshold, star in STAR_LEVELS:
        if p < threshold:
            return star
    return ""


def z_test(pop: ErrorDistribution, sample: ErrorDistribution,
           conventional: bool = False) -> SignificanceReport:
    """One-sided Z-test of whether `sample` errors are smaller than `pop`.

    Z = (mean_pop - mean_sample) / sqrt(var_pop + var_sample); positive Z
    means the sample improves on the population. With `conventional=True`
    the variances are divided by their sample counts first.
    """
    if len(pop.samples) < 2 or len(sample.samples) < 2:
        raise ValidationError("both distributions need at least 2 samples")
    if conventional:
        denom2 = pop.variance / len(pop.samples) + sample.variance / len(sample.samples)
    else:
        denom2 = pop.variance + sample.variance
    if denom2 <= 0:
        raise ValidationError("combined variance is zero")
    z = (pop.mean - sample.mean) / math.sqrt(denom2)
    p = 1.0 - normal_cdf(z)
    return SignificanceReport(z=z, p=p, stars=stars_for_p(p))


def build_error_distribution(draws: np.ndarray, actual,
                             n_samples: int = DEFAULT_N_SAMPLES,
                             signed: bool = False) -> ErrorDistribution:
    """Pool per-day forecast draws into a fixed-size error distribution.

    `draws` is day x draw; errors are absolute by default. Samples are
    stratified across days: each day contributes ceil(n_samples / n_days)
    errors (cycling its draws), trimmed to exactly n_samples.
    """
    draws = np.asarray(draws, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if draws.ndim != 2 or draws.shape[1] == 0:
        raise ValidationError("draws must be day x draw with at least one draw")
    if draws.shape[0] != len(actual):
        raise ValidationError("one actual value per forecast day required")
    errors = draws - actual[:, None]
    if not signed:
        errors = np.abs(errors)
    n_days, n_draws = errors.shape
    per_day = -(-n_samples // n_days)  # ceil
    idx = np.arange(per_day) % n_draws
    pooled = errors[:, idx].ravel()[:n_samples]
    return ErrorDistribution(samples=pooled)
