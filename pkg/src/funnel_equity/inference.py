"""Interval estimation and A/B significance tests for survival ratios.

The log of a ratio of two independent binomial rates is asymptotically
normal with variance (1-p)/(p*n_p) + (1-q)/(q*n_q); confidence intervals
exponentiate a symmetric normal interval on the log scale. Experiment arms
add their log variances, and the z statistic divides the log lift by its
standard error. When matching weights are active, rates are weighted
conversion rates and sample sizes are Kish effective sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DegenerateRateError, DegenerateVarianceError

_NORMAL = NormalDist()


@dataclass(frozen=True)
class RatioEstimate:
    """A survival ratio with its log-scale variance and confidence interval."""

    point: float
    log_variance: float
    ci_low: float
    ci_high: float
    n_focal: float
    n_reference: float

    def __post_init__(self):
        if not (0 < self.ci_low <= self.point <= self.ci_high):
            raise ValueError(
                f"interval must bracket a positive point: ({self.ci_low}, {self.point}, {self.ci_high})"
            )
        if self.log_variance < 0:
            raise ValueError("log variance must be non-negative")
        if self.n_focal <= 0 or self.n_reference <= 0:
            raise ValueError("sample sizes must be positive")


@dataclass(frozen=True)
class TransitionEstimate:
    """A ratio estimate tagged with the funnel transition it measures."""

    from_layer: str
    to_layer: str
    estimate: RatioEstimate


@dataclass(frozen=True)
class LiftResult:
    """Treatment vs control comparison of one survival ratio."""

    sr_treatment: float
    sr_control: float
    lift: float
    log_variance: float
    z: float
    p_value: float


def log_sr_variance(p: float, n_p: float, q: float, n_q: float) -> float:
    """Asymptotic variance of log(p/q) for independent rates p and q.

    (1-p)/(p*n_p) + (1-q)/(q*n_q), each rate divided by its own group's
    sample size.
    """
    if not 0 < p <= 1 or not 0 < q <= 1:
        raise DegenerateRateError(f"rates must be in (0, 1], got p={p}, q={q}")
    if n_p <= 0 or n_q <= 0:
        raise ValueError(f"sample sizes must be positive, got {n_p}, {n_q}")
    return (1 - p) / (p * n_p) + (1 - q) / (q * n_q)


def sr_confidence_interval(sr: float, log_variance: float, level: float) -> tuple[float, float]:
    """Two-sided interval (sr*exp(-z*sqrt(v)), sr*exp(+z*sqrt(v))).

    Multiplicatively symmetric around the point estimate; collapses to the
    point when the variance is zero.
    """
    if sr <= 0:
        raise ValueError(f"survival ratio must be positive, got {sr}")
    if log_variance < 0:
        raise ValueError("log variance must be non-negative")
    if not 0 < level < 1:
        raise ValueError(f"confidence level must be in (0, 1), got {level}")
    half = _NORMAL.inv_cdf(1 - (1 - level) / 2) * math.sqrt(log_variance)
    return sr * math.exp(-half), sr * math.exp(half)


def lift_log_variance(var_treatment: float, var_control: float) -> float:
    """Variance of the log ratio of two independent arm estimates: the sum."""
    if var_treatment < 0 or var_control < 0:
        raise ValueError("variances must be non-negative")
    return var_treatment + var_control


def z_score(sr_treatment: float, sr_control: float, log_variance: float) -> float:
    """log(sr_t/sr_c) over its standard error; exactly 0 for equal ratios."""
    if sr_treatment <= 0 or sr_control <= 0:
        raise ValueError("survival ratios must be positive")
    log_lift = math.log(sr_treatment / sr_control)
    if log_lift == 0.0:
        return 0.0
    if log_variance <= 0:
        raise DegenerateVarianceError("zero variance with unequal ratios")
    return log_lift / math.sqrt(log_variance)


def p_value(z: float) -> float:
    """Two-sided normal tail probability 2*(1 - Phi(|z|)).

    Computed as erfc(|z|/sqrt(2)), which is accurate to double precision
    (far inside the 1e-7 contract) and exactly 1 at z = 0.
    """
    if not math.isfinite(z):
        raise ValueError(f"z must be finite, got {z}")
    return math.erfc(abs(z) / math.sqrt(2.0))


def effective_sample_size(weights: Iterable[float]) -> float:
    """Kish effective sample size (sum w)^2 / (sum w^2).

    Zero weights contribute nothing; n equal weights give back n.
    """
    ws = [float(w) for w in weights]
    if any(w < 0 for w in ws):
        raise ValueError("weights must be non-negative")
    total = math.fsum(ws)
    total_sq = math.fsum(w * w for w in ws)
    if total <= 0 or total_sq <= 0:
        raise ValueError("at least one positive weight required")
    return total * total / total_sq


def estimate_survival_ratio(
    p: float, n_p: float, q: float, n_q: float, level: float = 0.95, point: float | None = None
) -> RatioEstimate:
    """Assemble a RatioEstimate from two conversion rates and sample sizes.

    ``point`` defaults to p/q; pass it explicitly when the point estimate
    was computed upstream (same value, different summation order).
    """
    if q <= 0:
        raise DegenerateRateError("reference conversion rate is zero; the ratio is undefined")
    if point is None:
        point = p / q
    if point <= 0:
        raise DegenerateRateError("survival ratio is zero; no interval exists on the log scale")
    variance = log_sr_variance(p, n_p, q, n_q)
    low, high = sr_confidence_interval(point, variance, level)
    return RatioEstimate(point, variance, low, high, n_p, n_q)


def compare_experiments(treatment: TransitionEstimate, control: TransitionEstimate) -> LiftResult:
    """Significance of the treatment/control difference for one transition.

    Both estimates must measure the same funnel transition; identical arms
    yield lift 0 and p-value exactly 1.
    """
    if (treatment.from_layer, treatment.to_layer) != (control.from_layer, control.to_layer):
        raise ConfigError(
            "mismatched funnel transitions: "
            f"{treatment.from_layer}->{treatment.to_layer} vs {control.from_layer}->{control.to_layer}"
        )
    sr_t = treatment.estimate.point
    sr_c = control.estimate.point
    variance = lift_log_variance(treatment.estimate.log_variance, control.estimate.log_variance)
    z = z_score(sr_t, sr_c, variance)
    return LiftResult(sr_t, sr_c, sr_t / sr_c - 1.0, variance, z, p_value(z))


def bootstrap_sr_confidence_interval(
    focal_outcomes: Sequence[int] | np.ndarray,
    reference_outcomes: Sequence[int] | np.ndarray,
    level: float = 0.95,
    n_resamples: int = 1000,
    seed: int = 0,
    focal_weights: Sequence[float] | np.ndarray | None = None,
    reference_weights: Sequence[float] | np.ndarray | None = None,
) -> tuple[float, float]:
    """Seeded percentile bootstrap for the ratio of two conversion rates.

    Resamples units (with their weights) within each group, recomputes the
    weighted rate ratio, and takes the percentile interval. Cross-check for
    the analytic interval; not the default path.
    """
    if not 0 < level < 1:
        raise ValueError(f"confidence level must be in (0, 1), got {level}")
    y_f = np.asarray(focal_outcomes, dtype=float)
    y_r = np.asarray(reference_outcomes, dtype=float)
    if y_f.size == 0 or y_r.size == 0:
        raise ValueError("both groups need at least one unit")
    w_f = np.ones_like(y_f) if focal_weights is None else np.asarray(focal_weights, dtype=float)
    w_r = np.ones_like(y_r) if reference_weights is None else np.asarray(reference_weights, dtype=float)
    rng = np.random.default_rng(seed)
    ratios = np.empty(n_resamples)
    for b in range(n_resamples):
        i = rng.integers(0, y_f.size, y_f.size)
        j = rng.integers(0, y_r.size, y_r.size)
        num = float(np.dot(w_f[i], y_f[i]))
        den_w = float(w_f[i].sum())
        ref_num = float(np.dot(w_r[j], y_r[j]))
        ref_w = float(w_r[j].sum())
        if den_w <= 0 or ref_w <= 0 or ref_num <= 0:
            ratios[b] = np.nan
            continue
        ratios[b] = (num / den_w) / (ref_num / ref_w)
    valid = ratios[~np.isnan(ratios)]
    if valid.size < n_resamples // 2:
        raise DegenerateRateError("too many degenerate bootstrap resamples")
    alpha = (1 - level) / 2
    low, high = np.quantile(valid, [alpha, 1 - alpha])
    return float(low), float(high)
