"""Family/link adequacy diagnostics for a fitted factorization.

The chi-square test groups the fitted linear predictors into quantile bins,
sums the raw residuals within each bin, and standardizes the sums by their
estimated variances. Under a correctly specified family the statistic is
asymptotically chi-square with one degree of freedom per group; in practice
the factorization soaks up a noticeable share of the residual variance, so
p-values under the true family sit near 1 rather than uniform.

Entries at or below the first cut are left out of the statistic: the group
sums are differences of the cumulative residual process between consecutive
cuts starting at the second one. ``include_lowest=True`` adds the bottom
bin (and one degree of freedom) for users who want a full partition.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .engine import DataMatrix
from .families import Family, Link

MIN_GROUPS = 3
MAX_DEFAULT_GROUPS = 200
MIN_PER_GROUP = 10


class DegenerateGroupingError(ValueError):
    """Fitted predictor constant (or nearly so); quantile groups collapse."""


class MergedGroupWarning(UserWarning):
    """Tied predictor quantiles forced neighboring groups to merge."""


class SparseGroupWarning(UserWarning):
    """Fewer groups, or fewer entries per group, than the usual guideline."""


@dataclass
class GofReport:
    """Grouped residual test summary plus per-entry squared Pearson residuals."""

    cuts: np.ndarray  # ascending predictor quantiles, last = max
    group_stats: np.ndarray  # standardized group residual sums
    group_counts: np.ndarray
    statistic: float
    df: int
    p_value: float
    pearson: np.ndarray  # (x - mu)^2 / V(mu), zero at unobserved entries
    n_groups_requested: int
    phi: float


def default_group_count(n_observed: int) -> int:
    """At least 15 groups, about 50 entries per group, at most 200 groups."""
    return min(MAX_DEFAULT_GROUPS, max(15, n_observed // 50))


def ghl_test(data: DataMatrix, fit, family: Family, link: Link,
             n_groups: int | None = None, include_lowest: bool = False) -> GofReport:
    """Grouped chi-square adequacy test of the fitted family and link.

    ``fit`` is anything carrying the fitted predictor as ``.eta`` (canonical,
    centered or raw). The group variances use the family's dispersion and the
    effective entry weights, so overdispersed families and binomial trial
    counts are standardized correctly.
    """
    eta = np.asarray(fit.eta, dtype=float)
    if eta.shape != data.x.shape:
        raise ValueError("fit and data shapes do not match")
    w_eff = data.w * family.trials
    mask = w_eff > 0
    n_obs = int(mask.sum())

    if n_groups is None:
        n_groups = default_group_count(n_obs)
    n_groups = int(n_groups)
    if n_groups < MIN_GROUPS:
        raise ValueError(f"need at least {MIN_GROUPS} groups")
    if n_groups < 15 or n_obs < MIN_PER_GROUP * n_groups:
        warnings.warn(f"{n_groups} groups over {n_obs} entries is below the "
                      "15-group / 10-per-group guideline", SparseGroupWarning)

    eta_obs = eta[mask]
    if np.ptp(eta_obs) <= 1e-12 * max(1.0, np.abs(eta_obs).max()):
        raise DegenerateGroupingError("fitted predictor is constant; cannot form groups")

    # Attained quantile cuts guarantee every interval (u_{k-1}, u_k] is hit.
    probs = np.arange(1, n_groups + 1) / n_groups
    cuts = np.unique(np.quantile(eta_obs, probs, method="higher"))
    if cuts.size < n_groups:
        warnings.warn(f"tied predictor values merged {n_groups - cuts.size} group(s)",
                      MergedGroupWarning)
    if cuts.size < 2:
        raise DegenerateGroupingError("all predictor quantiles coincide")

    mu_full = family.clamp_mean(link.m(eta))
    mu_obs = mu_full[mask]
    resid = data.x[mask] - mu_obs
    var = (family.dispersion_multiplier / w_eff[mask]) * family.variance(mu_obs)

    # searchsorted(left): eta <= u_1 -> bin 0 (excluded), (u_1, u_2] -> 1, ...
    idx = np.searchsorted(cuts, eta_obs, side="left")
    nbins = cuts.size
    sums = np.bincount(idx, weights=resid, minlength=nbins)
    variances = np.bincount(idx, weights=var, minlength=nbins)
    counts = np.bincount(idx, minlength=nbins)

    lo = 0 if include_lowest else 1
    t = sums[lo:] / np.sqrt(n_obs)
    d = variances[lo:] / n_obs
    group_counts = counts[lo:]
    group_stats = t / np.sqrt(d)

    statistic = float(np.sum(group_stats**2))
    df = group_stats.size
    p_value = float(stats.chi2.sf(statistic, df))

    with np.errstate(divide="ignore", invalid="ignore"):
        pearson = np.where(mask, (data.x - mu_full) ** 2 / family.variance(mu_full), 0.0)
    return GofReport(cuts=cuts, group_stats=group_stats, group_counts=group_counts,
                     statistic=statistic, df=df, p_value=p_value, pearson=pearson,
                     n_groups_requested=n_groups,
                     phi=float(family.phi))


def group_residuals(report: GofReport) -> np.ndarray:
    """Standardized group residual sums, roughly N(0,1) under a correct family."""
    return report.group_stats
