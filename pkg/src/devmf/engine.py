"""Alternating Fisher-scoring loop for weighted deviance factorizations.

One cycle recomputes the working response and variance weights from the
current linear predictor, then solves a weighted least-squares problem per
row (against the column factors) and per column (against the fresh row
factors). Columns of the factor being regressed against are normalized to
unit length first; the scale is absorbed by the regression coefficients, so
only the conditioning changes. Zero-weight entries are structurally excluded
everywhere: they carry zero solve weight and contribute nothing to the
reported deviance.

The per-row/per-column solves are dispatched to ``devmf._kernels`` (compiled
Cython core with a NumPy fallback). They are mutually independent within a
step and deterministic regardless of how the backend schedules them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import families
from ._kernels import batched_wls
from .families import Family, Link, check_family_link

MPRIME_MIN = 1e-14
INVERSE_MEAN_MIN = 1.1e-7  # keeps |m'| = mu^2 above MPRIME_MIN for the inverse link
WEIGHT_FLOOR_REL = 1e-6  # scoring-weight floor relative to the median observed weight
DEVIANCE_SLACK = 1e-10  # relative increase tolerated before step halving
# Enough halvings that a cycle whose full step increases the deviance backs
# off into the slack (or stalls and triggers the convergence test) instead of
# accepting a real increase.
MAX_HALVINGS = 40


class DegenerateWeightError(ArithmeticError):
    """Inverse-link derivative vanished at a positively weighted entry."""

    def __init__(self, msg, index=None):
        super().__init__(msg)
        self.index = index


class UnderdeterminedError(ValueError):
    """A row or column has fewer positive weights than the rank requires."""


class InitError(ValueError):
    """Initialization impossible (e.g. a column with no observed entries)."""


class DivergenceError(ArithmeticError):
    """The deviance became non-finite during fitting."""

    def __init__(self, msg, iteration=None):
        super().__init__(msg)
        self.iteration = iteration


@dataclass(frozen=True)
class DataMatrix:
    """Dense observation matrix with aligned nonnegative weights.

    ``w[i, j] == 0`` marks a structural zero / holdout entry: it is excluded
    from the fit and from the reported deviance.
    """

    x: np.ndarray
    w: np.ndarray | None = None

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        if x.ndim != 2 or x.size == 0:
            raise ValueError("data must be a nonempty 2-d matrix")
        if not np.all(np.isfinite(x)):
            raise ValueError("data matrix contains non-finite entries")
        w = self.w
        if w is None:
            w = np.ones_like(x)
        else:
            w = np.ascontiguousarray(w, dtype=float)
            if w.shape != x.shape:
                raise ValueError("weight matrix shape does not match the data")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def validate_for_rank(self, rank: int) -> None:
        """Every row and column needs at least ``rank`` observed entries."""
        obs = self.w > 0
        rows = obs.sum(axis=1)
        cols = obs.sum(axis=0)
        if rows.min() < rank:
            i = int(np.argmin(rows))
            raise UnderdeterminedError(
                f"row {i} has {int(rows[i])} observed entries; rank {rank} needs at least {rank}")
        if cols.min() < rank:
            j = int(np.argmin(cols))
            raise UnderdeterminedError(
                f"column {j} has {int(cols[j])} observed entries; rank {rank} needs at least {rank}")


@dataclass(frozen=True)
class ModelSpec:
    """Family, link, rank and optimizer options for one fit.

    ``min_iter`` forces extra cycles before the convergence test applies;
    useful when the factors should be polished past the point where the
    deviance trace goes numerically flat.
    """

    family: Family
    link: Link
    rank: int
    max_iter: int = 200
    rel_tol: float = 1e-6
    jitter: float = 1e-10
    seed: int = 0
    min_iter: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be a positive integer")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")
        check_family_link(self.family, self.link)


@dataclass
class RawFit:
    """Factorization as the last cycle produced it (not yet identified)."""

    scores: np.ndarray  # n x q
    loadings: np.ndarray  # p x q
    eta: np.ndarray  # scores @ loadings.T
    mu: np.ndarray
    deviance_trace: np.ndarray
    converged: bool
    iterations: int

    @property
    def rank(self) -> int:
        return self.scores.shape[1]

    @property
    def deviance(self) -> float:
        return float(self.deviance_trace[-1])


def working_response(x, eta, mu, link: Link):
    """z = eta + (x - mu) / m'(eta), the linearized pseudo-observation."""
    return _working_response(np.asarray(x, dtype=float), np.asarray(eta, dtype=float),
                             np.asarray(mu, dtype=float), link, mask=None)


def _working_response(x, eta, mu, link, mask):
    mp = link.m_prime(eta)
    small = np.abs(mp) < MPRIME_MIN
    if mask is not None:
        small &= mask
    if np.any(small):
        idx = tuple(int(v) for v in np.argwhere(small)[0])
        raise DegenerateWeightError(
            f"inverse-link derivative below {MPRIME_MIN} at entry {idx}", index=idx)
    z = eta + (x - mu) / mp
    if mask is not None:
        z = np.where(mask, z, 0.0)
    return z


def variance_weights(w, eta, mu, family: Family, link: Link):
    """s = w * m'(eta)^2 / V(mu); exactly zero wherever w is zero."""
    w = np.asarray(w, dtype=float)
    mask = w > 0
    var = family.variance(np.asarray(mu, dtype=float))
    if np.any(mask & (var <= 0)):
        idx = tuple(int(v) for v in np.argwhere(mask & (var <= 0))[0])
        raise families.DegenerateVarianceError(
            f"variance function vanished at observed entry {idx}")
    mp = link.m_prime(np.asarray(eta, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        s = w * (mp * mp) / var
    return np.where(mask, s, 0.0)


def wls_solve(design, response, weights, jitter: float = 1e-10):
    """Weighted least squares for a single response vector.

    Solves the q x q normal equations, adding jitter * trace/q to the
    diagonal when the system is numerically singular.
    """
    design = np.atleast_2d(np.asarray(design, dtype=float))
    response = np.asarray(response, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    q = design.shape[1]
    if int(np.sum(weights > 0)) < q:
        raise UnderdeterminedError(
            f"need at least {q} positive weights, got {int(np.sum(weights > 0))}")
    return batched_wls(design, response[None, :], weights[None, :], jitter)[0]


def _imputed_data(x, w):
    """Replace zero-weight entries by the column mean over observed entries."""
    obs = w > 0
    counts = obs.sum(axis=0)
    if counts.min() == 0:
        j = int(np.argmin(counts))
        raise InitError(f"column {j} has no positively weighted entries")
    col_means = (x * obs).sum(axis=0) / counts
    return np.where(obs, x, col_means[None, :])


def _perturbed_mean(x, family: Family):
    """Family-specific nudge keeping g(mu) finite at domain boundaries."""
    name = family.name
    if name in ("poisson", "negbin"):
        return x + 0.1
    if name == "gamma":
        return np.maximum(x, 0.1)
    if name == "bernoulli":
        w = family.trials
        return (w * x + 0.5) / (w + 1.0)
    return np.asarray(x, dtype=float)


def _initial_eta(x, w, family: Family, link: Link):
    mu0 = _perturbed_mean(_imputed_data(x, w), family)
    return link.g(mu0)


def initialize(x, w, family: Family, link: Link, rank: int):
    """Initial column factors: the first ``rank`` columns of g(perturbed X)'."""
    x = np.asarray(x, dtype=float)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    eta0 = _initial_eta(x, w, family, link)
    return np.ascontiguousarray(eta0.T[:, :rank])


def _column_normalized(a):
    norms = np.linalg.norm(a, axis=0)
    return a / np.where(norms > 0, norms, 1.0)


def _total_deviance(x, mu, w_eff, family: Family) -> float:
    return float(np.sum(w_eff * family.unit_deviance(x, mu)))


def _working_state(eta, family: Family, link: Link):
    """Boundary-projected (eta, mu) pair used for scoring.

    Means are clamped into the open domain; wherever clamping was active the
    predictor is recomputed from the clamped mean, so the scoring quantities
    stay finite and self-correcting instead of exploding at the boundary.
    """
    mu_raw = link.m(eta)
    mu = family.clamp_mean(mu_raw)
    if link.name == "inverse":
        mu = np.maximum(mu, INVERSE_MEAN_MIN)
    changed = mu != mu_raw
    if np.any(changed):
        eta = np.where(changed, link.g(mu), eta)
    return eta, mu


def _cycle(x, w_eff, mask, eta, loadings, family, link, jitter):
    """One full scoring cycle; returns (scores, loadings, eta) after the update."""
    eta_w, mu = _working_state(eta, family, link)
    z = _working_response(x, eta_w, mu, link, mask)
    s = variance_weights(w_eff, eta_w, mu, family, link)
    # Cells whose mean sits on the domain boundary lose their scoring weight,
    # letting the low-rank extrapolation run off. Adding a tiny tether toward
    # the current working predictor (weight relative to the median observed
    # weight) keeps those cells anchored while leaving the natural scoring
    # products s*z, and hence healthy cells, essentially untouched.
    floor = WEIGHT_FLOOR_REL * float(np.median(s[mask]))
    if floor > 0:
        s_solve = np.where(mask, s + floor, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(mask, (s * z + floor * eta_w) / s_solve, 0.0)
        s = s_solve
    vn = _column_normalized(loadings)
    scores = batched_wls(vn, z, s, jitter)
    sn = _column_normalized(scores)
    new_loadings = batched_wls(sn, np.ascontiguousarray(z.T),
                               np.ascontiguousarray(s.T), jitter)
    return sn, new_loadings, sn @ new_loadings.T


def dmf_fit(data: DataMatrix, spec: ModelSpec) -> RawFit:
    """Fit the rank-q factorization by cyclic scoring until the deviance settles.

    Raises DivergenceError if the deviance becomes non-finite,
    UnderdeterminedError/InitError for unusable sparsity patterns, and
    DomainError when observed entries fall outside the family's domain.
    """
    family, link = spec.family, spec.link
    x = data.x
    w_eff = data.w * family.trials
    mask = w_eff > 0
    if spec.rank > min(data.n, data.p):
        raise ValueError(f"rank {spec.rank} exceeds min(n, p) = {min(data.n, data.p)}")
    data.validate_for_rank(spec.rank)
    family.check_data(x[mask])

    eta = _initial_eta(x, w_eff, family, link)
    loadings = np.ascontiguousarray(eta.T[:, :spec.rank])

    trace: list[float] = []
    scores = prev_scores = prev_loadings = None
    mu = None
    converged = False
    for _ in range(spec.max_iter):
        scores, loadings, eta_new = _cycle(
            x, w_eff, mask, eta, loadings, family, link, spec.jitter)
        mu_new = family.clamp_mean(link.m(eta_new))
        dev = _total_deviance(x, mu_new, w_eff, family)
        if trace:
            # Fisher scoring is not globally monotone: back off toward the
            # previous factors when a cycle increases the deviance.
            limit = trace[-1] * (1.0 + DEVIANCE_SLACK)
            full_scores, full_loadings = scores, loadings
            alpha = 1.0
            halvings = 0
            while (not np.isfinite(dev) or dev > limit) and halvings < MAX_HALVINGS:
                alpha *= 0.5
                halvings += 1
                scores = (1.0 - alpha) * prev_scores + alpha * full_scores
                loadings = (1.0 - alpha) * prev_loadings + alpha * full_loadings
                eta_new = scores @ loadings.T
                mu_new = family.clamp_mean(link.m(eta_new))
                dev = _total_deviance(x, mu_new, w_eff, family)
        if not np.isfinite(dev):
            raise DivergenceError(
                f"non-finite deviance at cycle {len(trace) + 1}", iteration=len(trace) + 1)
        trace.append(dev)
        eta, mu = eta_new, mu_new
        prev_scores, prev_loadings = scores, loadings
        if len(trace) >= max(2, spec.min_iter):
            if abs(trace[-2] - trace[-1]) / (trace[-2] + 1e-12) < spec.rel_tol:
                converged = True
                break

    return RawFit(scores=scores, loadings=loadings, eta=eta, mu=mu,
                  deviance_trace=np.asarray(trace), converged=converged,
                  iterations=len(trace))
