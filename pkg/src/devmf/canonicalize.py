"""Identification of fitted factors into a unique SVD-like form.

Any factor pair can be rotated without changing the fitted predictor, so the
raw output of the engine is not unique. ``identify`` resolves this by taking
the rank-q SVD of the product: column factors become orthonormal, row factors
become scaled-orthogonal with descending scales, and signs are fixed so the
largest-magnitude entry of each column factor is positive.

``center`` splits the fit against a known column-space structure (most often
the all-ones vector, recovering a per-column intercept) and identifies the
part orthogonal to it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .engine import RawFit

RANK_TOL = 1e-12


class RankDeficiencyWarning(UserWarning):
    """Product had lower numerical rank than the requested factorization."""

    def __init__(self, msg, effective_rank=None):
        super().__init__(msg)
        self.effective_rank = effective_rank


@dataclass
class CanonicalFit:
    """Identified factorization: eta = (u * d) @ v.T with orthonormal u, v."""

    u: np.ndarray  # n x q, orthonormal columns
    d: np.ndarray  # q descending positive scales
    v: np.ndarray  # p x q, orthonormal columns
    raw: RawFit | None = None  # engine output this identification wraps

    @property
    def scores(self) -> np.ndarray:
        return self.u * self.d

    @property
    def loadings(self) -> np.ndarray:
        return self.v

    @property
    def eta(self) -> np.ndarray:
        return (self.u * self.d) @ self.v.T

    @property
    def rank(self) -> int:
        return self.d.size

    def truncated(self, rank: int) -> "CanonicalFit":
        if rank > self.rank:
            raise ValueError(f"cannot truncate rank {self.rank} fit to {rank}")
        return CanonicalFit(self.u[:, :rank].copy(), self.d[:rank].copy(),
                            self.v[:, :rank].copy(), self.raw)


@dataclass
class CenteredFit:
    """Split eta = base @ base_loadings.T + residual, with residual scores
    orthogonal to the base columns."""

    base: np.ndarray  # n x q0 given structure
    base_loadings: np.ndarray  # p x q0 fitted center loadings
    residual: CanonicalFit
    raw: RawFit | None = None

    @property
    def eta(self) -> np.ndarray:
        return self.base @ self.base_loadings.T + self.residual.eta

    @property
    def rank(self) -> int:
        return self.residual.rank


def identify(scores, loadings, raw: RawFit | None = None) -> CanonicalFit:
    """Unique identification of a factor pair via the SVD of their product.

    Invariant to any invertible recombination of the inputs that leaves the
    product unchanged. Warns (RankDeficiencyWarning) when the product's
    numerical rank falls short of the factor count.
    """
    scores = np.asarray(scores, dtype=float)
    loadings = np.asarray(loadings, dtype=float)
    if scores.ndim != 2 or loadings.ndim != 2 or scores.shape[1] != loadings.shape[1]:
        raise ValueError("factors must be 2-d with a shared trailing dimension")
    qs, rs = np.linalg.qr(scores)
    ql, rl = np.linalg.qr(loadings)
    um, d, vmt = np.linalg.svd(rs @ rl.T)
    u = qs @ um
    v = ql @ vmt.T
    if d[0] > 0 and d[-1] <= RANK_TOL * d[0]:
        eff = int(np.sum(d > RANK_TOL * d[0]))
        warnings.warn(
            RankDeficiencyWarning(
                f"product has numerical rank {eff} < {d.size}", effective_rank=eff))
    # Sign convention: largest-|entry| of each column of v is positive.
    flip = v[np.argmax(np.abs(v), axis=0), np.arange(v.shape[1])] < 0
    u[:, flip] *= -1.0
    v[:, flip] *= -1.0
    return CanonicalFit(u=u, d=d, v=v, raw=raw)


def canonicalize(fit: RawFit) -> CanonicalFit:
    """Identify an engine fit, keeping its metadata attached."""
    return identify(fit.scores, fit.loadings, raw=fit)


def center(scores, loadings, base, out_rank: int | None = None,
           raw: RawFit | None = None) -> CenteredFit:
    """Project the fitted predictor onto a known column-space structure.

    ``base`` is an n x q0 full-column-rank matrix. The fitted center loadings
    solve the projection normal equations; the remainder is identified and
    truncated to ``out_rank`` (default: the factor count of the input).
    """
    scores = np.asarray(scores, dtype=float)
    loadings = np.asarray(loadings, dtype=float)
    base = np.asarray(base, dtype=float)
    if base.ndim == 1:
        base = base[:, None]
    if base.shape[0] != scores.shape[0]:
        raise ValueError("base structure must have one row per data row")
    q0 = base.shape[1]
    if np.linalg.matrix_rank(base) < q0:
        raise ValueError("base structure is rank-deficient")
    gram = base.T @ base
    # base_loadings' = (base'base)^{-1} base' (scores loadings')
    coef = np.linalg.solve(gram, base.T @ scores)  # q0 x q
    base_loadings = loadings @ coef.T  # p x q0
    resid_scores = scores - base @ coef  # (I - H0) scores
    residual = identify(resid_scores, loadings)
    rank = scores.shape[1] if out_rank is None else int(out_rank)
    if rank < residual.rank:
        residual = residual.truncated(rank)
    return CenteredFit(base=base, base_loadings=base_loadings,
                       residual=residual, raw=raw)


def center_fit(fit: RawFit, base=None, out_rank: int | None = None) -> CenteredFit:
    """Center an engine fit; ``base=None`` means the all-ones column."""
    if base is None:
        base = np.ones((fit.scores.shape[0], 1))
    return center(fit.scores, fit.loadings, base, out_rank=out_rank, raw=fit)
