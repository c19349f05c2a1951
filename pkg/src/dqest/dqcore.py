"""Empirical diversification quotients and ratios on a loss matrix."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .empdist import (
    _alpha,
    empirical_es,
    empirical_expectile,
    empirical_var,
)
from .errors import DegenerateDenominator, ZeroDenominator

__all__ = ["LossSample", "IndexKind", "DqEstimate", "dq_var", "dq_es", "dq_ex", "dr", "estimate"]


class IndexKind(str, enum.Enum):
    DQ_VAR = "dq-var"
    DQ_ES = "dq-es"
    DQ_EX = "dq-ex"
    DR_VAR = "dr-var"
    DR_ES = "dr-es"

    @property
    def is_dr(self) -> bool:
        return self in (IndexKind.DR_VAR, IndexKind.DR_ES)


@dataclass(frozen=True, eq=False)
class LossSample:
    """``N`` draws of an ``n``-dimensional loss vector, rows are observations."""

    data: np.ndarray
    row_sums: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.data, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValueError("loss sample must be a 2-d array (N x n)")
        if x.shape[0] < 2 or x.shape[1] < 1:
            raise ValueError("loss sample needs N >= 2 rows and n >= 1 columns")
        if not np.all(np.isfinite(x)):
            raise ValueError("loss sample contains non-finite values")
        object.__setattr__(self, "data", x)
        object.__setattr__(self, "row_sums", x.sum(axis=1))

    @property
    def n_obs(self) -> int:
        return self.data.shape[0]

    @property
    def n_assets(self) -> int:
        return self.data.shape[1]

    def column(self, i) -> np.ndarray:
        return self.data[:, i]


def _as_loss(x) -> LossSample:
    return x if isinstance(x, LossSample) else LossSample(x)


@dataclass(frozen=True)
class DqEstimate:
    """Point estimate of a diversification index.

    Attributes
    ----------
    value : float
    marginal_stats : ndarray
        The per-column risk values whose sum is the threshold.
    threshold : float
        ``sum(marginal_stats)``.
    minimizer : float or None
        The optimal ``r`` for DQ^ES.
    canonical : bool
        False for DQ^ex evaluated at a level ``alpha >= 1/2``.
    """

    index_kind: IndexKind
    alpha: float
    value: float
    marginal_stats: np.ndarray
    threshold: float
    minimizer: float | None = None
    canonical: bool = True

    @property
    def alpha_star(self) -> float:
        return self.value * self.alpha


def dq_var(losses, alpha) -> DqEstimate:
    """``#{k : S_k > sum_i VaR_i} / (N alpha)`` using strict inequality."""
    ls = _as_loss(losses)
    a = _alpha(alpha)
    marg = np.array([empirical_var(ls.column(i), a) for i in range(ls.n_assets)])
    t = float(marg.sum())
    cnt = int(np.count_nonzero(ls.row_sums > t))
    return DqEstimate(IndexKind.DQ_VAR, a, cnt / (ls.n_obs * a), marg, t)


def _dq_es_kinks(d: np.ndarray, alpha: float):
    """Minimise ``mean((r d + 1)_+) / alpha`` over ``r > 0`` exactly.

    The objective is convex and piecewise linear with kinks at
    ``r = 1 / |d_k|`` for negative ``d_k``; its value at ``r -> 0`` is
    ``1 / alpha``.
    """
    n = d.size
    pos_sum = d[d >= 0].sum()
    n_pos = np.count_nonzero(d >= 0)
    neg = np.sort(d[d < 0])  # most negative first, smallest kink r first
    if neg.size == 0:
        return 1.0 / alpha, 0.0
    r = -1.0 / neg
    # at the kink of neg[j], the active negatives are neg[j+1:] (larger r_k)
    tail_sum = np.concatenate((np.cumsum(neg[::-1])[::-1][1:], [0.0]))
    tail_cnt = np.arange(neg.size - 1, -1, -1)
    vals = (r * (pos_sum + tail_sum) + n_pos + tail_cnt) / (n * alpha)
    j = int(np.argmin(vals))
    if vals[j] >= 1.0 / alpha:
        return 1.0 / alpha, 0.0
    return float(vals[j]), float(r[j])


def dq_es(losses, alpha) -> DqEstimate:
    """``min_{r > 0} mean((r (S - t) + 1)_+) / alpha`` with ``t = sum_i ES_i``."""
    ls = _as_loss(losses)
    a = _alpha(alpha)
    marg = np.array([empirical_es(ls.column(i), a) for i in range(ls.n_assets)])
    t = float(marg.sum())
    d = ls.row_sums - t
    if not np.any(d > 0):
        return DqEstimate(IndexKind.DQ_ES, a, 0.0, marg, t, minimizer=np.inf)
    val, r = _dq_es_kinks(d, a)
    return DqEstimate(IndexKind.DQ_ES, a, val, marg, t, minimizer=r)


def dq_ex(losses, alpha, allow_noncanonical: bool = False) -> DqEstimate:
    """``(1 / alpha) sum (S - t)_+ / sum |S - t|`` with ``t = sum_i ex_i``.

    Levels ``alpha >= 1/2`` are outside the canonical range and are only
    evaluated when ``allow_noncanonical`` is set; the result is then
    tagged ``canonical=False``.
    """
    ls = _as_loss(losses)
    a = _alpha(alpha)
    canonical = a < 0.5
    if not canonical and not allow_noncanonical:
        raise ValueError("DQ^ex is defined for alpha in (0, 1/2)")
    marg = np.array([empirical_expectile(ls.column(i), a) for i in range(ls.n_assets)])
    t = float(marg.sum())
    d = ls.row_sums - t
    den = np.abs(d).sum()
    if den == 0.0:
        raise DegenerateDenominator("S equals the expectile threshold on every row")
    val = np.maximum(d, 0.0).sum() / den / a
    return DqEstimate(IndexKind.DQ_EX, a, float(val), marg, t, canonical=canonical)


def dr(losses, alpha, measure: str = "var") -> DqEstimate:
    """Diversification ratio ``phi(S) / sum_i phi(X_i)`` for VaR or ES."""
    ls = _as_loss(losses)
    a = _alpha(alpha)
    measure = str(measure).lower()
    if measure not in ("var", "es"):
        raise ValueError("measure must be 'var' or 'es'")
    phi = empirical_var if measure == "var" else empirical_es
    marg = np.array([phi(ls.column(i), a) for i in range(ls.n_assets)])
    den = float(marg.sum())
    # treat a denominator at rounding level of the data as zero
    scale = float(np.abs(ls.data).max(axis=0).sum())
    if abs(den) <= 64 * np.finfo(float).eps * scale:
        raise ZeroDenominator("sum of marginal risk values is zero")
    num = phi(ls.row_sums, a)
    kind = IndexKind.DR_VAR if measure == "var" else IndexKind.DR_ES
    return DqEstimate(kind, a, float(num / den), marg, den)


def estimate(losses, alpha, kind) -> DqEstimate:
    """Dispatch on :class:`IndexKind` (or its string value)."""
    kind = IndexKind(kind)
    if kind is IndexKind.DQ_VAR:
        return dq_var(losses, alpha)
    if kind is IndexKind.DQ_ES:
        return dq_es(losses, alpha)
    if kind is IndexKind.DQ_EX:
        return dq_ex(losses, alpha)
    if kind is IndexKind.DR_VAR:
        return dr(losses, alpha, "var")
    return dr(losses, alpha, "es")
