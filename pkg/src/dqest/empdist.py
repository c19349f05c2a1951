"""Empirical risk measures on a single sample of losses.

Losses are oriented so that large positive values are bad.  All
quantile-type quantities use the right-tail convention: the level
``alpha`` is the tail probability, so ``VaR_alpha`` sits near the
``1 - alpha`` quantile.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSample

__all__ = [
    "RiskLevel",
    "UnivariateSample",
    "TildeTransform",
    "empirical_var",
    "empirical_es",
    "empirical_expectile",
    "partial_moment_plus",
    "tilde_cdf",
    "tilde_pdf",
    "tilde_ppf",
]

# slack for index arithmetic such as ceil(N * (1 - alpha)); 0.9 * 100 is
# 90.00000000000001 in binary floating point
_IDX_SLACK = 1e-9


def _alpha(alpha, upper: float = 1.0) -> float:
    a = float(alpha)
    if not (0.0 < a < upper) or math.isnan(a):
        raise ValueError(f"risk level must lie in (0, {upper:g}), got {alpha!r}")
    return a


@dataclass(frozen=True)
class RiskLevel:
    """Tail probability level ``alpha`` in the open unit interval.

    Plain floats are accepted everywhere a level is expected; this wrapper
    only exists to validate once and carry the value around.
    """

    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", _alpha(self.alpha))

    def __float__(self):
        return self.alpha


def _var_index(n: int, alpha: float) -> int:
    # 1-based rank of the order statistic inf{x : F_N(x) >= 1 - alpha}
    k = math.ceil(n * (1.0 - alpha) - _IDX_SLACK)
    return min(max(k, 1), n)


@dataclass(frozen=True, eq=False)
class UnivariateSample:
    """A finite sample of real losses.

    Parameters
    ----------
    values : array_like
        One-dimensional finite values, at least one.
    """

    values: np.ndarray
    sorted: np.ndarray = field(init=False, repr=False)
    _csum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.values, dtype=float).ravel()
        if x.size < 1:
            raise ValueError("sample must contain at least one value")
        if not np.all(np.isfinite(x)):
            raise ValueError("sample contains non-finite values")
        s = np.sort(x)
        object.__setattr__(self, "values", x)
        object.__setattr__(self, "sorted", s)
        object.__setattr__(self, "_csum", np.concatenate(([0.0], np.cumsum(s))))

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def is_constant(self) -> bool:
        return bool(self.sorted[0] == self.sorted[-1])

    def cdf(self, x):
        """Empirical CDF, the fraction of values ``<= x``."""
        return np.searchsorted(self.sorted, x, side="right") / self.n

    def lower_partial(self, y):
        """``E (y - X)_+`` under the empirical law."""
        y = np.asarray(y, dtype=float)
        k = np.searchsorted(self.sorted, y, side="right")
        out = (k * y - self._csum[k]) / self.n
        return np.maximum(out, 0.0)

    def upper_partial(self, t):
        """``E (X - t)_+`` under the empirical law."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.sorted, t, side="right")
        out = ((self._csum[-1] - self._csum[k]) - (self.n - k) * t) / self.n
        return np.maximum(out, 0.0)

    def var(self, alpha) -> float:
        return empirical_var(self, alpha)

    def es(self, alpha) -> float:
        return empirical_es(self, alpha)

    def expectile(self, alpha) -> float:
        return empirical_expectile(self, alpha)


def _as_sample(x) -> UnivariateSample:
    return x if isinstance(x, UnivariateSample) else UnivariateSample(x)


def empirical_var(sample, alpha) -> float:
    """Empirical Value-at-Risk, the ``ceil(N (1 - alpha))``-th order statistic.

    Examples
    --------
    >>> empirical_var(range(1, 11), 0.2)
    8.0
    """
    s = _as_sample(sample)
    a = _alpha(alpha)
    return float(s.sorted[_var_index(s.n, a) - 1])


def empirical_es(sample, alpha) -> float:
    """Empirical Expected Shortfall as the exact tail-quantile integral.

    With ``m = N - floor(N alpha)`` this is
    ``(sum_{k > m} X_(k) + (N alpha - (N - m)) X_(m)) / (N alpha)``, i.e.
    the average of the top ``N alpha`` order statistics with a fractional
    weight on the boundary one.
    """
    s = _as_sample(sample)
    a = _alpha(alpha)
    n = s.n
    na = n * a
    j = min(math.floor(na + _IDX_SLACK), n)  # number of full tail atoms
    m = n - j
    if j == 0:
        # N alpha < 1, the tail is a fraction of the largest atom
        return float(s.sorted[-1])
    # direct tail sum, a cumsum difference would not be exact for a single atom
    top = float(np.sum(s.sorted[m:]))
    frac = na - j
    if m >= 1 and frac > 0:
        top += frac * s.sorted[m - 1]
    return float(top / na)


def empirical_expectile(sample, alpha) -> float:
    """Empirical expectile, the root of ``(1-a) E(X-t)_+ = a E(t-X)_+``.

    The balance function is piecewise linear in ``t`` with kinks at the
    order statistics, so the root is located by a sorted scan and then
    solved exactly on its linear piece.
    """
    s = _as_sample(sample)
    a = _alpha(alpha)
    x, c, n = s.sorted, s._csum, s.n
    if s.is_constant:
        return float(x[0])
    # h evaluated at each order statistic with j = #{x <= x_(j)} (ties folded)
    j = np.searchsorted(x, x, side="right")
    upper = (c[-1] - c[j]) - (n - j) * x
    lower = j * x - c[j]
    h = (1.0 - a) * upper - a * lower  # non-increasing in x
    idx = int(np.searchsorted(-h, 0.0, side="right")) - 1  # last h >= 0
    idx = min(max(idx, 0), n - 1)
    jj = int(j[idx])
    # on [x_(jj), x_(jj+1)] the sets {x <= t} and {x > t} are fixed
    num = (1.0 - a) * (c[-1] - c[jj]) + a * c[jj]
    den = (1.0 - a) * (n - jj) + a * jj
    t = num / den
    lo = x[idx]
    hi = x[jj] if jj < n else x[-1]
    return float(min(max(t, lo), hi))


def partial_moment_plus(sample, t) -> float:
    """Upper partial moment ``mean((X - t)_+)``."""
    return float(_as_sample(sample).upper_partial(float(t)))


class TildeTransform:
    """Tilde transform of a distribution with finite mean.

    ``F~(y) = A(y) / (2 A(y) + mu - y)`` with ``A(y) = E (y - X)_+``.  The
    ``1 - alpha`` quantile of the transformed law is the ``alpha``-expectile of
    the original one.

    Parameters
    ----------
    base : UnivariateSample, array_like or law
        Anything exposing ``mean``, ``cdf`` and ``lower_partial``; arrays are
        wrapped as an empirical sample.
    """

    def __init__(self, base):
        if not all(hasattr(base, k) for k in ("mean", "cdf", "lower_partial")):
            base = UnivariateSample(base)
        self.base = base

    def _check(self):
        if getattr(self.base, "is_constant", False):
            raise DegenerateSample("tilde transform of a constant sample is undefined")

    def _denominator(self, y):
        a = self.base.lower_partial(y)
        return a, 2.0 * a + self.base.mean - y

    def cdf(self, y):
        self._check()
        a, d = self._denominator(np.asarray(y, dtype=float))
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(d > 0, a / d, 0.0)
        return out if np.ndim(out) else float(out)

    def pdf(self, y):
        self._check()
        y = np.asarray(y, dtype=float)
        a, d = self._denominator(y)
        f = self.base.cdf(y)
        # F(y) mu - int_{x<=y} x dF = F(y) (mu - y) + A(y)
        # nonnegative in exact arithmetic, clip the cancellation above the support
        num = np.maximum(f * (self.base.mean - y) + a, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(d > 0, (num / d) / d, 0.0)
        return out if np.ndim(out) else float(out)

    def ppf(self, p) -> float:
        """Quantile of the transformed law, i.e. the ``1 - p`` expectile."""
        self._check()
        p = float(p)
        if not 0.0 < p < 1.0:
            raise ValueError("probability must lie in (0, 1)")
        ex = getattr(self.base, "expectile", None)
        if ex is None:
            raise TypeError("base law does not provide expectiles")
        return float(ex(1.0 - p))


def tilde_cdf(tr: TildeTransform, y):
    """Evaluate the tilde-transformed CDF ``F~(y)``."""
    return tr.cdf(y)


def tilde_pdf(tr: TildeTransform, y):
    """Evaluate the density ``(F(y) mu - int_{-inf}^y x dF) / D(y)^2``."""
    return tr.pdf(y)


def tilde_ppf(tr: TildeTransform, p) -> float:
    return tr.ppf(p)
