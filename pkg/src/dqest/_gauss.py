"""Closed-form Gaussian moments of piecewise-linear features.

A feature is a function ``f(u) = c0 + c1 u + sum d_j (u - h_j)_+ +
sum e_j 1{u > k_j}`` of a linear projection ``u = w'X``.  For jointly
Gaussian projections every mean and cross moment of such features has a
closed form in terms of the bivariate normal orthant probability and
truncated first and second moments, which is what this module computes.
Elliptical scale mixtures are handled by integrating over the scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

_SQRT2PI = np.sqrt(2.0 * np.pi)
_RHO_ONE = 1.0 - 1e-10
_TINY = 1e-200

LIN, HINGE, STEP = 0, 1, 2


@dataclass(frozen=True)
class PLFeature:
    """Piecewise-linear function of a scalar, see module docstring."""

    c0: float = 0.0
    c1: float = 0.0
    hinges: tuple = ()  # (threshold, coefficient)
    steps: tuple = ()

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = self.c0 + self.c1 * u
        for h, d in self.hinges:
            out = out + d * np.maximum(u - h, 0.0)
        for k, e in self.steps:
            out = out + e * (u > k)
        return out

    # common features
    @classmethod
    def identity(cls):
        return cls(c1=1.0)

    @classmethod
    def indicator_le(cls, t):
        # 1{u <= t} = 1 - 1{u > t}
        return cls(c0=1.0, steps=((float(t), -1.0),))

    @classmethod
    def pos_part(cls, t):
        return cls(hinges=((float(t), 1.0),))

    @classmethod
    def neg_part(cls, t):
        # (t - u)_+ = t - u + (u - t)_+
        return cls(c0=float(t), c1=-1.0, hinges=((float(t), 1.0),))

    @classmethod
    def abs_dev(cls, t):
        # |u - t| = t - u + 2 (u - t)_+
        return cls(c0=float(t), c1=-1.0, hinges=((float(t), 2.0),))


def norm_pdf(x):
    return np.exp(-0.5 * np.square(x)) / _SQRT2PI


def norm_sf(x):
    return 0.5 * special.erfc(x / np.sqrt(2.0))


def norm_cdf(x):
    return 0.5 * special.erfc(-x / np.sqrt(2.0))


def bvn_cdf(x, y, rho):
    """Bivariate standard normal CDF ``P(Z1 <= x, Z2 <= y)`` via Owen's T."""
    x, y, rho = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, rho)))
    q = np.sqrt(np.maximum(1.0 - rho * rho, 0.0))
    xs = np.where(x == 0.0, _TINY, x)
    ys = np.where(y == 0.0, _TINY, y)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        ax = (ys - rho * xs) / (xs * q)
        ay = (xs - rho * ys) / (ys * q)
    delta = np.where(xs * ys < 0.0, 0.5, 0.0)
    out = 0.5 * (norm_cdf(xs) + norm_cdf(ys)) - special.owens_t(xs, ax) - special.owens_t(ys, ay) - delta
    return np.clip(out, 0.0, 1.0)


def truncated_moments(h, k, rho):
    """Moments of standard bivariate normal on ``{Z1 > h, Z2 > k}``.

    Returns
    -------
    tuple of ndarray
        ``(P, E[Z1 1], E[Z2 1], E[Z1 Z2 1])`` for the region indicator 1.
    """
    h, k, rho = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (h, k, rho)))
    pos = rho >= _RHO_ONE
    neg = rho <= -_RHO_ONE
    mid = ~(pos | neg)
    r = np.where(mid, rho, 0.0)
    q = np.sqrt(1.0 - r * r)
    ph, pk = norm_pdf(h), norm_pdf(k)
    a = norm_sf((k - r * h) / q)
    b = norm_sf((h - r * k) / q)
    lo = bvn_cdf(-h, -k, r)
    e1 = ph * a + r * pk * b
    e2 = pk * b + r * ph * a
    e12 = r * lo + r * h * ph * a + r * k * pk * b + q * ph * norm_pdf((k - r * h) / q)

    # Z2 = Z1: region {Z1 > max(h, k)}
    m = np.maximum(h, k)
    pm = norm_pdf(m)
    lo = np.where(pos, norm_sf(m), lo)
    e1 = np.where(pos, pm, e1)
    e2 = np.where(pos, pm, e2)
    e12 = np.where(pos, norm_sf(m) + m * pm, e12)

    # Z2 = -Z1: region {h < Z1 < -k}
    nonempty = neg & (h < -k)
    pn = np.where(nonempty, norm_cdf(-k) - norm_cdf(h), 0.0)
    d1 = np.where(nonempty, ph - pk, 0.0)
    lo = np.where(neg, pn, lo)
    e1 = np.where(neg, d1, e1)
    e2 = np.where(neg, -d1, e2)
    e12 = np.where(neg, np.where(nonempty, -(pn + h * ph + k * pk), 0.0), e12)
    return lo, e1, e2, e12


class FeatureSet:
    """Features attached to projections, prepared for Gaussian moments.

    Parameters
    ----------
    weights : ndarray, shape (K, n)
        Projection vector for each feature.
    features : sequence of PLFeature
        One per row of ``weights``.
    """

    def __init__(self, weights, features):
        self.weights = np.atleast_2d(np.asarray(weights, dtype=float))
        self.features = list(features)
        if len(self.features) != self.weights.shape[0]:
            raise ValueError("need one feature per projection")
        self.k = len(self.features)
        self.c0 = np.array([f.c0 for f in self.features])
        self.c1 = np.array([f.c1 for f in self.features])
        owner, kind, thr, coef = [], [], [], []
        for i, f in enumerate(self.features):
            if f.c1 != 0.0:
                owner.append(i), kind.append(LIN), thr.append(0.0), coef.append(f.c1)
            for h, d in f.hinges:
                owner.append(i), kind.append(HINGE), thr.append(h), coef.append(d)
            for s, e in f.steps:
                owner.append(i), kind.append(STEP), thr.append(s), coef.append(e)
        self.owner = np.array(owner, dtype=int)
        self.kind = np.array(kind, dtype=int)
        self.thr = np.array(thr, dtype=float)
        self.coef = np.array(coef, dtype=float)
        a = len(owner)
        ia, ib = np.triu_indices(a)
        self._ia, self._ib = ia, ib

    def evaluate(self, x):
        """Feature values on data ``x`` of shape (N, n); returns (N, K)."""
        u = np.asarray(x, dtype=float) @ self.weights.T
        return np.column_stack([f(u[:, j]) for j, f in enumerate(self.features)])

    def gaussian_moments(self, mu, cov, scale=1.0):
        """Raw first and second moments under ``X ~ N(mu, scale^2 cov)``.

        Returns
        -------
        mean : ndarray, shape (K,)
        second : ndarray, shape (K, K)
        """
        w = self.weights
        m = w @ np.asarray(mu, dtype=float)
        wc = w @ cov
        gram = wc @ w.T
        sd = np.sqrt(np.maximum(np.diag(gram), 0.0))
        if np.any(sd <= 0):
            raise ValueError("degenerate projection with zero variance")
        corr = np.clip(gram / np.outer(sd, sd), -1.0, 1.0)
        sd = scale * sd

        own = self.owner
        # standardise atoms: u = m + sd z
        z_thr = (self.thr - m[own]) / sd[own]
        z_coef = np.where(self.kind == STEP, self.coef, self.coef * sd[own])
        const = self.c0 + self.c1 * m

        atom_mean = np.where(
            self.kind == LIN, 0.0,
            np.where(self.kind == HINGE, norm_pdf(z_thr) - z_thr * norm_sf(z_thr), norm_sf(z_thr)),
        )
        contrib = z_coef * atom_mean
        mean = const.copy()
        np.add.at(mean, own, contrib)

        ia, ib = self._ia, self._ib
        ta, tb = self.kind[ia], self.kind[ib]
        h, k = z_thr[ia], z_thr[ib]
        rho = corr[own[ia], own[ib]]
        lo, e1, e2, e12 = truncated_moments(h, k, rho)
        val = np.select(
            [
                (ta == LIN) & (tb == LIN),
                (ta == LIN) & (tb == HINGE),
                (ta == LIN) & (tb == STEP),
                (ta == HINGE) & (tb == LIN),
                (ta == STEP) & (tb == LIN),
                (ta == STEP) & (tb == STEP),
                (ta == STEP) & (tb == HINGE),
                (ta == HINGE) & (tb == STEP),
            ],
            [
                rho,
                rho * norm_sf(k),
                rho * norm_pdf(k),
                rho * norm_sf(h),
                rho * norm_pdf(h),
                lo,
                e2 - k * lo,
                e1 - h * lo,
            ],
            default=e12 - k * e1 - h * e2 + h * k * lo,
        )
        val = val * z_coef[ia] * z_coef[ib]
        # atom-pair moments into feature-pair second moments (no constants yet)
        kk = self.k
        pair = np.zeros((kk, kk))
        oa, ob = own[ia], own[ib]
        np.add.at(pair, (oa, ob), val)
        off = ia != ib
        np.add.at(pair, (ob[off], oa[off]), val[off])
        var_part = mean - const
        second = pair + np.outer(const, const) + np.outer(const, var_part) + np.outer(var_part, const)
        return mean, second
