"""Elliptical loss models and their closed-form diversification values.

Two families are supported: multivariate normal and multivariate Student
t.  The t family uses the *dispersion* parametrisation, so ``sigma`` is the
dispersion matrix and the covariance is ``nu / (nu - 2) * sigma``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, stats

from . import _gauss
from .dqcore import LossSample
from .errors import AssumptionViolated, NotCentered

__all__ = [
    "StandardNormal",
    "StandardT",
    "UnivariateLaw",
    "EllipticalModel",
    "equicorr_sigma",
    "k_sigma",
    "true_dq_var",
    "true_dq_es",
    "true_dq_ex",
    "true_dr",
    "sample",
]


def _level(alpha, upper=1.0):
    a = float(alpha)
    if not 0.0 < a < upper:
        raise ValueError(f"risk level must lie in (0, {upper:g}), got {alpha!r}")
    return a


class _Standard:
    """Common risk-measure machinery for a centred unit-dispersion law."""

    mean = 0.0
    is_constant = False

    def lower_partial(self, y):
        # E(y - Y)_+ = y - E Y + E(Y - y)_+
        y = np.asarray(y, dtype=float)
        return y + self.upper_partial(y)

    def var(self, alpha):
        return float(self.isf(_level(alpha)))

    def expectile(self, alpha):
        """Root of ``(1 - a) E(Y - t)_+ = a E(t - Y)_+``."""
        a = _level(alpha)
        if a == 0.5:
            return 0.0

        def h(t):
            return (1.0 - a) * self.upper_partial(t) - a * self.lower_partial(t)

        lo, hi = -1.0, 1.0
        while h(lo) < 0:
            lo *= 2.0
        while h(hi) > 0:
            hi *= 2.0
        return float(optimize.brentq(h, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))

    def es_level(self, x):
        """Level ``beta`` with ``ES_beta = x`` (the superquantile CDF is ``1 - beta``)."""
        x = float(x)
        if x <= self.mean:
            raise AssumptionViolated("target lies below the mean, no tail level attains it")

        def f(b):
            return self.es(b) - x

        lo = 1e-12
        while f(lo) < 0:
            lo *= 1e-12
            if lo < 1e-250:
                raise AssumptionViolated("target exceeds the ES range of the law")
        return float(optimize.brentq(f, lo, 1.0 - 1e-15, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500))


class StandardNormal(_Standard):
    family = "normal"

    def pdf(self, x):
        return stats.norm.pdf(x)

    def cdf(self, x):
        return stats.norm.cdf(x)

    def sf(self, x):
        return stats.norm.sf(x)

    def ppf(self, p):
        return stats.norm.ppf(p)

    def isf(self, p):
        return stats.norm.isf(p)

    def upper_partial(self, t):
        t = np.asarray(t, dtype=float)
        return stats.norm.pdf(t) - t * stats.norm.sf(t)

    def es(self, alpha):
        a = _level(alpha)
        return float(stats.norm.pdf(stats.norm.isf(a)) / a)


class StandardT(_Standard):
    """Student t with unit dispersion and ``nu`` degrees of freedom."""

    family = "t"

    def __init__(self, nu):
        self.nu = float(nu)
        self._d = stats.t(self.nu)

    def pdf(self, x):
        return self._d.pdf(x)

    def cdf(self, x):
        return self._d.cdf(x)

    def sf(self, x):
        return self._d.sf(x)

    def ppf(self, p):
        return self._d.ppf(p)

    def isf(self, p):
        return self._d.isf(p)

    def _need_mean(self):
        if self.nu <= 1:
            raise AssumptionViolated("Student t with nu <= 1 has no mean")

    def upper_partial(self, t):
        self._need_mean()
        t = np.asarray(t, dtype=float)
        nu = self.nu
        return (nu + t * t) / (nu - 1.0) * self._d.pdf(t) - t * self._d.sf(t)

    def es(self, alpha):
        self._need_mean()
        a = _level(alpha)
        q = self._d.isf(a)
        nu = self.nu
        return float((nu + q * q) / (nu - 1.0) * self._d.pdf(q) / a)


class UnivariateLaw:
    """Location-scale image ``loc + scale * Y`` of a standard law ``Y``."""

    is_constant = False

    def __init__(self, std, loc=0.0, scale=1.0):
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.std, self.loc, self.scale = std, float(loc), float(scale)

    def __repr__(self):
        return f"UnivariateLaw({self.std.family}, loc={self.loc:g}, scale={self.scale:g})"

    @property
    def mean(self):
        return self.loc

    def _z(self, x):
        return (np.asarray(x, dtype=float) - self.loc) / self.scale

    def pdf(self, x):
        return self.std.pdf(self._z(x)) / self.scale

    def cdf(self, x):
        return self.std.cdf(self._z(x))

    def ppf(self, p):
        return self.loc + self.scale * self.std.ppf(p)

    def upper_partial(self, t):
        return self.scale * self.std.upper_partial(self._z(t))

    def lower_partial(self, y):
        return self.scale * self.std.lower_partial(self._z(y))

    def var(self, alpha):
        return self.loc + self.scale * self.std.var(alpha)

    def es(self, alpha):
        return self.loc + self.scale * self.std.es(alpha)

    def expectile(self, alpha):
        return self.loc + self.scale * self.std.expectile(alpha)

    def es_level(self, x):
        return self.std.es_level((float(x) - self.loc) / self.scale)


def equicorr_sigma(n: int, r: float) -> np.ndarray:
    """Equicorrelation matrix with unit diagonal and off-diagonal ``r``.

    ``r = 1`` is allowed and gives the singular comonotonic matrix, which
    :class:`EllipticalModel` will reject.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be positive")
    if n > 1 and not -1.0 / (n - 1) < r <= 1.0:
        raise ValueError("equicorrelation outside the positive-semidefinite range")
    s = np.full((n, n), float(r))
    np.fill_diagonal(s, 1.0)
    return s


def k_sigma(sigma) -> float:
    """``sum_i sqrt(sigma_ii) / sqrt(1' sigma 1)``."""
    s = np.asarray(sigma, dtype=float)
    return float(np.sum(np.sqrt(np.diag(s))) / np.sqrt(np.sum(s)))


@dataclass(frozen=True, eq=False)
class EllipticalModel:
    """Normal or Student t loss vector ``X = mu + A Y``.

    Parameters
    ----------
    family : {"normal", "t"}
    mu : array_like, shape (n,)
    sigma : array_like, shape (n, n)
        Positive-definite dispersion matrix.
    nu : float, optional
        Degrees of freedom, required for ``"t"`` and must exceed 2 unless
        the model was built through :meth:`relaxed`.
    """

    family: str
    mu: np.ndarray
    sigma: np.ndarray
    nu: float | None = None
    is_relaxed: bool = False
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        fam = str(self.family).lower()
        if fam == "student-t" or fam == "student_t":
            fam = "t"
        if fam not in ("normal", "t"):
            raise ValueError(f"unknown family {self.family!r}")
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        s = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if s.shape != (mu.size, mu.size):
            raise ValueError("sigma must be n x n with n = len(mu)")
        if not np.allclose(s, s.T, rtol=0, atol=1e-12):
            raise ValueError("sigma must be symmetric")
        try:
            chol = np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            raise ValueError("sigma must be positive definite") from None
        nu = self.nu
        if fam == "t":
            if nu is None or not nu > 0:
                raise ValueError("t family requires nu > 0")
            if nu <= 2 and not self.is_relaxed:
                raise ValueError("nu <= 2 needs EllipticalModel.relaxed (no finite variance)")
            nu = float(nu)
        else:
            nu = None
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "chol", chol)

    @classmethod
    def relaxed(cls, family, mu, sigma, nu=None):
        """Build a model that may violate the finite-variance condition."""
        return cls(family, mu, sigma, nu, is_relaxed=True)

    @classmethod
    def equicorrelated(cls, family, n, r, nu=None, mu=None):
        mu = np.zeros(n) if mu is None else mu
        return cls(family, mu, equicorr_sigma(n, r), nu)

    @property
    def n(self) -> int:
        return self.mu.size

    @property
    def standard(self):
        return StandardNormal() if self.family == "normal" else StandardT(self.nu)

    @property
    def k(self) -> float:
        return k_sigma(self.sigma)

    def require_finite_variance(self):
        if self.family == "t" and self.nu <= 2:
            raise AssumptionViolated("asymptotic variances need nu > 2")

    def marginal(self, i) -> UnivariateLaw:
        return UnivariateLaw(self.standard, self.mu[i], np.sqrt(self.sigma[i, i]))

    def sum_law(self) -> UnivariateLaw:
        return UnivariateLaw(self.standard, self.mu.sum(), np.sqrt(self.sigma.sum()))

    def shifted(self, mu) -> "EllipticalModel":
        return EllipticalModel(self.family, mu, self.sigma, self.nu, self.is_relaxed)

    # moments of piecewise-linear features ---------------------------------
    def feature_moments(self, fs: _gauss.FeatureSet, epsrel: float = 1e-10):
        """Exact raw means and second moments of features under the model."""
        if self.family == "normal":
            return fs.gaussian_moments(self.mu, self.sigma)
        self.require_finite_variance()
        nu, k = self.nu, fs.k
        chi2 = stats.chi2(nu)

        # W ~ chi2(nu), scale sqrt(nu / W); substitute W = x^2 to tame x -> 0
        def integrand(x):
            if x <= 0.0:
                return np.zeros(k + k * k)
            w = x * x
            m, s2 = fs.gaussian_moments(self.mu, self.sigma, scale=np.sqrt(nu / w))
            return np.concatenate((m, s2.ravel())) * (2.0 * x * chi2.pdf(w))

        lo, hi = chi2.ppf(1e-13), chi2.isf(1e-15)
        inner = np.sqrt(np.array([lo, chi2.ppf(0.1), chi2.median(), chi2.ppf(0.9), hi]))
        val = np.zeros(k + k * k)
        # [0, sqrt(lo)] carries the heavy tail of the scale mixture
        bounds = np.concatenate(([0.0], inner))
        for a, b in zip(bounds[:-1], bounds[1:]):
            part, _ = integrate.quad_vec(integrand, a, b, epsabs=1e-13, epsrel=epsrel, norm="max", limit=400)
            val += part
        return val[:k], val[k:].reshape(k, k)

    def feature_cov(self, fs: _gauss.FeatureSet, method: str = "quad", n_mc: int = 1_000_000, seed=0):
        """Covariance matrix of features, with Monte Carlo standard errors if sampled.

        Returns
        -------
        cov : ndarray, shape (K, K)
        stderr : ndarray or None
        """
        if method == "quad":
            m, s2 = self.feature_moments(fs)
            cov = s2 - np.outer(m, m)
            return 0.5 * (cov + cov.T), None
        if method != "mc":
            raise ValueError("method must be 'quad' or 'mc'")
        self.require_finite_variance()
        y = fs.evaluate(sample(self, n_mc, seed).data)
        yc = y - y.mean(axis=0)
        cov = yc.T @ yc / len(yc)
        prod = yc[:, :, None] * yc[:, None, :]
        se = prod.std(axis=0) / np.sqrt(len(yc))
        return cov, se


def _as_model(model) -> EllipticalModel:
    if not isinstance(model, EllipticalModel):
        raise TypeError("expected an EllipticalModel")
    return model


def true_dq_var(model, alpha) -> float:
    """``P(Y > k VaR_alpha(Y)) / alpha``."""
    m = _as_model(model)
    a = _level(alpha)
    if m.k == 1.0:
        # quantile round trip of the t law is only good to about 1e-10
        return 1.0
    std = m.standard
    return float(std.sf(m.k * std.isf(a)) / a)


def true_dq_es(model, alpha) -> float:
    """``beta / alpha`` where ``ES_beta(Y) = k ES_alpha(Y)``."""
    m = _as_model(model)
    a = _level(alpha)
    if m.k == 1.0:
        return 1.0
    std = m.standard
    return std.es_level(m.k * std.es(a)) / a


def true_dq_ex(model, alpha, allow_noncanonical: bool = False) -> float:
    """``(1 - tilde F_Y(k ex_alpha(Y))) / alpha``.

    The tilde transform of a centred law is scale-equivariant, which is
    what lets the dispersion factor ``k`` act on the standard expectile.
    """
    m = _as_model(model)
    a = _level(alpha, 1.0 if allow_noncanonical else 0.5)
    if m.k == 1.0:
        return 1.0
    std = m.standard
    y = m.k * std.expectile(a)
    lp = std.lower_partial(y)
    ft = lp / (2.0 * lp - y)
    return float((1.0 - ft) / a)


def true_dr(model) -> float:
    """DR of a centred elliptical model, ``1 / k``, for any positive-homogeneous measure."""
    m = _as_model(model)
    if np.any(m.mu != 0):
        raise NotCentered("closed-form DR needs mu = 0")
    return 1.0 / m.k


def sample(model, n_draws: int, seed=None) -> LossSample:
    """Draw ``n_draws`` i.i.d. loss vectors."""
    m = _as_model(model)
    n_draws = int(n_draws)
    if n_draws < 2:
        raise ValueError("need at least 2 draws")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = rng.standard_normal((n_draws, m.n)) @ m.chol.T
    if m.family == "t":
        w = rng.chisquare(m.nu, size=n_draws)
        z *= np.sqrt(m.nu / w)[:, None]
    return LossSample(z + m.mu)
