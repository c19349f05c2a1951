"""Asymptotic variances of the DQ and DR estimators.

Every variance here has the sandwich form ``a' Sigma a / c^2``: ``Sigma`` is
the (long-run) covariance of a small vector of indicator or positive-part
features, ``a`` is a gradient built from densities and thresholds, and
``c`` is 1 except for DQ^ES.  ``joint`` can be an
:class:`~dqest.elliptical.EllipticalModel`, for which ``Sigma`` is
computed semi-analytically, or a loss sample, for which sample moments
and kernel density plug-ins are used.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._gauss import FeatureSet, PLFeature
from .dqcore import LossSample
from .elliptical import EllipticalModel
from .empdist import TildeTransform, UnivariateSample, _alpha
from .errors import AssumptionViolated, DegenerateDenominator, NonPositiveDensity, ZeroDenominator

__all__ = [
    "DensityPlugin",
    "AsymVariance",
    "long_run_cov",
    "solve_alpha_star",
    "sigma2_dq_var_iid",
    "sigma2_dq_var_mixing",
    "sigma2_dq_es_iid",
    "sigma2_dq_es_mixing",
    "sigma2_dq_ex_iid",
    "sigma2_dq_ex_mixing",
    "sigma2_dr",
    "expectile_h",
    "expectile_h_jacobian",
]


class DensityPlugin:
    """Density, CDF and quantile of one margin or of the portfolio sum.

    Use :meth:`analytic` for a known law and :meth:`kde` for data.  The
    ``base`` attribute (a law or an :class:`UnivariateSample`) supplies the
    risk measures.
    """

    def __init__(self, kind, base, pdf, cdf, ppf):
        self.kind, self.base = kind, base
        self._pdf, self._cdf, self._ppf = pdf, cdf, ppf

    def __repr__(self):
        return f"DensityPlugin({self.kind})"

    @classmethod
    def analytic(cls, law):
        return cls("analytic", law, law.pdf, law.cdf, law.ppf)

    @classmethod
    def kde(cls, values, bw_method="silverman"):
        """Gaussian KDE with Silverman's bandwidth; quantiles stay empirical."""
        s = values if isinstance(values, UnivariateSample) else UnivariateSample(values)
        if s.is_constant:
            # point mass: usable for ES-type plug-ins, density requests fail later
            c = float(s.sorted[0])
            plug = cls("kde", s, lambda x: np.zeros_like(np.asarray(x, dtype=float)) + 0.0,
                       lambda x: (np.asarray(x, dtype=float) >= c) + 0.0, lambda p: c)
            plug.bandwidth = 0.0
            return plug
        kde = stats.gaussian_kde(s.values, bw_method=bw_method)
        bw = float(np.sqrt(kde.covariance[0, 0]))
        xs = s.values

        def cdf(x):
            x = np.asarray(x, dtype=float)
            out = np.mean(stats.norm.cdf((x[..., None] - xs) / bw), axis=-1)
            return out if out.ndim else float(out)

        def pdf(x):
            out = kde(np.atleast_1d(np.asarray(x, dtype=float)))
            return out if np.ndim(x) else float(out[0])

        def ppf(p):
            p = float(p)
            return s.var(1.0 - p) if p < 1 else float(s.sorted[-1])

        plug = cls("kde", s, pdf, cdf, ppf)
        plug.bandwidth = bw
        return plug

    def pdf(self, x):
        return self._pdf(x)

    def cdf(self, x):
        return self._cdf(x)

    def ppf(self, p):
        return self._ppf(p)

    def positive_pdf(self, x, what="density"):
        v = float(self._pdf(x))
        if not v > 0:
            raise NonPositiveDensity(f"{what} is not positive at {x!r}")
        return v


@dataclass
class AsymVariance:
    """Result of a sandwich variance computation.

    Attributes
    ----------
    sigma2 : float
        ``a' Sigma a / c^2``, floored at 0 for long-run estimates.
    a_vec, cov_mat : ndarray
    c_const : float or None
    lag_window : int
        Number of autocovariance lags used, 0 for the i.i.d. formula.
    floored : bool
        True when a negative long-run quadratic form was replaced by 0.
    cov_stderr : ndarray or None
        Monte Carlo standard errors of ``cov_mat`` entries, if sampled.
    details : dict
        Thresholds and other plug-in quantities, for audit.
    """

    sigma2: float
    a_vec: np.ndarray
    cov_mat: np.ndarray
    c_const: float | None = None
    lag_window: int = 0
    floored: bool = False
    cov_stderr: np.ndarray | None = None
    details: dict = field(default_factory=dict)

    def recompute(self) -> float:
        q = float(self.a_vec @ self.cov_mat @ self.a_vec)
        c = 1.0 if self.c_const is None else self.c_const
        return q / (c * c)


def long_run_cov(y, max_lag: int = 0, kernel: str = "bartlett") -> np.ndarray:
    """Long-run covariance ``Gamma_0 + sum_l w(l) (Gamma_l + Gamma_l')``.

    Parameters
    ----------
    y : ndarray, shape (N, K)
        Time-ordered rows.
    max_lag : int
        ``L``; 0 gives the plain covariance with divisor ``N``.
    kernel : {"bartlett", "flat"}
        ``w(l) = 1 - l / (L + 1)`` or ``w(l) = 1``.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    n = y.shape[0]
    max_lag = int(max_lag)
    if max_lag < 0 or max_lag >= n:
        raise ValueError("max_lag must lie in [0, N)")
    if kernel not in ("bartlett", "flat"):
        raise ValueError("kernel must be 'bartlett' or 'flat'")
    yc = y - y.mean(axis=0)
    out = yc.T @ yc / n
    for lag in range(1, max_lag + 1):
        g = yc[lag:].T @ yc[:-lag] / n
        w = 1.0 - lag / (max_lag + 1.0) if kernel == "bartlett" else 1.0
        out = out + w * (g + g.T)
    return out


def default_max_lag(n: int) -> int:
    return int(np.floor(n ** (1.0 / 3.0) + 1e-12))


def solve_alpha_star(sum_dist, target: float, alpha=None) -> float:
    """Level ``beta`` with ``ES_beta(S) = target``.

    ``sum_dist`` may be a law, a :class:`DensityPlugin` or sample values.
    For samples the piecewise-linear map ``beta -> beta ES_beta`` is
    solved exactly on the segment that brackets the root.
    """
    base = sum_dist.base if isinstance(sum_dist, DensityPlugin) else sum_dist
    if not hasattr(base, "es"):
        base = UnivariateSample(base)
    target = float(target)
    if isinstance(base, UnivariateSample):
        return _alpha_star_sample(base, target)
    return float(base.es_level(target))


def _alpha_star_sample(s: UnivariateSample, target: float) -> float:
    n = s.n
    desc = s.sorted[::-1]
    if target >= desc[0]:
        raise AssumptionViolated("target ES is not below the sample maximum")
    if target <= s.mean:
        raise AssumptionViolated("target ES is not above the sample mean")
    csum = np.concatenate(([0.0], np.cumsum(desc)))
    # ES at beta = j / N, decreasing in j
    es_grid = csum[1:] / np.arange(1, n + 1)
    j = int(np.searchsorted(-es_grid, -target, side="left")) + 1  # first j with ES_{j/N} <= target
    j = min(j, n)
    # on [(j - 1)/N, j/N]: beta ES_beta = (C_{j-1} + (N beta - (j - 1)) x_(j)) / N
    x = desc[j - 1]
    beta = ((j - 1) * x - csum[j - 1]) / (n * (x - target))
    return float(min(max(beta, (j - 1) / n), j / n))


# --- plumbing shared by the variance functions ------------------------------


class _Setup:
    """Normalised view of ``joint`` with plug-ins and a covariance engine."""

    def __init__(self, joint, margins, sumplug, series_only=False):
        if isinstance(joint, EllipticalModel):
            if series_only:
                raise TypeError("mixing variances need a time-ordered loss sample")
            joint.require_finite_variance()
            self.model, self.data = joint, None
            n = joint.n
            dflt_m = lambda: [DensityPlugin.analytic(joint.marginal(i)) for i in range(n)]  # noqa: E731
            dflt_s = lambda: DensityPlugin.analytic(joint.sum_law())  # noqa: E731
        else:
            ls = joint if isinstance(joint, LossSample) else LossSample(joint)
            self.model, self.data = None, ls
            n = ls.n_assets
            dflt_m = lambda: [DensityPlugin.kde(ls.column(i)) for i in range(n)]  # noqa: E731
            dflt_s = lambda: DensityPlugin.kde(ls.row_sums)  # noqa: E731
        self.n = n
        self.margins = list(margins) if margins is not None else dflt_m()
        if len(self.margins) != n:
            raise ValueError("need one margin plug-in per asset")
        self.sumplug = sumplug if sumplug is not None else dflt_s()

    def weights(self, which):
        # projection vectors: margin i or the sum
        return np.eye(self.n)[which] if which != "sum" else np.ones(self.n)

    def cov(self, projections, features, *, method, n_mc, seed, max_lag, kernel):
        w = np.array([self.weights(p) for p in projections])
        fs = FeatureSet(w, features)
        if self.model is not None:
            cov, se = self.model.feature_cov(fs, method=method, n_mc=n_mc, seed=seed)
            return cov, se, 0
        y = fs.evaluate(self.data.data)
        lag = 0 if max_lag is None else int(max_lag)
        if max_lag is not None and np.unique(self.data.row_sums).size < self.data.n_obs:
            warnings.warn("tied row sums: the mixing limit theory assumes no ties", RuntimeWarning, stacklevel=4)
        return long_run_cov(y, lag, kernel), None, lag


def _finish(a, cov, c, lag, se, details, floor):
    q = float(a @ cov @ a)
    cc = 1.0 if c is None else c
    s2 = q / (cc * cc)
    floored = False
    if floor and s2 < 0:
        warnings.warn("negative long-run variance estimate floored at 0", RuntimeWarning, stacklevel=3)
        s2, floored = 0.0, True
    return AsymVariance(s2, a, cov, c, lag, floored, se, details)


def _mixing_lag(series, max_lag):
    if isinstance(series, EllipticalModel):
        raise TypeError("mixing variances need a time-ordered loss sample")
    n = (series.n_obs if isinstance(series, LossSample) else np.asarray(series).shape[0])
    return default_max_lag(n) if max_lag is None else int(max_lag)


# --- DQ^VaR -----------------------------------------------------------------


def _dq_var(joint, alpha, margins, sumplug, method, n_mc, seed, max_lag, kernel, series_only):
    a = _alpha(alpha)
    st = _Setup(joint, margins, sumplug, series_only)
    t = np.array([m.base.var(a) for m in st.margins])
    tn = float(t.sum())
    f = np.array([m.positive_pdf(ti, "marginal density") for m, ti in zip(st.margins, t)])
    g = st.sumplug.positive_pdf(tn, "density of the sum")
    avec = np.concatenate((g / (a * f), [-1.0 / a]))
    proj = list(range(st.n)) + ["sum"]
    feats = [PLFeature.indicator_le(ti) for ti in t] + [PLFeature.indicator_le(tn)]
    cov, se, lag = st.cov(proj, feats, method=method, n_mc=n_mc, seed=seed, max_lag=max_lag, kernel=kernel)
    det = {"thresholds": t, "sum_threshold": tn, "marginal_density": f, "sum_density": g}
    return _finish(avec, cov, None, lag, se, det, series_only)


def sigma2_dq_var_iid(joint, alpha, margins=None, sumplug=None, *, cov_method="quad", n_mc=1_000_000, seed=0):
    """Asymptotic variance of empirical DQ^VaR for i.i.d. data.

    ``a = (g(t) / (alpha f_i(t_i)), ..., -1/alpha)`` with ``Sigma`` the
    covariance of ``(1{X_i <= t_i}, 1{S <= t})``, ``t_i = VaR_alpha(X_i)``
    and ``t = sum t_i``.

    Examples
    --------
    >>> from dqest.elliptical import EllipticalModel
    >>> m = EllipticalModel.equicorrelated("normal", 5, 0.3)
    >>> round(sigma2_dq_var_iid(m, 0.1).sigma2, 2)
    1.88
    """
    return _dq_var(joint, alpha, margins, sumplug, cov_method, n_mc, seed, None, "bartlett", False)


def sigma2_dq_var_mixing(series, alpha, margins=None, sumplug=None, max_lag=None, kernel="bartlett"):
    """DQ^VaR variance for alpha-mixing data via a long-run covariance."""
    lag = _mixing_lag(series, max_lag)
    return _dq_var(series, alpha, margins, sumplug, None, 0, 0, lag, kernel, True)


# --- DQ^ES ------------------------------------------------------------------


def _dq_es(joint, alpha, margins, sumplug, method, n_mc, seed, max_lag, kernel, series_only):
    a = _alpha(alpha)
    st = _Setup(joint, margins, sumplug, series_only)
    t = np.array([m.base.var(a) for m in st.margins])
    es = np.array([m.base.es(a) for m in st.margins])
    target = float(es.sum())
    a_star = solve_alpha_star(st.sumplug, target, a)
    s = float(st.sumplug.base.var(a_star))
    dq = a_star / a
    c = (s - target) / dq
    if c == 0:
        raise AssumptionViolated("VaR and ES of the sum coincide at alpha*, c = 0")
    avec = np.concatenate((np.full(st.n, 1.0 / a), [-1.0 / a_star]))
    proj = list(range(st.n)) + ["sum"]
    feats = [PLFeature.pos_part(ti) for ti in t] + [PLFeature.pos_part(s)]
    cov, se, lag = st.cov(proj, feats, method=method, n_mc=n_mc, seed=seed, max_lag=max_lag, kernel=kernel)
    det = {"thresholds": t, "es": es, "alpha_star": a_star, "sum_threshold": s, "dq": dq}
    return _finish(avec, cov, c, lag, se, det, series_only)


def sigma2_dq_es_iid(joint, alpha, margins=None, sumplug=None, *, cov_method="quad", n_mc=1_000_000, seed=0):
    """Asymptotic variance of empirical DQ^ES for i.i.d. data.

    ``a = (1/alpha, ..., -1/alpha*)``, ``Sigma`` is the covariance of
    ``((X_i - VaR_alpha(X_i))_+, (S - VaR_alpha*(S))_+)`` and
    ``c = (VaR_alpha*(S) - ES_alpha*(S)) / DQ``.
    """
    return _dq_es(joint, alpha, margins, sumplug, cov_method, n_mc, seed, None, "bartlett", False)


def sigma2_dq_es_mixing(series, alpha, margins=None, sumplug=None, max_lag=None, kernel="bartlett"):
    """DQ^ES variance for alpha-mixing data via a long-run covariance."""
    lag = _mixing_lag(series, max_lag)
    return _dq_es(series, alpha, margins, sumplug, None, 0, 0, lag, kernel, True)


# --- DQ^ex ------------------------------------------------------------------


def _ex_pieces(margins, sumplug, alpha):
    """Plug-in quantities of the DQ^ex Delta method."""
    y = np.array([m.base.expectile(alpha) for m in margins])
    mu = np.array([m.base.mean for m in margins])
    mu_minus = np.array([float(m.base.lower_partial(yi)) for m, yi in zip(margins, y)])
    d = 2.0 * mu_minus + mu - y
    ft = np.array([float(TildeTransform(m.base).pdf(yi)) for m, yi in zip(margins, y)])
    if np.any(ft <= 0):
        raise NonPositiveDensity("tilde density is not positive at the expectile")
    t = float(y.sum())
    sb = sumplug.base
    theta1 = float(sb.upper_partial(t))
    theta2 = theta1 + float(sb.lower_partial(t))
    g_t = float(sumplug.cdf(t))
    return dict(y=y, mu=mu, mu_minus=mu_minus, D=d, tilde_pdf=ft, t=t, theta1=theta1, theta2=theta2, G_t=g_t)


def expectile_h_jacobian(G_t, tilde_pdf, mu_minus, D):
    """Jacobian of ``(theta1, theta2)`` with respect to the moment vector.

    The moment vector is ordered as
    ``(E(S-t)_+, E|S-t|, E(y_1-X_1)_+, E X_1, ..., E(y_n-X_n)_+, E X_n)``.

    Returns
    -------
    ndarray, shape (2, 2n + 2)
    """
    ft = np.asarray(tilde_pdf, dtype=float)
    mm = np.asarray(mu_minus, dtype=float)
    d = np.asarray(D, dtype=float)
    n = ft.size
    ga = (d - 2.0 * mm) / d**2 / ft  # dy_i / dA_i up to sign and the G-factor
    gm = -mm / d**2 / ft
    jac = np.zeros((2, 2 * n + 2))
    jac[0, 0] = 1.0
    jac[1, 1] = 1.0
    for row, fac in ((0, 1.0 - G_t), (1, 1.0 - 2.0 * G_t)):
        jac[row, 2::2] = fac * ga
        jac[row, 3::2] = fac * gm
    return jac


def expectile_h(margins, sumplug, alpha, delta):
    """``(theta1, theta2)`` after perturbing the moments by ``delta``.

    Each margin's tilde CDF is rebuilt as
    ``(A_i(y) + dA_i) / (2 (A_i(y) + dA_i) + mu_i + dmu_i - y)``, its
    ``1 - alpha`` quantile solved for, and the sum moments are evaluated at
    the perturbed threshold plus their own shifts.  The derivative at
    ``delta = 0`` is :func:`expectile_h_jacobian`.
    """
    from scipy import optimize

    a = _alpha(alpha)
    delta = np.asarray(delta, dtype=float)
    ys = []
    for i, m in enumerate(margins):
        da, dm = delta[2 + 2 * i], delta[3 + 2 * i]
        base = m.base

        def fun(y, base=base, da=da, dm=dm):
            lp = float(base.lower_partial(y)) + da
            return lp / (2.0 * lp + base.mean + dm - y) - (1.0 - a)

        y0 = base.expectile(a)
        span = 1.0 + abs(y0)
        ys.append(optimize.brentq(fun, y0 - span, y0 + span, xtol=1e-15, rtol=4 * np.finfo(float).eps))
    t = float(np.sum(ys))
    sb = sumplug.base
    th1 = float(sb.upper_partial(t)) + delta[0]
    th2 = float(sb.upper_partial(t)) + float(sb.lower_partial(t)) + delta[1]
    return np.array([th1, th2])


def _dq_ex(joint, alpha, margins, sumplug, method, n_mc, seed, max_lag, kernel, series_only):
    a = _alpha(alpha, 0.5)
    st = _Setup(joint, margins, sumplug, series_only)
    p = _ex_pieces(st.margins, st.sumplug, a)
    if p["theta2"] <= 0:
        raise DegenerateDenominator("E|S - t| vanishes")
    jac = expectile_h_jacobian(p["G_t"], p["tilde_pdf"], p["mu_minus"], p["D"])
    th1, th2 = p["theta1"], p["theta2"]
    grad_g = np.array([1.0 / (a * th2), -th1 / (a * th2**2)])
    avec = jac.T @ grad_g
    proj, feats = ["sum", "sum"], [PLFeature.pos_part(p["t"]), PLFeature.abs_dev(p["t"])]
    for i in range(st.n):
        proj += [i, i]
        feats += [PLFeature.neg_part(p["y"][i]), PLFeature.identity()]
    cov, se, lag = st.cov(proj, feats, method=method, n_mc=n_mc, seed=seed, max_lag=max_lag, kernel=kernel)
    det = dict(p, jacobian=jac, grad_g=grad_g)
    return _finish(avec, cov, None, lag, se, det, series_only)


def sigma2_dq_ex_iid(joint, alpha, margins=None, sumplug=None, *, cov_method="quad", n_mc=1_000_000, seed=0):
    """Asymptotic variance of empirical DQ^ex for i.i.d. data.

    ``Sigma`` is the covariance of
    ``((S-t)_+, |S-t|, (y_1-X_1)_+, X_1, ..., (y_n-X_n)_+, X_n)``; the
    gradient chains the Jacobian of the threshold moments
    (:func:`expectile_h_jacobian`) with that of ``theta1 / (alpha theta2)``.
    """
    return _dq_ex(joint, alpha, margins, sumplug, cov_method, n_mc, seed, None, "bartlett", False)


def sigma2_dq_ex_mixing(series, alpha, margins=None, sumplug=None, max_lag=None, kernel="bartlett"):
    """DQ^ex variance for alpha-mixing data via a long-run covariance."""
    lag = _mixing_lag(series, max_lag)
    return _dq_ex(series, alpha, margins, sumplug, None, 0, 0, lag, kernel, True)


# --- DR ---------------------------------------------------------------------


def sigma2_dr(joint, alpha, measure="var", margins=None, sumplug=None, *, cov_method="quad", n_mc=1_000_000,
              seed=0, max_lag=None, kernel="bartlett"):
    """Asymptotic variance of the empirical DR for VaR or ES.

    For VaR, ``R = (s / (f_i(t_i) T^2), ..., -1 / (g(s) T))`` with
    ``T = sum t_i``, ``s = VaR_alpha(S)`` and ``Sigma`` the indicator
    covariance.  For ES, ``R = (1/alpha) (-ES(S) / E^2, ..., 1 / E)`` with
    ``E = sum ES_alpha(X_i)`` and ``Sigma`` the positive-part covariance.
    Passing ``max_lag`` with a time-ordered sample gives the mixing variant.
    """
    a = _alpha(alpha)
    measure = str(measure).lower()
    if measure not in ("var", "es"):
        raise ValueError("measure must be 'var' or 'es'")
    mixing = max_lag is not None
    st = _Setup(joint, margins, sumplug, series_only=mixing)
    t = np.array([m.base.var(a) for m in st.margins])
    s = float(st.sumplug.base.var(a))
    proj = list(range(st.n)) + ["sum"]
    scale = float(np.sum(np.abs(t)) + abs(s))
    if measure == "var":
        tn = float(t.sum())
        if abs(tn) <= 64 * np.finfo(float).eps * scale:
            raise ZeroDenominator("sum of marginal VaRs is zero")
        f = np.array([m.positive_pdf(ti, "marginal density") for m, ti in zip(st.margins, t)])
        g = st.sumplug.positive_pdf(s, "density of the sum")
        avec = np.concatenate((s / (f * tn**2), [-1.0 / (g * tn)]))
        feats = [PLFeature.indicator_le(ti) for ti in t] + [PLFeature.indicator_le(s)]
        det = {"thresholds": t, "sum_var": s, "marginal_density": f, "sum_density": g}
    else:
        es = np.array([m.base.es(a) for m in st.margins])
        den = float(es.sum())
        es_s = float(st.sumplug.base.es(a))
        if abs(den) <= 64 * np.finfo(float).eps * float(np.sum(np.abs(es)) + abs(es_s)):
            raise ZeroDenominator("sum of marginal ES values is zero")
        avec = np.concatenate((np.full(st.n, -es_s / den**2), [1.0 / den])) / a
        feats = [PLFeature.pos_part(ti) for ti in t] + [PLFeature.pos_part(s)]
        det = {"thresholds": t, "sum_var": s, "es": es, "sum_es": es_s}
    lag_arg = _mixing_lag(st.data, max_lag) if mixing else None
    cov, se, lag = st.cov(proj, feats, method=cov_method, n_mc=n_mc, seed=seed, max_lag=lag_arg, kernel=kernel)
    return _finish(avec, cov, None, lag, se, det, mixing)

