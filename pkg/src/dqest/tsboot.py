"""AR(1)-GARCH(1,1) filtering and a joint residual bootstrap for rolling DQ.

Each asset's loss series follows

    X_s = c + phi X_{s-1} + sigma_s Z_s,
    sigma_s^2 = omega + alpha_g eps_{s-1}^2 + beta_g sigma_{s-1}^2,

with unit-variance Student t innovations ``Z``.  The cross-sectional
dependence of the innovations is kept by resampling whole residual rows
with one shared index vector.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, signal, special

from .dqcore import IndexKind, estimate
from .errors import DqError, FitFailed

__all__ = [
    "GarchParams",
    "RollingConfig",
    "DqSeries",
    "garch_variance",
    "fit_ar_garch",
    "standardized_residuals",
    "simulate_ar_garch",
    "simulate_garch_panel",
    "joint_residual_bootstrap",
    "rolling_dq_with_ci",
    "rolling_dq_multi",
    "read_panel_csv",
]


@dataclass(frozen=True)
class GarchParams:
    c: float
    phi: float
    omega: float
    alpha_g: float
    beta_g: float
    nu: float
    loglik: float | None = None

    @property
    def persistence(self) -> float:
        return self.alpha_g + self.beta_g

    @property
    def stationary(self) -> bool:
        return self.persistence < 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def garch_variance(eps, omega, alpha_g, beta_g, sigma2_0) -> np.ndarray:
    """Conditional variances ``sigma_1^2, ..., sigma_T^2`` for residuals ``eps``.

    ``sigma2_0`` is the variance attached to ``eps[0]``.
    """
    eps = np.asarray(eps, dtype=float)
    out = np.empty(eps.size)
    out[0] = sigma2_0
    if eps.size > 1:
        drive = omega + alpha_g * eps[:-1] ** 2
        out[1:], _ = signal.lfilter([1.0], [1.0, -beta_g], drive, zi=[beta_g * sigma2_0])
    return out


def _initial_sigma2(p: GarchParams, eps) -> float:
    # unconditional variance when stationary, sample variance otherwise
    if p.stationary:
        return p.omega / (1.0 - p.persistence)
    return float(np.var(eps))


def _residuals(x, c, phi):
    return x[1:] - c - phi * x[:-1]


def standardized_residuals(series, params: GarchParams) -> np.ndarray:
    """Filtered ``Z_s = eps_s / sigma_s`` for ``s = 1..T-1``."""
    x = np.asarray(series, dtype=float)
    eps = _residuals(x, params.c, params.phi)
    s2 = garch_variance(eps, params.omega, params.alpha_g, params.beta_g, _initial_sigma2(params, eps))
    return eps / np.sqrt(s2)


def _unpack(theta):
    c, u, lw, a, b, lv = theta
    ea, eb = math.exp(min(a, 50.0)), math.exp(min(b, 50.0))
    den = 1.0 + ea + eb
    return c, math.tanh(u), math.exp(min(lw, 50.0)), ea / den, eb / den, 2.0 + math.exp(min(lv, 6.0))


def _pack(c, phi, omega, alpha_g, beta_g, nu):
    rest = 1.0 - alpha_g - beta_g
    return np.array([c, math.atanh(phi), math.log(omega), math.log(alpha_g / rest), math.log(beta_g / rest),
                     math.log(nu - 2.0)])


def _negloglik(theta, x):
    c, phi, omega, ag, bg, nu = _unpack(theta)
    eps = _residuals(x, c, phi)
    # omega / (1 - ag - bg) without the cancellation when ag + bg rounds to 1
    den = 1.0 + math.exp(min(theta[3], 50.0)) + math.exp(min(theta[4], 50.0))
    s2 = garch_variance(eps, omega, ag, bg, omega * den)
    if not np.all(s2 > 0) or not np.all(np.isfinite(s2)):
        return 1e300
    z2 = eps * eps / s2
    # nu - 2 from the parameter itself, 2 + tiny rounds to 2
    nm2 = math.exp(min(theta[5], 6.0))
    k = special.gammaln(0.5 * (nu + 1)) - special.gammaln(0.5 * nu) - 0.5 * math.log(math.pi * nm2)
    with np.errstate(over="ignore"):
        ll = eps.size * k - 0.5 * np.sum(np.log(s2)) - 0.5 * (nu + 1.0) * np.sum(np.log1p(z2 / nm2))
    return -ll if np.isfinite(ll) else 1e300


_STARTS = ((0.05, 0.90, 8.0), (0.10, 0.80, 5.0), (0.03, 0.95, 12.0), (0.15, 0.60, 6.0), (0.05, 0.30, 20.0),
           (0.02, 0.05, 30.0))


def fit_ar_garch(series, init: GarchParams | None = None, n_starts: int = 6) -> GarchParams:
    """Student-t quasi-maximum-likelihood fit by multi-start Nelder-Mead.

    A smooth reparametrisation keeps ``|phi| < 1``, ``omega > 0``,
    ``alpha_g, beta_g > 0`` with ``alpha_g + beta_g < 1`` and ``nu > 2``.
    Starts whose optimum is within ``1e-3`` of the best log-likelihood are
    treated as ties and the least persistent one is kept, which picks a
    white-noise fit over an unidentified GARCH ridge.  ``init`` adds one
    more start, e.g. the fit from the previous rolling window.
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 50:
        raise ValueError("AR(1)-GARCH(1,1) fit needs at least 50 observations")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    if np.var(x) <= 0:
        raise FitFailed("constant series has zero variance")
    # OLS AR(1) for the mean equation starts
    xm, ym = x[:-1], x[1:]
    vx = np.var(xm)
    phi0 = float(np.clip(np.cov(xm, ym, bias=True)[0, 1] / vx if vx > 0 else 0.0, -0.9, 0.9))
    c0 = float(ym.mean() - phi0 * xm.mean())
    v = float(np.var(_residuals(x, c0, phi0)))
    if v <= 0:
        raise FitFailed("AR(1) fit leaves no residual variance")
    starts = [_pack(c0, phi0, v * (1 - a - b), a, b, nu) for a, b, nu in _STARTS[: max(int(n_starts), 1)]]
    if init is not None and init.stationary:
        w = init
        starts.append(_pack(w.c, np.clip(w.phi, -0.99, 0.99), w.omega, max(w.alpha_g, 1e-6), max(w.beta_g, 1e-6),
                            max(w.nu, 2.01)))
    opts = {"maxiter": 4000, "maxfev": 8000, "xatol": 1e-7, "fatol": 1e-9}
    sols = []
    for th in starts:
        res = optimize.minimize(_negloglik, th, args=(x,), method="Nelder-Mead", options=opts)
        # one restart polishes simplex collapse
        res = optimize.minimize(_negloglik, res.x, args=(x,), method="Nelder-Mead", options=opts)
        if np.isfinite(res.fun) and res.fun < 1e299:
            sols.append(res)
    if not sols:
        raise FitFailed("likelihood is not finite at any start")
    best = min(r.fun for r in sols)
    ties = [r for r in sols if r.fun <= best + 1e-3]
    pick = min(ties, key=lambda r: sum(_unpack(r.x)[3:5]))
    c, phi, omega, ag, bg, nu = _unpack(pick.x)
    return GarchParams(c, phi, omega, ag, bg, nu, loglik=-float(pick.fun))


def _std_t(rng, nu, size):
    return rng.standard_t(nu, size=size) * math.sqrt((nu - 2.0) / nu)


def simulate_ar_garch(params: GarchParams, n: int, seed=None, burn: int = 500) -> np.ndarray:
    """Simulate one AR(1)-GARCH(1,1) path with standardized t innovations."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = _std_t(rng, params.nu, n + burn)[:, None]
    return _simulate(params_list=[params], z=z)[burn:, 0]


def simulate_garch_panel(params_list, n: int, corr: float = 0.3, seed=None, burn: int = 500) -> np.ndarray:
    """Panel of AR(1)-GARCH(1,1) series with equicorrelated t innovations.

    The innovation vector is multivariate t (common ``nu`` taken from the
    first asset) scaled to unit variance, with correlation ``corr``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d = len(params_list)
    cm = np.full((d, d), corr)
    np.fill_diagonal(cm, 1.0)
    nu = params_list[0].nu
    g = rng.standard_normal((n + burn, d)) @ np.linalg.cholesky(cm).T
    w = rng.chisquare(nu, size=n + burn)
    z = g * np.sqrt((nu - 2.0) / w)[:, None]
    return _simulate(params_list, z)[burn:]


def _simulate(params_list, z, x0=None, s2_1=None):
    t, d = z.shape
    x = np.empty((t + 1, d))
    x[0] = 0.0 if x0 is None else x0
    for j, p in enumerate(params_list):
        s2 = p.omega / (1.0 - p.persistence) if s2_1 is None else s2_1[j]
        for s in range(t):
            e = math.sqrt(s2) * z[s, j]
            x[s + 1, j] = p.c + p.phi * x[s, j] + e
            s2 = p.omega + p.alpha_g * e * e + p.beta_g * s2
    return x[1:]


def joint_residual_bootstrap(window, params_list, n_boot: int, seed=0, window_id: int = 0):
    """Bootstrap loss panels from a fitted window.

    Replication ``b`` draws one index vector of length ``m`` (with
    replacement) from the ``m - 1`` residual rows, seeded by
    ``SeedSequence([seed, window_id, b])``.  Every asset is rebuilt from
    the window's first observation with its own fitted recursion, so the
    panel keeps the cross-sectional dependence of the residuals.

    Returns
    -------
    ndarray, shape (n_boot, m, n)
    """
    x = np.asarray(window, dtype=float)
    m, d = x.shape
    z = np.column_stack([standardized_residuals(x[:, j], p) for j, p in enumerate(params_list)])
    idx = np.empty((n_boot, m), dtype=np.intp)
    for b in range(n_boot):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(window_id), b]))
        idx[b] = rng.integers(0, m - 1, size=m)
    out = np.empty((n_boot, m, d))
    for j, p in enumerate(params_list):
        eps = _residuals(x[:, j], p.c, p.phi)
        s2 = np.full(n_boot, _initial_sigma2(p, eps))
        prev = np.full(n_boot, x[0, j])
        zz = z[idx, j]
        for s in range(m):
            if not np.all(s2 > 0):
                raise FitFailed(f"non-positive conditional variance in the rebuilt path of asset {j}")
            e = np.sqrt(s2) * zz[:, s]
            prev = p.c + p.phi * prev + e
            out[:, s, j] = prev
            s2 = p.omega + p.alpha_g * e * e + p.beta_g * s2
    return out


@dataclass(frozen=True)
class RollingConfig:
    window: int = 500
    step: int = 21
    boot_reps: int = 500
    ci_level: float = 0.95
    alpha: float = 0.1
    index_kind: IndexKind = IndexKind.DQ_VAR
    calendar_step: bool = False

    def __post_init__(self):
        object.__setattr__(self, "index_kind", IndexKind(self.index_kind))
        if self.window < 50 or self.step < 1 or self.boot_reps < 2:
            raise ValueError("need window >= 50, step >= 1 and boot_reps >= 2")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")


@dataclass
class DqSeries:
    """Rolling point estimates with bootstrap summaries.

    Windows whose GARCH fit failed carry NaN values and an entry in
    ``failures``.  ``params`` holds the per-window fitted parameters (or
    None for a gap).
    """

    index_kind: IndexKind
    alpha: float
    dates: list
    point_estimates: np.ndarray
    boot_means: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    boot_variance: np.ndarray
    params: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    COLUMNS = ("date", "estimate", "boot_mean", "ci_lo", "ci_hi", "boot_var")
    _FIELDS = ("point_estimates", "boot_means", "ci_lower", "ci_upper", "boot_variance")

    def rows(self):
        for i, d in enumerate(self.dates):
            yield [d] + [float(getattr(self, k)[i]) for k in self._FIELDS]

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in self.rows():
            w.writerow([row[0]] + ["" if math.isnan(v) else repr(v) for v in row[1:]])

    @property
    def coverage(self) -> float:
        """Fraction of windows whose point estimate lies inside its CI."""
        est = self.point_estimates
        ok = np.isfinite(est)
        inside = (self.ci_lower[ok] <= est[ok]) & (est[ok] <= self.ci_upper[ok])
        return float(np.mean(inside)) if ok.any() else float("nan")


def _window_positions(dates, m, cfg: RollingConfig):
    if not cfg.calendar_step:
        return list(range(m, len(dates), cfg.step))
    # first row of each calendar month, read from ISO-8601 "YYYY-MM-..." labels
    months = [str(d)[:7] for d in dates]
    if not all(len(s) == 7 and s[4] == "-" for s in months):
        raise ValueError("calendar stepping needs ISO-8601 date labels")
    return [t for t in range(m, len(dates)) if months[t] != months[t - 1]]


def rolling_dq_multi(panel, cfg: RollingConfig, seed=0, estimators=None, dates=None) -> dict:
    """Rolling estimates for several ``(index_kind, alpha)`` pairs at once.

    The fits and bootstrap panels are shared by all estimators.  Window
    positions are ``t = m, m + step, ...`` with window rows ``[t - m, t)``,
    labelled by ``dates[t]``.  With ``cfg.calendar_step`` the positions are
    instead the first rows of each new calendar month.
    """
    x = np.asarray(panel, dtype=float)
    if x.ndim != 2:
        raise ValueError("panel must be T x n")
    t_len, d = x.shape
    m = cfg.window
    if t_len < m + 1:
        raise ValueError("panel must be longer than the window")
    if not np.all(np.isfinite(x)):
        raise ValueError("panel contains non-finite values")
    dates = list(range(t_len)) if dates is None else list(dates)
    if estimators is None:
        estimators = [(cfg.index_kind, cfg.alpha)]
    estimators = [(IndexKind(k), float(a)) for k, a in estimators]
    positions = _window_positions(dates, m, cfg)
    lo_q, hi_q = (1.0 - cfg.ci_level) / 2.0, 1.0 - (1.0 - cfg.ci_level) / 2.0
    acc = {e: {k: np.full(len(positions), np.nan) for k in DqSeries._FIELDS} for e in estimators}
    params, failures = [], []
    warm = [None] * d
    for w, t in enumerate(positions):
        win = x[t - m:t]
        try:
            fits = [fit_ar_garch(win[:, j], init=warm[j]) for j in range(d)]
        except FitFailed as exc:
            params.append(None)
            failures.append((dates[t], str(exc)))
            continue
        warm = fits
        params.append([p.to_dict() for p in fits])
        boots = joint_residual_bootstrap(win, fits, cfg.boot_reps, seed, w)
        for e in estimators:
            kind, a = e
            try:
                point = estimate(win, a, kind).value
                vals = np.array([estimate(bp, a, kind).value for bp in boots])
            except DqError as exc:
                failures.append((dates[t], f"{kind.value}: {exc}"))
                continue
            acc[e]["point_estimates"][w] = point
            acc[e]["boot_means"][w] = vals.mean()
            acc[e]["ci_lower"][w] = np.quantile(vals, lo_q)
            acc[e]["ci_upper"][w] = np.quantile(vals, hi_q)
            acc[e]["boot_variance"][w] = vals.var(ddof=1)
    out_dates = [dates[t] for t in positions]
    return {
        e: DqSeries(e[0], e[1], out_dates, *(acc[e][k] for k in DqSeries._FIELDS), params=params,
                    failures=list(failures))
        for e in estimators
    }


def rolling_dq_with_ci(panel, cfg: RollingConfig, seed=0, dates=None) -> DqSeries:
    """Rolling DQ with percentile bootstrap intervals for ``cfg.index_kind``."""
    res = rolling_dq_multi(panel, cfg, seed, [(cfg.index_kind, cfg.alpha)], dates)
    return next(iter(res.values()))


def read_panel_csv(path, from_prices: bool = False):
    """Read a ``date,TICKER1,...`` panel.

    Rows with a missing or non-numeric cell are dropped.  With
    ``from_prices`` the values are prices and losses ``-log(P_t / P_{t-1})``
    are returned, labelled by the later date.

    Returns
    -------
    dates : list of str
    data : ndarray, shape (T, n)
    tickers : list of str
    n_dropped : int
    """
    import pandas as pd

    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if df.shape[1] < 2 or df.columns[0].strip().lower() != "date":
        raise ValueError("panel CSV needs a 'date' column followed by at least one ticker column")
    tickers = [c.strip() for c in df.columns[1:]]
    vals = df.iloc[:, 1:].apply(lambda s: pd.to_numeric(s.str.strip(), errors="coerce"))
    keep = vals.notna().all(axis=1).to_numpy()
    n_dropped = int((~keep).sum())
    data = vals.to_numpy(dtype=float)[keep]
    dates = [str(d).strip() for d in df.iloc[:, 0].to_numpy()[keep]]
    if not np.all(np.isfinite(data)):
        raise ValueError("panel contains non-finite values")
    if from_prices:
        if np.any(data <= 0):
            raise ValueError("prices must be positive")
        data = -np.diff(np.log(data), axis=0)
        dates = dates[1:]
    if data.shape[0] < 2:
        raise ValueError("panel has fewer than two usable rows")
    return dates, data, tickers, n_dropped
