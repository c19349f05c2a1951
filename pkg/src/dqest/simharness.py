"""Monte Carlo experiments on elliptical models.

Three experiment types are provided: sampling distributions of the
estimators against their normal limits, asymptotic-variance curves along
one model parameter, and the location-shift sweep that separates DR from
DQ.  Replication ``k`` of an experiment with master seed ``s`` always uses
``SeedSequence([s, k])``, so results do not depend on the worker count.
"""
from __future__ import annotations

import concurrent.futures as cf
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import asymvar
from .dqcore import IndexKind, dq_es, dq_ex, dq_var, estimate
from .elliptical import EllipticalModel, equicorr_sigma, sample, true_dq_es, true_dq_ex, true_dq_var, true_dr
from .errors import DqError, ZeroDenominator

__all__ = [
    "ExperimentSpec",
    "ExperimentResult",
    "VarianceCurve",
    "build_model",
    "true_value",
    "theory_sigma2",
    "run_histogram_experiment",
    "run_variance_curve",
    "run_dr_shift_sweep",
]

_VARY = ("alpha", "r", "n", "nu")


@dataclass(frozen=True)
class ExperimentSpec:
    """Configuration of a simulation experiment.

    ``vary`` and ``grid`` are only used by :func:`run_variance_curve`.
    """

    estimator: IndexKind = IndexKind.DQ_VAR
    family: str = "normal"
    n: int = 5
    r: float = 0.3
    nu: float | None = 3.0
    alpha: float = 0.1
    n_samples: int = 5000
    n_reps: int = 2000
    seed: int = 0
    shift: tuple | None = None
    vary: str | None = None
    grid: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "estimator", IndexKind(self.estimator))
        if self.vary is not None and self.vary not in _VARY:
            raise ValueError(f"vary must be one of {_VARY}")
        if self.n_samples < 2 or self.n_reps < 1:
            raise ValueError("need n_samples >= 2 and n_reps >= 1")


def build_model(spec: ExperimentSpec) -> EllipticalModel:
    mu = np.zeros(spec.n) if spec.shift is None else np.asarray(spec.shift, dtype=float)
    nu = spec.nu if spec.family == "t" else None
    return EllipticalModel(spec.family, mu, equicorr_sigma(spec.n, spec.r), nu)


def true_value(model: EllipticalModel, kind, alpha) -> float:
    """Population value of an index under ``model``."""
    kind = IndexKind(kind)
    if kind is IndexKind.DQ_VAR:
        return true_dq_var(model, alpha)
    if kind is IndexKind.DQ_ES:
        return true_dq_es(model, alpha)
    if kind is IndexKind.DQ_EX:
        return true_dq_ex(model, alpha)
    if not np.any(model.mu):
        return true_dr(model)
    phi = "var" if kind is IndexKind.DR_VAR else "es"
    den = sum(getattr(model.marginal(i), phi)(alpha) for i in range(model.n))
    if den == 0:
        raise ZeroDenominator("sum of marginal risk values is zero")
    return getattr(model.sum_law(), phi)(alpha) / den


def theory_sigma2(model: EllipticalModel, kind, alpha, **kw) -> asymvar.AsymVariance:
    """Model-based asymptotic variance of the empirical index."""
    kind = IndexKind(kind)
    if kind is IndexKind.DQ_VAR:
        return asymvar.sigma2_dq_var_iid(model, alpha, **kw)
    if kind is IndexKind.DQ_ES:
        return asymvar.sigma2_dq_es_iid(model, alpha, **kw)
    if kind is IndexKind.DQ_EX:
        return asymvar.sigma2_dq_ex_iid(model, alpha, **kw)
    return asymvar.sigma2_dr(model, alpha, "var" if kind is IndexKind.DR_VAR else "es", **kw)


@dataclass
class ExperimentResult:
    """Replicated estimates with their theoretical limit.

    Attributes
    ----------
    estimates : ndarray
        One entry per replication, NaN where the estimator failed.
    failures : list of (int, str)
        Replication index and error message.
    true_value, sigma2 : float
        Population value and asymptotic variance.
    """

    spec: ExperimentSpec
    estimates: np.ndarray
    failures: list
    true_value: float
    sigma2: float
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> np.ndarray:
        return self.estimates[np.isfinite(self.estimates)]

    @property
    def mean(self) -> float:
        return float(np.mean(self.ok))

    @property
    def scaled_var(self):
        """``N * var(estimates)``, None with fewer than two replications."""
        ok = self.ok
        if ok.size < 2:
            return None
        return float(self.spec.n_samples * np.var(ok, ddof=1))

    @property
    def standardized(self) -> np.ndarray:
        return np.sqrt(self.spec.n_samples) * (self.ok - self.true_value) / np.sqrt(self.sigma2)

    def histogram(self):
        """Freedman-Diaconis histogram of the estimates, ``(counts, edges)``."""
        ok = self.ok
        edges = np.histogram_bin_edges(ok, bins="fd") if np.ptp(ok) > 0 else np.array([ok[0] - 0.5, ok[0] + 0.5])
        counts, edges = np.histogram(ok, bins=edges)
        return counts, edges

    def normal_overlay(self, x):
        """Density of ``N(true_value, sigma2 / N)`` at ``x``."""
        sd = math.sqrt(self.sigma2 / self.spec.n_samples)
        return stats.norm.pdf(x, loc=self.true_value, scale=sd)

    def ks_test(self):
        """Kolmogorov-Smirnov test of the standardized estimates against N(0, 1)."""
        res = stats.kstest(self.standardized, "norm")
        return float(res.statistic), float(res.pvalue)

    def coverage(self, level: float = 0.95) -> float:
        """Fraction of replications whose normal-limit interval covers the truth."""
        z = stats.norm.isf((1.0 - level) / 2.0)
        return float(np.mean(np.abs(self.standardized) <= z))

    def summary(self) -> dict:
        ks, p = self.ks_test() if self.ok.size > 1 else (float("nan"), float("nan"))
        return {
            "estimator": self.spec.estimator.value,
            "family": self.spec.family,
            "n_reps": self.spec.n_reps,
            "n_samples": self.spec.n_samples,
            "n_failed": len(self.failures),
            "true_value": self.true_value,
            "sigma2": self.sigma2,
            "mean": self.mean,
            "scaled_var": self.scaled_var,
            "ks_statistic": ks,
            "ks_pvalue": p,
            "coverage_95": self.coverage(0.95),
        }


def _rep_rng(seed, k):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(k)]))


def _run_block(spec: ExperimentSpec, ks):
    model = build_model(spec)
    out = []
    for k in ks:
        ls = sample(model, spec.n_samples, _rep_rng(spec.seed, k))
        try:
            out.append((k, estimate(ls, spec.alpha, spec.estimator).value, None))
        except DqError as exc:
            out.append((k, np.nan, f"{type(exc).__name__}: {exc}"))
    return out


def run_histogram_experiment(spec: ExperimentSpec, workers: int = 1, sigma2=None) -> ExperimentResult:
    """Replicate the estimator ``n_reps`` times on fresh samples.

    Parameters
    ----------
    spec : ExperimentSpec
    workers : int
        Process count; the output is identical for any value.
    sigma2 : float, optional
        Skip the theoretical variance computation and use this value.
    """
    model = build_model(spec)
    reps = list(range(spec.n_reps))
    if workers <= 1:
        rows = _run_block(spec, reps)
    else:
        chunks = [reps[i::workers] for i in range(workers)]
        with cf.ProcessPoolExecutor(max_workers=workers) as ex:
            rows = [r for part in ex.map(_run_block, [spec] * workers, chunks) for r in part]
        rows.sort(key=lambda r: r[0])
    est = np.array([r[1] for r in rows], dtype=float)
    failures = [(r[0], r[2]) for r in rows if r[2] is not None]
    truth = true_value(model, spec.estimator, spec.alpha)
    s2 = theory_sigma2(model, spec.estimator, spec.alpha).sigma2 if sigma2 is None else float(sigma2)
    return ExperimentResult(spec, est, failures, truth, s2)


@dataclass
class VarianceCurve:
    param: str
    values: np.ndarray
    sigma2: np.ndarray
    estimator: IndexKind

    def rows(self):
        return [{self.param: float(v), "sigma2": float(s)} for v, s in zip(self.values, self.sigma2)]


def run_variance_curve(spec: ExperimentSpec) -> VarianceCurve:
    """Asymptotic variance of ``spec.estimator`` along ``spec.vary``."""
    if spec.vary is None or len(spec.grid) == 0:
        raise ValueError("variance curve needs 'vary' and a non-empty 'grid'")
    vals, s2 = [], []
    for v in spec.grid:
        v = int(v) if spec.vary == "n" else float(v)
        sp = replace(spec, **{spec.vary: v}, shift=None if spec.vary == "n" else spec.shift)
        model = build_model(sp)
        s2.append(theory_sigma2(model, sp.estimator, sp.alpha).sigma2)
        vals.append(v)
    return VarianceCurve(spec.vary, np.array(vals), np.array(s2), spec.estimator)


def run_dr_shift_sweep(model: EllipticalModel, alpha, eps_grid, n_samples=None, seed=0):
    """DR variances and DQ values under ``X - phi(X) + eps``.

    For each ``eps`` the margins are recentred so that their VaR (for
    DR^VaR) or ES (for DR^ES) equals ``eps``.  DQ values are reported for
    the same shifted models; with ``n_samples`` a single fixed sample is
    also shifted and re-estimated, which exercises the estimators'
    location invariance.

    Returns
    -------
    list of dict
        One row per ``eps``; ``divergent`` marks points where the DR
        denominator vanishes and the variance is reported as ``inf``.
    """
    base = model.shifted(np.zeros(model.n))
    var_i = np.array([base.marginal(i).var(alpha) for i in range(model.n)])
    es_i = np.array([base.marginal(i).es(alpha) for i in range(model.n)])
    fixed = sample(base, n_samples, seed).data if n_samples else None
    rows = []
    for eps in eps_grid:
        eps = float(eps)
        row = {"eps": eps, "divergent": False}
        for tag, phi in (("var", var_i), ("es", es_i)):
            m = base.shifted(model.mu - phi + eps)
            try:
                row[f"sigma2_dr_{tag}"] = asymvar.sigma2_dr(m, alpha, tag).sigma2
            except ZeroDenominator:
                row[f"sigma2_dr_{tag}"] = math.inf
                row["divergent"] = True
        m = base.shifted(model.mu - var_i + eps)
        row["dq_var"] = true_dq_var(m, alpha)
        row["dq_es"] = true_dq_es(m, alpha)
        row["dq_ex"] = true_dq_ex(m, alpha)
        if fixed is not None:
            x = fixed + (model.mu - var_i + eps)
            row["dq_var_hat"] = dq_var(x, alpha).value
            row["dq_es_hat"] = dq_es(x, alpha).value
            row["dq_ex_hat"] = dq_ex(x, alpha).value
        rows.append(row)
    return rows
