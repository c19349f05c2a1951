"""Acceptance suite: one pass/fail line per criterion, printed in the terminal summary.

Run alone with ``python tests/test_acceptance.py`` or ``pytest tests/test_acceptance.py``.
"""
import json
import math
import sys
import time

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.signal import lfilter

from dqest import asymvar, cli, simharness
from dqest.asymvar import DensityPlugin, expectile_h, expectile_h_jacobian, solve_alpha_star
from dqest.dqcore import dq_es, dq_ex, dq_var, dr, estimate
from dqest.elliptical import EllipticalModel, StandardNormal, UnivariateLaw, equicorr_sigma, sample
from dqest.empdist import TildeTransform, UnivariateSample, empirical_es, empirical_var
from dqest.errors import ZeroDenominator
from dqest.simharness import ExperimentSpec, run_dr_shift_sweep, run_histogram_experiment, run_variance_curve
from dqest.tsboot import GarchParams, RollingConfig, fit_ar_garch, rolling_dq_multi, simulate_ar_garch, \
    simulate_garch_panel

FAMILIES = ("normal", "t")
DQ_KINDS = ("dq-var", "dq-es", "dq-ex")
ALL_KINDS = DQ_KINDS + ("dr-var", "dr-es")


def _model(family, n=5, r=0.3, nu=3.0):
    return EllipticalModel.equicorrelated(family, n, r, nu if family == "t" else None)


def _cli_json(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    assert code == 0, err
    return json.loads(out)


# --- 1 -------------------------------------------------------------------------

TRUTH = {
    "normal": {"dq-var": 0.27, "dq-es": 0.11, "dq-ex": 0.33, "dr-var": 0.66},
    "t": {"dq-var": 0.45, "dq-es": 0.36, "dq-ex": 0.45, "dr-var": 0.66},
}


def test_01_truth_values(acceptance, capsys):
    rec = acceptance("01", "elliptical truth values to 2 decimals, < 1 s each")
    for fam in FAMILIES:
        for kind, want in TRUTH[fam].items():
            t0 = time.perf_counter()
            doc = _cli_json(capsys, "truth", "--family", fam, "--nu", 3, "--n", 5, "--r", 0.3, "--alpha", 0.1,
                            "--index", kind)
            dt = time.perf_counter() - t0
            got = doc["values"][kind]
            rec.check(f"{fam} {kind}", round(got, 2) == want, f"{got:.5f} vs {want}")
            rec.check(f"{fam} {kind} runtime", dt < 1.0, f"{dt:.3f}s")
    rec.verify()


# --- 2 -------------------------------------------------------------------------

SIGMA2 = {
    "dq-var": (1.88, 2.52),
    "dq-es": (1.48, 5.28),
    "dq-ex": (0.78, 2.53),
    "dr-var": (0.43, 0.67),
    "dr-es": (0.23, 0.60),
}


def test_02_asymptotic_variances(acceptance, capsys):
    rec = acceptance("02", "asymptotic variances within 5% (quadrature and 10^6-draw Monte Carlo)")
    t0 = time.perf_counter()
    for kind, pair in SIGMA2.items():
        for fam, want in zip(FAMILIES, pair):
            doc = _cli_json(capsys, "variance", "--family", fam, "--nu", 3, "--n", 5, "--r", 0.3, "--alpha", 0.1,
                            "--index", kind)
            got = doc["sigma2"]
            rec.check(f"{fam} {kind} quad", abs(got / want - 1) < 0.05, f"{got:.4f} vs {want}")
            mc = simharness.theory_sigma2(_model(fam), kind, 0.1, cov_method="mc", n_mc=1_000_000, seed=0).sigma2
            rec.check(f"{fam} {kind} mc", abs(mc / want - 1) < 0.05, f"{mc:.4f} vs {want}")
    dt = time.perf_counter() - t0
    rec.check("runtime", dt < 120, f"{dt:.1f}s")
    rec.verify()


# --- 3 -------------------------------------------------------------------------


def test_03_asymptotic_normality(acceptance):
    rec = acceptance("03", "asymptotic normality, M=500 replications of N=5000")
    for fam in FAMILIES:
        for kind in ALL_KINDS:
            res = run_histogram_experiment(ExperimentSpec(estimator=kind, family=fam, n_reps=500, seed=0))
            tag = f"{fam} {kind}"
            rec.check(f"{tag} no failures", not res.failures, f"{len(res.failures)}")
            rec.check(f"{tag} (a) mean", abs(res.mean - res.true_value) < 0.02,
                      f"{res.mean:.4f} vs {res.true_value:.4f}")
            rec.check(f"{tag} (b) N var", abs(res.scaled_var / res.sigma2 - 1) < 0.2,
                      f"{res.scaled_var:.4f} vs {res.sigma2:.4f}")
            _, p = res.ks_test()
            rec.check(f"{tag} (c) KS", p > 0.01, f"p={p:.4g}")
    rec.verify()


# --- 4 -------------------------------------------------------------------------


def _unimodal(v):
    k = int(np.argmax(v))
    return 0 < k < len(v) - 1 and np.all(np.diff(v[: k + 1]) > 0) and np.all(np.diff(v[k:]) < 0)


def test_04_variance_curve_shapes(acceptance):
    rec = acceptance("04", "variance-curve shapes over alpha, nu and r")
    for kind in DQ_KINDS:
        c = run_variance_curve(ExperimentSpec(estimator=kind, vary="alpha", grid=tuple(np.linspace(0.05, 0.3, 6))))
        rec.check(f"alpha sweep {kind}", np.all(np.diff(c.sigma2) < 0), np.array2string(c.sigma2, precision=3))
        c = run_variance_curve(ExperimentSpec(estimator=kind, family="t", vary="nu", grid=tuple(range(3, 11))))
        rec.check(f"nu sweep {kind}", np.all(np.diff(c.sigma2) < 0), np.array2string(c.sigma2, precision=3))
        for fam in FAMILIES:
            c = run_variance_curve(ExperimentSpec(estimator=kind, family=fam, vary="r",
                                                  grid=tuple(np.linspace(0.01, 0.99, 11))))
            rec.check(f"r sweep {fam} {kind}", _unimodal(c.sigma2), np.array2string(c.sigma2, precision=3))
    rec.verify()


# --- 5 -------------------------------------------------------------------------


def test_05_dr_instability(acceptance):
    rec = acceptance("05", "DR variance blows up near zero shift, DQ does not move")
    for fam in FAMILIES:
        rows = run_dr_shift_sweep(_model(fam), 0.1, [10.0, 1.0, 0.1, 0.01, -0.01, -1.0, -10.0], n_samples=5000,
                                  seed=0)
        by = {r["eps"]: r for r in rows}
        for m in ("var", "es"):
            key = f"sigma2_dr_{m}"
            ratio = by[0.01][key] / by[10.0][key]
            rec.check(f"{fam} DR^{m} ratio", ratio > 100, f"{ratio:.3g}")
        for key in ("dq_var", "dq_es", "dq_ex", "dq_var_hat", "dq_es_hat", "dq_ex_hat"):
            vals = [r[key] for r in rows]
            spread = max(vals) - min(vals)
            rec.check(f"{fam} {key} spread", spread < 1e-9, f"{spread:.2e}")
    rec.verify()


# --- 6 -------------------------------------------------------------------------

MIXING = {
    "dq-var": (asymvar.sigma2_dq_var_mixing, asymvar.sigma2_dq_var_iid),
    "dq-es": (asymvar.sigma2_dq_es_mixing, asymvar.sigma2_dq_es_iid),
    "dq-ex": (asymvar.sigma2_dq_ex_mixing, asymvar.sigma2_dq_ex_iid),
    "dr-var": (lambda x, a, **kw: _dr_mixing(x, a, "var", **kw), lambda x, a: asymvar.sigma2_dr(x, a, "var")),
    "dr-es": (lambda x, a, **kw: _dr_mixing(x, a, "es", **kw), lambda x, a: asymvar.sigma2_dr(x, a, "es")),
}


def _dr_mixing(x, alpha, measure, max_lag=None):
    # sigma2_dr uses the long-run covariance only when a lag is given
    lag = asymvar.default_max_lag(len(np.asarray(getattr(x, "data", x)))) if max_lag is None else max_lag
    return asymvar.sigma2_dr(x, alpha, measure, max_lag=lag)


def _ar1_panel(n_obs, rng, phi=0.5, n=5, r=0.3, burn=200):
    e = rng.standard_normal((n_obs + burn, n)) @ np.linalg.cholesky(equicorr_sigma(n, r)).T
    return lfilter([1.0], [1.0, -phi], e, axis=0)[burn:]


def test_06_mixing(acceptance):
    rec = acceptance("06", "mixing variances: lag-0 identity, AR(1) panel vs i.i.d. and Monte Carlo")
    x = sample(_model("t"), 3000, seed=1)
    for kind, (mix, iid) in MIXING.items():
        a, b = mix(x, 0.1, max_lag=0).sigma2, iid(x, 0.1).sigma2
        rec.check(f"{kind} lag 0 bit-identical", a == b, f"{a!r} vs {b!r}")
    big = _ar1_panel(200_000, np.random.default_rng(123))
    n_obs = 5000
    reps = [_ar1_panel(n_obs, np.random.default_rng([9, b])) for b in range(500)]
    for kind, (mix, iid) in MIXING.items():
        s_mix, s_iid = mix(big, 0.1).sigma2, iid(big, 0.1).sigma2
        vals = [estimate(p, 0.1, kind).value for p in reps]
        oracle = n_obs * np.var(vals, ddof=1)
        rec.check(f"{kind} mixing > iid", s_mix > s_iid, f"{s_mix:.4f} vs {s_iid:.4f}")
        rec.check(f"{kind} mixing vs oracle 15%", abs(s_mix / oracle - 1) < 0.15, f"{s_mix:.4f} vs {oracle:.4f}")
    rec.verify()


# --- 7 -------------------------------------------------------------------------


def test_07_invariance_suite(acceptance):
    rec = acceptance("07", "invariance, range and normalization over 1000 randomized cases")
    rng = np.random.default_rng(2024)
    fns = (dq_var, dq_es, dq_ex)
    worst = {"location": 0.0, "scale": 0.0, "rows": 0.0, "columns": 0.0}
    out_of_range = como_bad = dr_bad = 0
    como_err = 0.0
    n_cases = 1000
    for _ in range(n_cases):
        n_obs, n = int(rng.integers(10, 300)), int(rng.integers(1, 7))
        alpha = float(rng.uniform(0.02, 0.45))
        z = rng.standard_t(3, size=(n_obs, n)) if rng.random() < 0.5 else rng.normal(size=(n_obs, n))
        x = z @ rng.uniform(-0.3, 1.0, size=(n, n)) + rng.normal(size=n)
        base = np.array([f(x, alpha).value for f in fns])
        out_of_range += int(np.any((base < 0) | (base > 1.0 / alpha + 1e-12)))
        variants = {
            "location": x + rng.uniform(-50, 50, size=n),
            "scale": x * rng.uniform(1e-3, 1e3),
            "rows": x[rng.permutation(n_obs)],
            "columns": x[:, rng.permutation(n)],
        }
        for k, v in variants.items():
            worst[k] = max(worst[k], float(np.max(np.abs(np.array([f(v, alpha).value for f in fns]) - base))))
        # comonotonic panel a_i X + b_i, with N alpha an integer
        # N alpha = 1 puts the ES threshold exactly at max S, where the zero branch applies
        m_obs = 10 * int(rng.integers(2, 31))
        a_c = int(rng.integers(2, int(0.45 * m_obs) + 1)) / m_obs
        u = rng.standard_t(4, size=m_obs)
        como = u[:, None] * rng.uniform(0.1, 5.0, size=n) + rng.normal(size=n)
        err = float(np.max(np.abs(np.array([f(como, a_c).value for f in fns]) - 1.0)))
        como_err = max(como_err, err)
        como_bad += int(err > 1e-9)
        # DR on margins centered at their VaR
        cen = x - np.array([empirical_var(x[:, i], alpha) for i in range(n)])
        try:
            dr(cen, alpha, "var")
            dr_bad += 1
        except ZeroDenominator:
            pass
    for k, w in worst.items():
        rec.check(f"{k} invariance", w <= 1e-9, f"max |diff| {w:.2e}")
    rec.check("range [0, 1/alpha]", out_of_range == 0, f"{out_of_range} violations")
    rec.check("comonotonic = 1", como_bad == 0, f"{como_bad} violations, max err {como_err:.2e}")
    rec.check("DR ZeroDenominator on VaR-centered data", dr_bad == 0, f"{dr_bad} missed")
    u = np.random.default_rng(7).normal(size=40)
    edge = dq_es(np.column_stack([u, 2 * u + 1]), 1 / 40)
    rec.check("N alpha = 1 comonotonic DQ^ES takes the zero branch", edge.value == 0.0, f"{edge.value}")
    rec.check("case count", n_cases >= 1000, str(n_cases))
    rec.verify()


# --- 8 -------------------------------------------------------------------------


def test_08_expectile_machinery(acceptance):
    rec = acceptance("08", "expectile Jacobian, tilde density and round trip")
    rng = np.random.default_rng(8)
    worst_jac = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 6))
        fam = "t" if rng.random() < 0.5 else "normal"
        a = rng.normal(size=(n, n))
        m = EllipticalModel(fam, rng.normal(size=n), a @ a.T + n * np.eye(n),
                            float(rng.uniform(3, 9)) if fam == "t" else None)
        margins = [DensityPlugin.analytic(m.marginal(i)) for i in range(n)]
        sumplug = DensityPlugin.analytic(m.sum_law())
        alpha = float(rng.uniform(0.02, 0.4))
        p = asymvar._ex_pieces(margins, sumplug, alpha)
        jac = expectile_h_jacobian(p["G_t"], p["tilde_pdf"], p["mu_minus"], p["D"])
        fd = np.zeros_like(jac)
        h = 1e-5
        for j in range(jac.shape[1]):
            e = np.zeros(jac.shape[1])
            e[j] = h
            fd[:, j] = (expectile_h(margins, sumplug, alpha, e) - expectile_h(margins, sumplug, alpha, -e)) / (2 * h)
        worst_jac = max(worst_jac, float(np.max(np.abs(fd - jac)) / np.max(np.abs(jac))))
    rec.check("grad h finite difference", worst_jac < 1e-5, f"max rel {worst_jac:.2e}")

    laws = [UnivariateLaw(StandardNormal(), 0.3, 1.7), _model("t").sum_law(), _model("t", nu=7.0).marginal(0)]
    worst_pdf = worst_rt = 0.0
    for law in laws:
        tr = TildeTransform(law)
        for y in np.linspace(-4, 6, 21):
            h = 1e-4 * max(1.0, abs(y))
            fd = (tr.cdf(y + h) - tr.cdf(y - h)) / (2 * h)
            worst_pdf = max(worst_pdf, abs(fd / tr.pdf(y) - 1))
        for a in (0.01, 0.05, 0.1, 0.25, 0.45):
            worst_rt = max(worst_rt, abs(tr.cdf(law.expectile(a)) - (1 - a)))
    rec.check("tilde pdf = d tilde cdf / dy", worst_pdf < 1e-5, f"max rel {worst_pdf:.2e}")
    rec.check("tilde cdf at the expectile", worst_rt < 1e-8, f"max abs {worst_rt:.2e}")
    rec.verify()


# --- 9 -------------------------------------------------------------------------

GARCH = GarchParams(c=0.0, phi=0.1, omega=0.05, alpha_g=0.08, beta_g=0.9, nu=6.0)


def test_09_garch_pipeline(acceptance):
    rec = acceptance("09", "synthetic GARCH pipeline: recovery, CI calibration, variance orderings")
    fits = [fit_ar_garch(simulate_ar_garch(GARCH, 5000, seed=[31, s])) for s in range(10)]
    sd = math.sqrt(GARCH.omega / (1 - GARCH.persistence))
    med_c = float(np.median([f.c for f in fits]))
    rec.check("(a) c absolute", abs(med_c) < 0.2 * sd, f"{med_c:.4f}, unconditional sd {sd:.3f}")
    for k in ("phi", "omega", "alpha_g", "beta_g", "nu"):
        med = float(np.median([getattr(f, k) for f in fits]))
        rel = abs(med / getattr(GARCH, k) - 1)
        rec.check(f"(a) {k}", rel < 0.2, f"{med:.4f} vs {getattr(GARCH, k)} ({100 * rel:.1f}%)")

    panel = simulate_garch_panel([GARCH] * 5, 500 + 21 * 20, corr=0.3, seed=1)
    cfg = RollingConfig(window=500, step=21, boot_reps=500)
    res = rolling_dq_multi(panel, cfg, seed=0, estimators=[(k, a) for k in DQ_KINDS for a in (0.05, 0.1)])
    bv = {}
    for (kind, a), s in res.items():
        rec.check(f"(b) coverage {kind.value} alpha={a}", s.coverage >= 0.9, f"{s.coverage:.3f}")
        bv[kind.value, a] = float(np.nanmedian(s.boot_variance))
    for kind in DQ_KINDS:
        rec.check(f"(c) {kind} alpha 0.05 > 0.1", bv[kind, 0.05] > bv[kind, 0.1],
                  f"{bv[kind, 0.05]:.5f} vs {bv[kind, 0.1]:.5f}")
    for a in (0.05, 0.1):
        rec.check(f"(c) dq-ex smallest at alpha={a}", bv["dq-ex", a] < min(bv["dq-var", a], bv["dq-es", a]),
                  f"ex {bv['dq-ex', a]:.5f}, var {bv['dq-var', a]:.5f}, es {bv['dq-es', a]:.5f}")
    rec.verify()


# --- 10 ------------------------------------------------------------------------


def _golden_dq_es(d, alpha, iters=400):
    def phi(logr):
        return np.maximum(math.exp(logr) * d + 1.0, 0.0).mean() / alpha

    neg = -d[d < 0]
    lo = math.log(1e-12 / max(np.abs(d).max(), 1e-300))
    hi = math.log(10.0 / neg.min()) if neg.size else lo + 60
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, e = b - g * (b - a), a + g * (b - a)
    fc, fe = phi(c), phi(e)
    for _ in range(iters):
        if fc <= fe:
            b, e, fe = e, c, fc
            c = b - g * (b - a)
            fc = phi(c)
        else:
            a, c, fc = c, e, fe
            e = a + g * (b - a)
            fe = phi(e)
    return min(fc, fe, 1.0 / alpha)


def test_10_brute_force_oracles(acceptance):
    rec = acceptance("10", "brute-force oracles for DQ^ES, empirical ES and alpha*")
    rng = np.random.default_rng(10)
    worst_gs = worst_es = 0.0
    for _ in range(300):
        n_obs, n = int(rng.integers(2, 51)), int(rng.integers(1, 6))
        alpha = float(rng.uniform(0.02, 0.6))
        x = rng.standard_t(3, size=(n_obs, n)) @ rng.uniform(0.2, 1.0, size=(n, n))
        est = dq_es(x, alpha)
        d = x.sum(axis=1) - est.threshold
        if np.any(d > 0):
            worst_gs = max(worst_gs, abs(est.value - _golden_dq_es(d, alpha)))
        s = UnivariateSample(x[:, 0])
        knots = np.arange(1, n_obs) / n_obs
        pts = knots[knots < alpha]
        val, _ = integrate.quad(lambda b: empirical_var(s, b), 0.0, alpha, points=pts if pts.size else None,
                                limit=200, epsabs=1e-14, epsrel=1e-14)
        ref = val / alpha
        worst_es = max(worst_es, abs(empirical_es(s, alpha) - ref) / max(1.0, abs(ref)))
    rec.check("dq_es = golden-section minimum", worst_gs <= 1e-9, f"max {worst_gs:.2e}")
    rec.check("empirical_es = quantile integral", worst_es <= 1e-12, f"max {worst_es:.2e}")

    law = UnivariateLaw(StandardNormal(), 0.5, 2.0)
    worst_a = 0.0
    for beta in (0.005, 0.02, 0.1, 0.3, 0.7):
        # target from direct quadrature of the quantile function
        val, _ = integrate.quad(lambda p: 0.5 + 2.0 * stats.norm.isf(p), 0.0, beta, epsabs=1e-14, epsrel=1e-14,
                                limit=200)
        worst_a = max(worst_a, abs(solve_alpha_star(law, val / beta) - beta))
        worst_a = max(worst_a, abs(solve_alpha_star(DensityPlugin.analytic(law), law.es(beta)) - beta))
    rec.check("alpha* round trip on normal ES", worst_a <= 1e-8, f"max {worst_a:.2e}")
    rec.verify()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
