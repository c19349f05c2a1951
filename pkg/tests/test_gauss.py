import numpy as np
import pytest
from scipy import integrate, stats

from dqest._gauss import FeatureSet, PLFeature, bvn_cdf, truncated_moments


@pytest.mark.parametrize("rho", [-0.95, -0.5, 0.0, 0.3, 0.8, 0.999])
def test_bvn_cdf_matches_scipy(rho):
    pts = [(-1.0, 0.5), (0.0, 0.0), (1.3, -0.2), (2.5, 2.0), (-3.0, -2.0), (0.0, 1.0)]
    cov = [[1, rho], [rho, 1]]
    for x, y in pts:
        ref = stats.multivariate_normal.cdf([x, y], mean=[0, 0], cov=cov, abseps=1e-12, releps=1e-12)
        assert bvn_cdf(x, y, rho) == pytest.approx(ref, abs=1e-7)


def _integrated(h, k, rho):
    def dens(z2, z1):
        return stats.multivariate_normal.pdf([z1, z2], mean=[0, 0], cov=[[1, rho], [rho, 1]])

    out = []
    for g in (lambda a, b: 1.0, lambda a, b: a, lambda a, b: b, lambda a, b: a * b):
        v, _ = integrate.dblquad(lambda z2, z1: g(z1, z2) * dens(z2, z1), h, 9, k, 9, epsabs=1e-11)
        out.append(v)
    return out


@pytest.mark.parametrize("h,k,rho", [(0.3, -0.4, 0.5), (-1.0, 1.2, -0.6), (0.0, 0.0, 0.2), (1.5, 0.5, 0.9)])
def test_truncated_moments_match_quadrature(h, k, rho):
    got = truncated_moments(h, k, rho)
    np.testing.assert_allclose(np.ravel(got), _integrated(h, k, rho), atol=1e-7)


def test_truncated_moments_degenerate_correlation():
    # rho = +1 is the region {Z > max(h, k)}
    p, e1, e2, e12 = truncated_moments(0.4, -0.3, 1.0)
    assert p == pytest.approx(stats.norm.sf(0.4))
    assert e1 == pytest.approx(stats.norm.pdf(0.4)) and e2 == pytest.approx(e1)
    assert e12 == pytest.approx(stats.norm.sf(0.4) + 0.4 * stats.norm.pdf(0.4))
    # rho = -1: Z2 = -Z1 > k means Z1 < -k
    p, e1, e2, e12 = truncated_moments(-0.5, -0.2, -1.0)
    assert p == pytest.approx(stats.norm.cdf(0.2) - stats.norm.cdf(-0.5))
    assert e2 == pytest.approx(-e1)
    p, *_ = truncated_moments(1.0, 0.0, -1.0)
    assert p == 0.0


def test_features_evaluate():
    u = np.array([-2.0, 0.5, 3.0])
    np.testing.assert_array_equal(PLFeature.indicator_le(0.5)(u), [1.0, 1.0, 0.0])
    np.testing.assert_allclose(PLFeature.pos_part(1.0)(u), [0.0, 0.0, 2.0])
    np.testing.assert_allclose(PLFeature.neg_part(1.0)(u), [3.0, 0.5, 0.0])
    np.testing.assert_allclose(PLFeature.abs_dev(1.0)(u), [3.0, 0.5, 2.0])
    np.testing.assert_allclose(PLFeature.identity()(u), u)


def test_gaussian_moments_match_monte_carlo():
    rng = np.random.default_rng(11)
    cov = np.array([[1.0, 0.3, -0.2], [0.3, 2.0, 0.5], [-0.2, 0.5, 1.5]])
    mu = np.array([0.1, -0.3, 0.2])
    w = np.array([[1, 0, 0], [0, 1, 0], [1, 1, 1], [1, 1, 1], [0, 0, 1], [1, -1, 0]], dtype=float)
    feats = [PLFeature.indicator_le(0.5), PLFeature.pos_part(-0.2), PLFeature.pos_part(1.0),
             PLFeature.abs_dev(0.3), PLFeature.neg_part(0.4), PLFeature.identity()]
    fs = FeatureSet(w, feats)
    mean, second = fs.gaussian_moments(mu, cov)
    x = rng.multivariate_normal(mu, cov, size=2_000_000)
    y = fs.evaluate(x)
    m_mc = y.mean(axis=0)
    s_mc = y.T @ y / len(y)
    se_m = y.std(axis=0) / np.sqrt(len(y))
    se_s = np.sqrt(np.var(y[:, :, None] * y[:, None, :], axis=0) / len(y))
    assert np.all(np.abs(mean - m_mc) < 5 * se_m + 1e-12)
    assert np.all(np.abs(second - s_mc) < 5 * se_s + 1e-12)
    np.testing.assert_allclose(second, second.T, atol=1e-14)
