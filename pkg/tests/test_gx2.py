import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import chi2, ncx2

from raimsim.gx2 import (
    GeneralizedChiSquare,
    ImhofEvaluator,
    gx2_cdf,
    truncation_bound,
    truncation_point,
)


def gcs(weights, noncents=None, dofs=None):
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    return GeneralizedChiSquare(
        weights=w,
        dofs=np.ones_like(w) if dofs is None else dofs,
        noncents=np.zeros_like(w) if noncents is None else noncents,
    )


def raw_integrand(g, u, z):
    """The inversion integrand, written independently of the implementation."""
    wu = np.multiply.outer(u, g.weights)
    beta = 0.5 * np.sum(g.dofs * np.arctan(wu)
                        + g.noncents * wu / (1 + wu**2), axis=-1) - 0.5 * z * u
    kappa = np.exp(np.sum(0.25 * g.dofs * np.log(1 + wu**2)
                          + 0.5 * g.noncents * wu**2 / (1 + wu**2), axis=-1))
    return np.sin(beta) / (u * kappa)


class TestTruncation:
    def test_bound_decreasing_and_solved(self):
        g = gcs([0.5, 2.0])
        us = np.logspace(-1, 5, 20)
        vals = [truncation_bound(g, u) for u in us]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        for eps in (1e-4, 1e-6, 1e-8):
            u = truncation_point(g, eps)
            assert truncation_bound(g, u) <= eps * (1 + 1e-9)
            assert truncation_bound(g, u / 1.05) > eps

    def test_unreachable_accuracy_raises(self):
        g = gcs([1e-12])
        with pytest.raises(RuntimeError):
            truncation_point(g, 1e-300)


class TestAgainstClosedForms:
    def test_chi2_1dof(self):
        g = gcs([1.0])
        for z in np.linspace(0.0, 36.0, 25):
            val, _ = gx2_cdf(g, float(z), eps_abs=1e-7)
            assert val == pytest.approx(chi2.cdf(z, 1), abs=1e-6)

    def test_chi2_1_at_one(self):
        val, _ = gx2_cdf(gcs([1.0]), 1.0, eps_abs=1e-7)
        assert val == pytest.approx(0.6826894921370859, abs=1e-6)

    def test_chi2_2dof_closed_form(self):
        g = gcs([1.0, 1.0])
        for r in np.linspace(0.0, 6.0, 25):
            val, _ = gx2_cdf(g, float(r) ** 2, eps_abs=1e-7)
            assert val == pytest.approx(1.0 - math.exp(-r**2 / 2.0), abs=1e-6)

    def test_zero_is_zero(self):
        val, _ = gx2_cdf(gcs([0.3, 1.7]), 0.0, eps_abs=1e-6)
        assert val == pytest.approx(0.0, abs=1e-6)

    def test_scaled_noncentral_single(self):
        for w, nu2 in [(0.5, 4.0), (3.0, 0.9), (0.07, 25.0)]:
            g = gcs([w], noncents=[nu2])
            for z in (0.5, 2.0, 10.0, 40.0):
                val, _ = gx2_cdf(g, z, eps_abs=1e-7)
                assert val == pytest.approx(ncx2.cdf(z / w, 1, nu2), abs=1e-6)

    def test_multi_dof(self):
        g = gcs([2.0], dofs=[3.0])
        for z in (1.0, 5.0, 20.0):
            val, _ = gx2_cdf(g, z, eps_abs=1e-7)
            assert val == pytest.approx(chi2.cdf(z / 2.0, 3), abs=1e-6)


class TestAgainstQuadratureOracle:
    def test_random_instances_match_adaptive_quad(self, rng):
        for _ in range(8):
            n = rng.integers(2, 4)
            g = gcs(rng.uniform(0.2, 3.0, n), noncents=rng.uniform(0.0, 4.0, n))
            z = float(rng.uniform(0.5, 12.0))
            eps = 1e-7
            val, big_u = gx2_cdf(g, z, eps_abs=eps)
            oracle, err = integrate.quad(lambda u: raw_integrand(g, u, z),
                                         0.0, big_u, limit=4000,
                                         epsabs=1e-11, epsrel=1e-11)
            assert err < 1e-8
            assert val == pytest.approx(0.5 - oracle / math.pi, abs=1e-7)

    def test_small_weights_large_u(self, rng):
        # position-error-like scales: weights ~ 0.05 m^2 drive U into the 1e4s
        g = gcs([0.04, 0.09], noncents=[0.0, 1.5])
        z = 1.2
        val, big_u = gx2_cdf(g, z, eps_abs=1e-5)
        assert big_u > 1e3
        oracle = ncx2_mix_mc(g, z, n=400_000, seed=7)
        assert val == pytest.approx(oracle, abs=4 * math.sqrt(0.5 / 400_000) + 2e-5)


def ncx2_mix_mc(g, z, n, seed):
    rng = np.random.default_rng(seed)
    samples = np.zeros(n)
    for w, k, t in zip(g.weights, g.dofs, g.noncents):
        draws = rng.noncentral_chisquare(k, t, size=n) if t > 0 else \
            rng.chisquare(k, size=n)
        samples += w * draws
    return float(np.mean(samples <= z))


class TestMonteCarlo:
    def test_random_instances_within_stderr(self, rng):
        n = 200_000
        for i in range(4):
            dim = rng.integers(1, 4)
            g = gcs(rng.uniform(0.1, 5.0, dim),
                    noncents=rng.uniform(0.0, 9.0, dim))
            mean = float(np.sum(g.weights * (g.dofs + g.noncents)))
            for z in (0.5 * mean, mean, 2.0 * mean):
                val, _ = gx2_cdf(g, z, eps_abs=1e-6)
                mc = ncx2_mix_mc(g, z, n, seed=100 + i)
                stderr = math.sqrt(max(mc * (1 - mc), 1e-6) / n)
                assert abs(val - mc) < 3.5 * stderr + 2e-6


class TestEvaluatorProperties:
    def test_nondecreasing_in_z(self):
        g = gcs([0.5, 1.5], noncents=[1.0, 0.3])
        big_u = truncation_point(g, 1e-7)
        ev = ImhofEvaluator(g, big_u, z_max=30.0, quad_tol=1e-8)
        zs = np.linspace(0.0, 30.0, 120)
        vals = ev.cdf_bar(zs)
        assert np.all(np.diff(vals) >= -1e-7)
        assert np.all((vals >= 0.0) & (vals <= 1.0))

    def test_truncation_honesty(self, rng):
        # stopping at U vs 4U differs by at most the two tail bounds
        for _ in range(5):
            n = rng.integers(1, 4)
            g = gcs(rng.uniform(0.3, 2.0, n), noncents=rng.uniform(0.0, 2.0, n))
            z = float(rng.uniform(0.5, 8.0))
            big_u = truncation_point(g, 1e-4)
            f1 = ImhofEvaluator(g, big_u, z_max=z, quad_tol=1e-9).cdf_bar(z)
            f2 = ImhofEvaluator(g, 4 * big_u, z_max=z, quad_tol=1e-9).cdf_bar(z)
            assert abs(f1 - f2) <= 2 * truncation_bound(g, big_u) + 1e-8

    def test_shared_evaluator_matches_single_calls(self):
        g = gcs([0.2, 0.8], noncents=[0.5, 2.0])
        big_u = truncation_point(g, 1e-7)
        ev = ImhofEvaluator(g, big_u, z_max=20.0, quad_tol=1e-8)
        for z in (0.3, 4.0, 19.5):
            single, _ = gx2_cdf(g, z, eps_abs=1e-7)
            assert ev.cdf_bar(z) == pytest.approx(single, abs=3e-7)


class TestValidation:
    def test_nonpositive_weight_rejected(self):
        with pytest.raises(ValueError):
            gcs([1.0, -0.5])
        with pytest.raises(ValueError):
            gcs([1.0, 0.0])

    def test_negative_z_rejected(self):
        with pytest.raises(ValueError):
            gx2_cdf(gcs([1.0]), -1.0)
