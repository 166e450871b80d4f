import math

import numpy as np
import pytest
from scipy.special import erfcinv

from raimsim.baseline import (
    BaselineMonitor,
    baseline_pl,
    enumerate_fault_modes,
    fault_exclusion,
    ss_test,
    wls_estimate,
)
from raimsim.scenario import benchmark_scenario, draw_epoch, linearize

from test_scenario import small_scenario


def q_inv_oracle(p):
    return math.sqrt(2.0) * erfcinv(2.0 * p)


@pytest.fixture(scope="module")
def bench():
    sc = benchmark_scenario(layout_seed=42, fault_type="nlos")
    return sc, linearize(sc)


class TestWls:
    def test_recovers_truth_noise_free(self, bench):
        sc, model = bench
        x = np.array([3.0, -2.0, 1.0, 0.5])
        y = model.H @ x
        x_hat, phi, a = wls_estimate(model, y)
        np.testing.assert_allclose(x_hat, x, atol=1e-9)

    def test_equal_weights_reduce_to_ols(self, rng):
        sc = small_scenario(m=4, noise_std=0.7)
        model = linearize(sc)
        y = rng.normal(size=4)
        x_hat, phi, _ = wls_estimate(model, y)
        # normal-equations oracle (unweighted: equal noise cancels)
        want = np.linalg.solve(model.H.T @ model.H, model.H.T @ y)
        np.testing.assert_allclose(x_hat, want, atol=1e-10)

    def test_gain_is_unbiased(self, bench):
        sc, model = bench
        modes = enumerate_fault_modes(model.m, sc.theta)
        for fm in [None, modes[0], modes[100]]:
            _, _, a = wls_estimate(model, np.zeros(model.m), mode=fm)
            np.testing.assert_allclose(a @ model.H, np.eye(4), atol=1e-10)


class TestEnumerateFaultModes:
    def test_counts(self):
        assert len(enumerate_fault_modes(12, 0.05)) == sum(
            math.comb(12, j) for j in range(1, 8))
        assert len(enumerate_fault_modes(12, 0.05)) == 3301
        assert len(enumerate_fault_modes(6, 0.05)) == 6
        assert enumerate_fault_modes(5, 0.05) == []

    def test_probabilities(self):
        modes = enumerate_fault_modes(7, 0.1)
        fm = modes[0]
        assert fm.p_fm == pytest.approx(0.1 * 0.9**6, rel=1e-12)
        assert set(fm.free_set) | set(fm.faulty_set) == set(range(7))

    def test_sorted_singles_before_doubles(self):
        modes = enumerate_fault_modes(8, 0.05)
        sizes = [len(fm.faulty_set) for fm in modes]
        assert sizes == sorted(sizes)
        p = [fm.p_fm for fm in modes]
        assert p == sorted(p, reverse=True)

    def test_tie_break_lexicographic(self):
        modes = enumerate_fault_modes(7, 0.05)
        singles = [fm.faulty_set for fm in modes[:7]]
        assert singles == sorted(singles)


class TestSsTest:
    def test_fault_free_noise_free_passes(self, bench):
        sc, model = bench
        y = model.H @ np.array([1.0, 2.0, 0.5, -0.3])
        modes = enumerate_fault_modes(model.m, sc.theta)
        report = ss_test(model, y, modes, 1e-2, 1e-2)
        assert report.passed and report.available
        assert report.accepted_mode is None
        np.testing.assert_allclose(report.tau, 0.0, atol=1e-9)

    def test_threshold_quantile_against_oracle(self, bench):
        sc, model = bench
        modes = enumerate_fault_modes(model.m, sc.theta)
        report = ss_test(model, np.zeros(model.m), modes, 1e-2, 1e-2)
        n_fm = len(modes)
        mult_h = q_inv_oracle(1e-2 / (4 * n_fm))
        mult_v = q_inv_oracle(1e-2 / (2 * n_fm))
        assert mult_h == pytest.approx(4.809287460322862, rel=1e-12)
        # thresholds = sigma_ss * multiplier; recover and compare per mode
        _, _, a0 = wls_estimate(model, np.zeros(model.m))
        for k in (0, 57, 1200):
            _, _, ak = wls_estimate(model, np.zeros(model.m), mode=modes[k])
            d = (ak - a0)[:3]
            sig = np.sqrt(d**2 @ model.noise_var)
            np.testing.assert_allclose(report.thresholds[k],
                                       sig * np.array([mult_h, mult_h, mult_v]),
                                       rtol=1e-10)

    def test_false_alarm_rate_bounded(self, bench):
        # union bound: Pr[any tau > T] <= P_FA_H + P_FA_V on fault-free epochs
        sc, model = bench
        p_fa_h = p_fa_v = 1e-2
        mon = BaselineMonitor(model, sc.theta, p_fa_h, p_fa_v)
        stage = mon.top
        diff = stage.a_modes[:, :3, :] - stage.a0[None, :3, :]
        rng = np.random.default_rng(99)
        n_epochs, alarms = 20_000, 0
        for _ in range(20):
            noise = rng.normal(0.0, sc.noise_std, size=(n_epochs // 20, model.m))
            tau = np.abs(np.einsum("knj,ej->ekn", diff, noise))
            alarms += int(np.sum(np.any(tau > stage.thresholds[None], axis=(1, 2))))
        rate = alarms / n_epochs
        stderr = math.sqrt((p_fa_h + p_fa_v) / n_epochs)
        assert rate <= p_fa_h + p_fa_v + 2 * stderr


class TestFaultExclusion:
    def test_single_large_bias_excluded(self, bench):
        sc, model = bench
        modes = enumerate_fault_modes(model.m, sc.theta)
        rng = np.random.default_rng(1)
        y = model.H @ np.zeros(4) + rng.normal(0, 1e-3, model.m)
        y[7] += 1000.0
        top = ss_test(model, y, modes, 1e-2, 1e-2)
        assert not top.passed
        report = fault_exclusion(model, y, modes, sc.theta, 1e-2, 1e-2)
        assert report.available
        assert report.excluded == (7,)
        assert modes[report.accepted_mode].faulty_set == (7,)

    def test_massive_corruption_unavailable(self, bench):
        # seven wild biases leave no verifiable consistent subset
        sc, model = bench
        modes = enumerate_fault_modes(model.m, sc.theta)
        rng = np.random.default_rng(2)
        y = rng.normal(0, 1e-3, model.m)
        y[:7] += rng.uniform(200.0, 2000.0, 7) * rng.choice([-1, 1], 7)
        report = fault_exclusion(model, y, modes, sc.theta, 1e-2, 1e-2)
        assert not report.available
        assert not report.passed

    def test_monitor_matches_functions(self, bench):
        sc, model = bench
        modes = enumerate_fault_modes(model.m, sc.theta)
        mon = BaselineMonitor(model, sc.theta, 1e-2, 1e-2)
        for seed in range(40):
            y = draw_epoch(sc, seed).y
            top = ss_test(model, y, modes, 1e-2, 1e-2)
            want = top if top.passed else fault_exclusion(model, y, modes,
                                                          sc.theta, 1e-2, 1e-2)
            got = mon.run_epoch(y)
            assert got.passed == want.passed
            assert got.available == want.available
            assert got.free == want.free
            if want.available:
                np.testing.assert_allclose(got.x_hat, want.x_hat, atol=1e-12)


class TestBaselinePl:
    def test_no_modes_reduces_to_single_gaussian(self):
        sc = small_scenario(m=5, noise_std=0.5)
        model = linearize(sc)
        report = ss_test(model, np.zeros(5), [], 1e-2, 1e-2)
        assert report.passed  # nothing to monitor
        p_tir = 1e-3
        pl_h, pl_v = baseline_pl(report, model, p_tir, p_tir, r_tol=1e-4)
        sigma = np.sqrt(np.diag(report.phi0)[:3])
        assert pl_v == pytest.approx(sigma[2] * q_inv_oracle(p_tir / 2), abs=2e-4)
        want_h = math.hypot(sigma[0] * q_inv_oracle(p_tir / 4),
                            sigma[1] * q_inv_oracle(p_tir / 4))
        assert pl_h == pytest.approx(want_h, abs=3e-4)

    def test_constraint_monotone_and_postcondition(self, bench):
        sc, model = bench
        mon = BaselineMonitor(model, sc.theta, 1e-2, 1e-2)
        y = draw_epoch(sc, 3).y
        report = mon.run_epoch(y)
        assert report.available
        r_tol = 1e-3
        pl_h, pl_v = baseline_pl(report, model, 1e-3, 1e-3, r_tol=r_tol)

        sigma0 = np.sqrt(np.diag(report.phi0)[:3])

        def lhs_v(r):
            from raimsim.qfunc import q
            return 2 * q(r / sigma0[2]) + float(
                report.p_fm @ q((r - report.thresholds[:, 2])
                                / report.sigma_modes[:, 2]))

        rs = np.linspace(0.0, 2 * pl_v, 50)
        vals = [lhs_v(r) for r in rs]
        assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))
        assert lhs_v(pl_v) < 1e-3
        assert lhs_v(pl_v - r_tol) >= 1e-3

    def test_unavailable_report_rejected(self, bench):
        sc, model = bench
        modes = enumerate_fault_modes(model.m, sc.theta)
        rng = np.random.default_rng(2)
        y = rng.normal(0, 1e-3, model.m)
        y[:7] += rng.uniform(200.0, 2000.0, 7)
        report = fault_exclusion(model, y, modes, sc.theta, 1e-2, 1e-2)
        if not report.available:
            with pytest.raises(ValueError):
                baseline_pl(report, model, 1e-3, 1e-3)


class TestErrorCovariance:
    def test_empirical_error_covariance_matches_phi(self, bench):
        # x - x_hat = A n on fault-free epochs
        sc, model = bench
        _, phi, a = wls_estimate(model, np.zeros(model.m))
        rng = np.random.default_rng(5)
        noise = rng.normal(0.0, sc.noise_std, size=(10_000, model.m))
        err = noise @ a.T
        emp = np.cov(err, rowvar=False)
        scale = np.sqrt(np.outer(np.diag(phi), np.diag(phi)))
        assert np.max(np.abs(emp - phi) / scale) < 0.1
