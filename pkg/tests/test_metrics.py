import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from wdropout import metrics

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def ws1_quad_oracle(r):
    """Brute-force 1-Wasserstein distance: numeric integral of |F_emp - Phi|.

    Cuts at every jump of the empirical CDF *and* at every point where it
    crosses Phi, so each sub-integrand is smooth and quad converges tightly.
    """
    r = np.sort(np.asarray(r, dtype=np.float64))
    n = r.size

    def f(t):
        emp = np.searchsorted(r, t, side="right") / n
        return abs(emp - metrics.std_normal_cdf(t))

    lo = min(r[0], -10.0) - 2.0
    hi = max(r[-1], 10.0) + 2.0
    crossings = metrics.std_normal_quantile(np.arange(1, n) / n)
    cuts = np.unique(np.concatenate([[lo], r, crossings, [hi]]))
    cuts = cuts[(cuts >= lo) & (cuts <= hi)]
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b > a:
            val, _ = integrate.quad(f, a, b, limit=400)
            total += val
    return total


class TestNormalHelpers:
    def test_cdf_against_mpmath(self):
        for t in np.linspace(-8.0, 8.0, 33):
            oracle = float(mpmath.ncdf(mpmath.mpf(float(t))))
            assert abs(float(metrics.std_normal_cdf(t)) - oracle) <= 1e-14

    def test_cdf_spot_value(self):
        assert float(metrics.std_normal_cdf(0.0)) == 0.5
        assert float(metrics.std_normal_cdf(1.96)) == pytest.approx(
            0.9750021, abs=1e-5
        )

    def test_quantile_roundtrip(self):
        u = np.linspace(1e-8, 1.0 - 1e-8, 101)
        back = metrics.std_normal_cdf(metrics.std_normal_quantile(u))
        np.testing.assert_allclose(back, u, rtol=0, atol=1e-10)

    def test_quantile_domain_is_open(self):
        assert float(metrics.std_normal_quantile(0.5)) == 0.0
        for bad in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(ValueError):
                metrics.std_normal_quantile(bad)

    def test_pdf_matches_formula(self):
        t = np.array([-2.0, 0.0, 3.0])
        np.testing.assert_allclose(
            metrics.std_normal_pdf(t),
            np.exp(-0.5 * t * t) / math.sqrt(2 * math.pi),
            atol=1e-16,
        )


class TestResiduals:
    def test_plain_division(self):
        r = metrics.residuals([3.0], [2.0], [0.0])
        assert r.values[0] == 1.5
        assert r.n_floored == 0

    def test_zero_scale_hits_floor_and_is_counted(self):
        r = metrics.residuals([1.0, 1.0], [0.0, 1.0], [0.0, 0.0])
        assert r.values[0] == 1e12
        assert r.values[1] == 1.0
        assert r.n_floored == 1

    def test_rejects_negative_scale_and_mismatch(self):
        with pytest.raises(ValueError):
            metrics.residuals([1.0], [-0.5], [0.0])
        with pytest.raises(ValueError):
            metrics.residuals([1.0, 2.0], [1.0], [0.0])
        with pytest.raises(ValueError):
            metrics.residuals([], [], [])


class TestRmse:
    def test_hand_example(self):
        assert metrics.rmse([3.0, 4.0], [0.0, 0.0]) == pytest.approx(
            math.sqrt(12.5), rel=1e-15
        )

    def test_zero_on_perfect_fit(self):
        assert metrics.rmse([1.0, 2.0], [1.0, 2.0]) == 0.0


class TestMeanNll:
    def test_gaussian_spot_values(self):
        assert metrics.mean_nll([0.0], [1.0], [0.0]) == 0.0
        assert metrics.mean_nll([0.0], [1.0], [2.0]) == pytest.approx(2.0)
        assert metrics.mean_nll([0.0], [math.e], [0.0]) == pytest.approx(1.0)


class TestEce:
    def test_all_identical_far_off_residuals(self):
        # everything lands in one bin: |1 - 0.1| + 9 * 0.1 = 1.8 exactly
        r = np.full(1000, 10.0)
        assert metrics.ece(r) == 1.8

    def test_exact_bin_midpoints_score_zero(self):
        u = (np.arange(10) + 0.5) / 10
        r = metrics.std_normal_quantile(u)
        assert metrics.ece(r) == pytest.approx(0.0, abs=1e-15)

    def test_large_calibrated_sample_is_small(self):
        r = np.random.default_rng(5).standard_normal(100_000)
        assert metrics.ece(r) <= 0.05

    def test_last_bin_is_closed(self):
        # u == 1.0 exactly must fall into the last bin, not an 11th one
        assert metrics.ece(np.full(4, 40.0)) == 1.8

    def test_needs_at_least_two_bins(self):
        with pytest.raises(ValueError):
            metrics.ece(np.zeros(5), n_bins=1)

    def test_bin_count_changes_resolution(self):
        r = np.full(10, 10.0)
        assert metrics.ece(r, n_bins=5) == pytest.approx(2 * 4 / 5)

    def test_matches_analytic_for_miscalibrated_gaussian(self):
        rng = np.random.default_rng(17)
        for mu, sigma in [(0.5, 1.3), (-1.0, 0.7), (0.0, 2.0)]:
            draws = rng.standard_normal(200_000) * sigma + mu
            assert metrics.ece(draws) == pytest.approx(
                metrics.analytic_ece(mu, sigma), abs=0.02
            )


class TestWs1:
    def test_point_mass_at_zero(self):
        # E|Z| = sqrt(2/pi): the distance between delta_0 and N(0,1)
        assert metrics.ws1(np.zeros(1)) == pytest.approx(SQRT_2_OVER_PI, abs=1e-12)
        assert metrics.ws1(np.zeros(50)) == pytest.approx(SQRT_2_OVER_PI, abs=1e-12)

    def test_two_point_sample(self):
        assert metrics.ws1(np.array([-1.0, 1.0])) == pytest.approx(0.535, abs=5e-4)
        assert metrics.ws1(np.array([-1.0, 1.0])) == pytest.approx(
            ws1_quad_oracle([-1.0, 1.0]), abs=1e-9
        )

    def test_point_mass_offset_by_two(self):
        oracle = float(
            mpmath.quad(lambda t: abs((1.0 if t >= 2 else 0.0) - mpmath.ncdf(t)),
                        [-12, 2, 12])
        )
        assert metrics.ws1(np.array([2.0])) == pytest.approx(oracle, abs=1e-9)

    @pytest.mark.parametrize("seed,n", [(0, 3), (1, 7), (2, 20), (3, 41)])
    def test_matches_numeric_quadrature(self, seed, n):
        r = np.random.default_rng(seed).standard_normal(n) * 1.5 + 0.3
        assert metrics.ws1(r) == pytest.approx(ws1_quad_oracle(r), abs=1e-7)

    def test_translation_detected(self):
        rng = np.random.default_rng(9)
        r = rng.standard_normal(100_000) + 2.0
        assert metrics.ws1(r) == pytest.approx(2.0, abs=0.02)

    def test_sorted_input_invariance(self, rng):
        r = rng.standard_normal(25)
        assert metrics.ws1(r) == metrics.ws1(np.sort(r)[::-1])

    def test_calibrated_sample_shrinks_with_n(self):
        rng = np.random.default_rng(33)
        small = np.mean([metrics.ws1(rng.standard_normal(100)) for _ in range(5)])
        large = np.mean([metrics.ws1(rng.standard_normal(10_000)) for _ in range(5)])
        assert large < small / 3

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            metrics.ws1(np.array([0.0, np.inf]))


class TestEtl:
    def test_top_fraction_mean(self):
        r = np.arange(1.0, 101.0)
        assert metrics.etl(r, 0.99) == 100.0
        assert metrics.etl(r, 0.95) == pytest.approx(np.mean([96, 97, 98, 99, 100]))

    def test_tail_count_uses_ceiling(self):
        r = np.arange(1.0, 201.0)
        # (1 - 0.99) * 200 = 2 exactly -> the top two values
        assert metrics.etl(r, 0.99) == pytest.approx(199.5)

    def test_uses_absolute_values(self):
        assert metrics.etl(np.array([-5.0, 1.0, 1.0]), 0.9) == 5.0

    def test_constant_sample(self):
        assert metrics.etl(np.full(10, 0.7), 0.99) == pytest.approx(0.7)

    def test_monotone_in_added_extremes(self, rng):
        r = rng.standard_normal(500)
        base = metrics.etl(r, 0.99)
        assert metrics.etl(np.append(r, 50.0), 0.99) >= base

    def test_rejects_bad_level(self):
        with pytest.raises(ValueError):
            metrics.etl(np.ones(3), 1.0)


class TestKs:
    def test_single_point_at_zero(self):
        assert metrics.ks(np.zeros(1)) == 0.5

    def test_far_off_sample_approaches_one(self):
        assert metrics.ks(np.full(10, 10.0)) == pytest.approx(1.0, abs=1e-9)

    def test_matches_grid_supremum(self, rng):
        r = rng.standard_normal(37) * 1.4 - 0.2
        srt = np.sort(r)
        n = srt.size
        # empirical sup over the jump points, computed the obvious way
        oracle = 0.0
        for i, t in enumerate(srt):
            u = float(metrics.std_normal_cdf(t))
            oracle = max(oracle, abs((i + 1) / n - u), abs(i / n - u))
        assert metrics.ks(r) == pytest.approx(oracle, abs=1e-12)

    def test_large_calibrated_sample_is_small(self):
        r = np.random.default_rng(21).standard_normal(100_000)
        assert metrics.ks(r) <= 0.01


class TestAnalyticCurves:
    def test_shifted_unit_gaussian(self):
        assert metrics.analytic_ws1(3.0, 1.0) == 3.0
        assert metrics.analytic_ws1(-1.5, 1.0) == 1.5

    def test_calibrated_is_zero(self):
        assert metrics.analytic_ws1(0.0, 1.0) == 0.0
        assert metrics.analytic_ece(0.0, 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_point_mass_limit(self):
        assert metrics.analytic_ws1(0.0, 0.0) == pytest.approx(
            SQRT_2_OVER_PI, abs=1e-8
        )
        assert metrics.analytic_ece(0.0, 0.0) == pytest.approx(1.8, abs=1e-12)

    def test_scale_only_error_closed_form(self):
        # same mean: the quantile difference is (sigma - 1) * z, so the
        # 1-Wasserstein distance is |sigma - 1| * E|Z|
        for sigma in (0.25, 0.8, 2.0, 4.0):
            assert metrics.analytic_ws1(0.0, sigma) == pytest.approx(
                abs(sigma - 1.0) * SQRT_2_OVER_PI, rel=1e-7
            )

    def test_matches_empirical_ws1(self):
        rng = np.random.default_rng(4)
        for mu, sigma in [(1.0, 0.5), (-0.3, 2.0)]:
            draws = rng.standard_normal(100_000) * sigma + mu
            assert metrics.ws1(draws) == pytest.approx(
                metrics.analytic_ws1(mu, sigma), abs=0.03
            )

    def test_curves_bundle(self):
        out = metrics.analytic_curves([0.0, 3.0], [1.0, 1.0])
        assert set(out) == {"ws1", "ws2", "ece"}
        np.testing.assert_allclose(out["ws2"], [0.0, 3.0], atol=1e-15)
        assert out["ws1"][1] == pytest.approx(3.0, abs=1e-8)
        out = metrics.analytic_curves(0.0, [0.5, 1.0, 2.0])
        np.testing.assert_allclose(out["ws2"], [0.5, 0.0, 1.0], atol=1e-15)

    def test_rejects_negative_sigma(self):
        with pytest.raises(ValueError):
            metrics.analytic_ws1(0.0, -1.0)
        with pytest.raises(ValueError):
            metrics.analytic_ece(0.0, -1.0)


class TestEvaluate:
    def test_bundles_individual_metrics(self, rng):
        mu = rng.standard_normal(50)
        sigma = rng.uniform(0.5, 2.0, 50)
        y = rng.standard_normal(50)
        rep = metrics.evaluate(mu, sigma, y, dataset="d", method="m",
                               split="iid_kfold", side="test", fold=2)
        r = metrics.residuals(mu, sigma, y)
        assert rep.rmse == metrics.rmse(mu, y)
        assert rep.mean_nll == metrics.mean_nll(mu, sigma, y)
        assert rep.ece == metrics.ece(r)
        assert rep.ws == metrics.ws1(r)
        assert rep.etl_0_99 == metrics.etl(r)
        assert rep.ks == metrics.ks(r)
        assert rep.n_points == 50
        assert rep.n_floored == 0
        assert (rep.dataset, rep.method, rep.fold) == ("d", "m", 2)

    def test_floored_points_surface_in_report(self):
        rep = metrics.evaluate([1.0, 1.0], [0.0, 1.0], [0.0, 0.0])
        assert rep.n_floored == 1

    def test_dict_roundtrip(self, rng):
        rep = metrics.evaluate(rng.standard_normal(10), np.ones(10),
                               rng.standard_normal(10), method="x")
        assert metrics.EvalReport.from_dict(rep.to_dict()) == rep

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_metrics_are_permutation_invariant(self, seed):
        g = np.random.default_rng(seed)
        r = g.standard_normal(30)
        perm = g.permutation(r)
        assert metrics.ece(perm) == metrics.ece(r)
        assert metrics.ws1(perm) == metrics.ws1(r)
        assert metrics.ks(perm) == metrics.ks(r)
        assert metrics.etl(perm) == metrics.etl(r)
