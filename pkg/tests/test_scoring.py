import warnings
from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bisection_quantile, crps_ensemble_oracle, crps_tn_oracle, tn_frozen
from windemos.distributions import TruncatedNormal, tn_cdf
from windemos.exceptions import DomainError, InputError, UndefinedSkillError
from windemos.scoring import (
    ScoreRecord,
    aggregate,
    brier,
    crps_ensemble,
    crps_tn,
    metric_names,
    point_errors,
    quantile_score,
    score_all,
    skill_score,
)


class TestCrpsTruncatedNormal:
    def test_reference_value(self):
        # adaptive quadrature of the CRPS integral, frozen before the build
        assert crps_tn(TruncatedNormal(10, 1), 10) == pytest.approx(0.23369497725510913, abs=1e-12)

    def test_untruncated_limit(self):
        phi0 = 1 / np.sqrt(2 * np.pi)
        assert crps_tn(TruncatedNormal(10, 1), 10) == pytest.approx(2 * phi0 - 1 / np.sqrt(np.pi), abs=1e-12)

    def test_observation_at_truncation_point(self):
        assert crps_tn(TruncatedNormal(0.5, 0.8), 0.0) == pytest.approx(0.5354016448313993, abs=1e-8)

    @given(st.floats(-3, 6), st.floats(0.1, 5), st.floats(0, 1), st.floats(0.1, 10))
    def test_positive_homogeneity(self, alpha, sigma, frac, c):
        mu = alpha * sigma
        y = frac * max(mu + 6 * sigma, sigma)
        lhs = crps_tn(TruncatedNormal(c * mu, c * sigma), c * y)
        assert lhs == pytest.approx(c * crps_tn(TruncatedNormal(mu, sigma), y), rel=1e-10, abs=1e-13)

    def test_negative_observation_rejected(self):
        with pytest.raises(DomainError):
            crps_tn(TruncatedNormal(1, 1), -0.1)

    def test_random_grid_against_integration(self):
        rng = np.random.default_rng(11)
        for _ in range(60):
            sigma = rng.uniform(0.2, 4)
            mu = rng.uniform(-3, 6) * sigma
            y = rng.uniform(0, max(mu + 6 * sigma, 0.1))
            assert crps_tn(TruncatedNormal(mu, sigma), y) == pytest.approx(crps_tn_oracle(mu, sigma, y), abs=1e-6)

    def test_proper_at_generating_parameters(self):
        sample = tn_frozen(3.0, 1.5).rvs(size=20000, random_state=np.random.default_rng(5))
        mus = np.linspace(2.4, 3.6, 13)
        sigmas = np.linspace(1.2, 1.8, 13)
        grid = np.array([[crps_tn(TruncatedNormal(m, s), sample).mean() for s in sigmas] for m in mus])
        i, j = np.unravel_index(np.argmin(grid), grid.shape)
        assert abs(mus[i] - 3.0) <= 0.1 and abs(sigmas[j] - 1.5) <= 0.1


class TestCrpsEnsemble:
    def test_single_member_is_absolute_error(self):
        assert crps_ensemble([2.0], 5.0) == 3.0

    def test_perfect_degenerate(self):
        assert crps_ensemble([4.0] * 7, 4.0) == 0.0

    def test_two_members(self):
        assert crps_ensemble([1.0, 3.0], 2.0) == pytest.approx(0.5, abs=1e-15)

    def test_fair_variant(self):
        # mean |x - y| = 1, pairwise term 4 / (2 * 2 * 1)
        assert crps_ensemble([1.0, 3.0], 2.0, fair=True) == pytest.approx(0.0, abs=1e-15)

    def test_matches_integral_of_empirical_cdf(self):
        rng = np.random.default_rng(12)
        for m in (1, 2, 5, 20, 51):
            x = rng.gamma(3, 2, m)
            y = rng.gamma(3, 2)
            assert crps_ensemble(x, y) == pytest.approx(crps_ensemble_oracle(x, y), rel=1e-12, abs=1e-14)

    @given(st.lists(st.floats(0, 50), min_size=1, max_size=30), st.floats(0, 50), st.randoms())
    def test_permutation_invariant(self, members, y, rnd):
        shuffled = list(members)
        rnd.shuffle(shuffled)
        assert crps_ensemble(shuffled, y) == pytest.approx(crps_ensemble(members, y), rel=1e-12, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            crps_ensemble([], 1.0)

    def test_batched(self):
        x = np.array([[1.0, 3.0], [2.0, 2.0]])
        np.testing.assert_allclose(crps_ensemble(x, np.array([2.0, 2.0])), [0.5, 0.0])


class TestBrier:
    def test_certain_and_correct(self):
        assert brier(np.array([1.0, 2.0]), 4.0, 5.0) == 0.0

    def test_certain_and_wrong(self):
        assert brier(np.array([1.0, 2.0]), 6.0, 5.0) == 1.0

    def test_truncated_normal(self):
        # oracle: scipy truncnorm CDF at the threshold, squared
        assert brier(TruncatedNormal(4, 2), 6.0, 5.0) == pytest.approx(0.4682388237732084, rel=1e-12)

    def test_integral_over_thresholds_is_crps(self):
        d = TruncatedNormal(3.0, 1.2)
        y = 4.1
        z = np.linspace(0, 3 + 8 * 1.2, 40001)
        total = np.trapezoid(np.array([brier(d, y, v) for v in z]), z)
        assert total == pytest.approx(crps_tn(d, y), rel=1e-3)


class TestQuantileScore:
    def test_zero_at_quantile(self):
        d = TruncatedNormal(5, 2)
        q = d.quantile(0.8)
        assert quantile_score(d, q, 0.8) == pytest.approx(0.0, abs=1e-12)

    def test_median_level_is_half_absolute_error(self):
        x = np.array([1.0, 4.0, 6.0])
        assert quantile_score(x, 9.0, 0.5) == 0.5 * abs(9.0 - 4.0)

    def test_truncated_normal_reference(self):
        q = bisection_quantile(tn_frozen(10, 1).cdf, 0.9)
        assert quantile_score(TruncatedNormal(10, 1), 12.0, 0.9) == pytest.approx(0.9 * (12 - q), abs=1e-9)
        assert quantile_score(TruncatedNormal(10, 1), 12.0, 0.9) == pytest.approx(0.6466035910098585, abs=1e-9)

    def test_below_quantile_weight(self):
        assert quantile_score(np.array([5.0]), 3.0, 0.9) == pytest.approx(0.1 * 2.0)

    @pytest.mark.parametrize("tau", [0.0, 1.0, 1.2])
    def test_domain(self, tau):
        with pytest.raises(DomainError):
            quantile_score(TruncatedNormal(1, 1), 1.0, tau)


class TestPointErrors:
    def test_perfect(self):
        assert point_errors(np.array([2.0, 2.0]), 2.0) == (0.0, 0.0)

    def test_members(self):
        assert point_errors(np.array([1.0, 2.0, 9.0]), 2.0) == (0.0, 4.0)

    def test_truncated_normal(self):
        d = TruncatedNormal(1.0, 2.0)
        ae, se = point_errors(d, 3.0)
        med = bisection_quantile(tn_frozen(1.0, 2.0).cdf, 0.5)
        assert ae == pytest.approx(abs(3.0 - med), abs=1e-10)
        assert se == pytest.approx((3.0 - tn_frozen(1.0, 2.0).mean()) ** 2, rel=1e-10)


class TestSkillScore:
    def test_self_skill(self):
        assert skill_score(0.7, 0.7) == 0.0

    def test_perfect(self):
        assert skill_score(0.0, 2.0) == 1.0

    def test_worse(self):
        assert skill_score(1.1, 1.0) == pytest.approx(-0.1)

    def test_undefined(self):
        with pytest.raises(UndefinedSkillError):
            skill_score(1.0, 0.0)


class TestScoreAll:
    def test_metric_set(self):
        res = score_all(TruncatedNormal(np.array([3.0, 4.0]), 1.0), np.array([2.0, 5.0]))
        assert list(res) == metric_names()
        assert all(np.all(v >= 0) for v in res.values())

    def test_median_quantile_is_half_absolute_error_exactly(self):
        rng = np.random.default_rng(13)
        members = rng.gamma(2, 3, (500, 11))
        y = rng.gamma(2, 3, 500)
        res = score_all(members, y, taus=(0.5,))
        assert np.array_equal(res["QS@0.5"] * 2, res["AE_median"])

    def test_tn_consistent_with_single_metrics(self):
        d = TruncatedNormal(np.array([3.0, 8.0]), np.array([1.0, 2.0]))
        y = np.array([2.5, 11.0])
        res = score_all(d, y)
        np.testing.assert_array_equal(res["CRPS"], crps_tn(d, y))
        np.testing.assert_allclose(res["BS@10"], (tn_cdf(d, 10.0) - (10.0 >= y)) ** 2)


def _records(values, dates):
    return [
        ScoreRecord("m", f"S{i}", d, 1, "CRPS", v) for i, (v, d) in enumerate(zip(values, dates))
    ]


class TestAggregate:
    def test_single_record(self):
        means, series = aggregate(_records([0.3], [date(2023, 1, 1)]))
        assert means["mean"].iloc[0] == 0.3
        assert series["daily_mean"].tolist() == [0.3]

    def test_two_dates(self):
        d0 = date(2023, 1, 1)
        means, series = aggregate(_records([1.0, 1.0, 2.0, 2.0], [d0, d0, d0 + timedelta(1), d0 + timedelta(1)]))
        assert means["mean"].iloc[0] == 1.5
        assert series["daily_mean"].tolist() == [1.0, 2.0]

    def test_order_invariant_bitwise(self):
        rng = np.random.default_rng(14)
        vals = rng.gamma(2, 1, 500) * 10.0 ** rng.integers(-8, 8, 500)
        dates = [date(2023, 1, 1) + timedelta(int(k)) for k in rng.integers(0, 10, 500)]
        recs = _records(vals, dates)
        perm = rng.permutation(len(recs))
        a = aggregate(recs)
        b = aggregate([recs[i] for i in perm])
        assert a[0]["mean"].tolist() == b[0]["mean"].tolist()
        assert a[1]["daily_mean"].tolist() == b[1]["daily_mean"].tolist()

    def test_empty_group_excluded_with_warning(self):
        recs = _records([1.0], [date(2023, 1, 1)]) + [ScoreRecord("other", "S0", date(2023, 1, 1), 1, "CRPS", np.nan)]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            means, _ = aggregate(recs)
        assert means["model_id"].tolist() == ["m"]
        assert any("no finite scores" in str(w.message) for w in caught)
