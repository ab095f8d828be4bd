import json

import numpy as np
import pandas as pd
import pytest

from windtraj.model import PredictiveEnsemble
from windtraj.verify import (
    CrpsEstimator,
    Functional,
    ScoreReport,
    VerifySettings,
    band_depth_prerank,
    band_depth_preranks,
    crps,
    day_blocks,
    functional_scores,
    interval_coverage_width,
    mae_rmse,
    multivariate_rank,
    pit,
    score_case,
    uniformity_pvalues,
)


def _crps_by_integration(members, y):
    """Exact integral of (F(z) - 1{z >= y})^2, constant between sorted breakpoints."""
    members = np.sort(members)
    z = np.sort(np.append(members, y))
    F = np.searchsorted(members, z[:-1], side="right") / members.size
    H = (z[:-1] >= y).astype(float)
    return float(np.sum((F - H) ** 2 * np.diff(z)))


class TestCrps:
    """Ensemble CRPS estimators."""

    def test_point_mass(self):
        assert crps(np.full(5, 3.0), 3.0) == pytest.approx(0.0)

    def test_two_members(self):
        assert crps(np.array([0.0, 2.0]), 1.0) == pytest.approx(0.5)

    def test_matches_numerical_integration(self, rng):
        for _ in range(100):
            m = int(rng.integers(2, 21))
            members = rng.normal(size=m)
            y = rng.normal()
            assert crps(members, y) == pytest.approx(_crps_by_integration(members, y), rel=1e-6)

    def test_bounded_by_mean_absolute_deviation(self, rng):
        members = rng.gamma(2.0, size=50)
        y = 1.3
        assert crps(members, y) <= np.abs(members - y).mean()

    def test_fair_not_above_ensemble(self, rng):
        members = rng.normal(size=30)
        fair = crps(members, 0.2, CrpsEstimator.FAIR)
        assert fair <= crps(members, 0.2)

    def test_fair_two_members(self):
        # 1 - 4 / (2 * 2 * 1)
        assert crps(np.array([0.0, 2.0]), 1.0, "fair") == pytest.approx(0.0)

    def test_vectorized_over_leads(self, rng):
        members = rng.normal(size=(4, 25))
        y = rng.normal(size=4)
        out = crps(members, y)
        assert out.shape == (4,)
        assert out[2] == pytest.approx(crps(members[2], y[2]))

    def test_needs_two_members(self):
        with pytest.raises(ValueError):
            crps(np.array([1.0]), 1.0)

    @pytest.mark.slow
    def test_standard_normal(self):
        members = np.random.default_rng(12).standard_normal(100_000)
        expected = np.sqrt(2 / np.pi) - 1 / np.sqrt(np.pi)
        assert crps(members, 0.0) == pytest.approx(expected, abs=0.003)


class TestPointScores:
    """Median absolute error and mean squared error."""

    def test_centered(self):
        abs_err, sq_err = mae_rmse(np.array([1.0, 2.0, 3.0]), 2.0)
        assert (abs_err, sq_err) == (0.0, 0.0)

    def test_two_members(self):
        abs_err, sq_err = mae_rmse(np.array([0.0, 10.0]), 0.0)
        assert (abs_err, sq_err) == (5.0, 25.0)


class TestPit:
    """Randomized probability integral transform."""

    def test_below_all(self, rng):
        values = [pit(np.arange(1.0, 10.0), 0.0, rng) for _ in range(50)]
        assert all(0.0 <= v <= 0.1 for v in values)

    def test_above_all(self, rng):
        values = [pit(np.arange(1.0, 10.0), 100.0, rng) for _ in range(50)]
        assert all(0.9 <= v <= 1.0 for v in values)

    def test_exchangeable_is_uniform(self):
        rng = np.random.default_rng(21)
        samples = rng.normal(size=(10_000, 20))
        values = np.array([pit(row[1:], row[0], rng) for row in samples])
        ks, _ = uniformity_pvalues(values, np.array([]), 20)
        assert ks > 0.01


class TestCoverage:
    """Central prediction intervals."""

    def test_degenerate(self):
        covered, width = interval_coverage_width(np.full(20, 4.0), 4.0)
        assert covered and width == 0.0

    def test_uniform_grid(self):
        covered, width = interval_coverage_width(np.arange(1.0, 1001.0), 500.0)
        assert covered
        assert width == pytest.approx(800.0, abs=1.0)

    def test_monotone_in_level(self, rng):
        members = rng.normal(size=100)
        for y in rng.normal(scale=2.0, size=50):
            narrow, w80 = interval_coverage_width(members, y, 0.8)
            wide, w90 = interval_coverage_width(members, y, 0.9)
            assert wide >= narrow
            assert w90 >= w80

    def test_too_few_members(self):
        with pytest.raises(ValueError):
            interval_coverage_width(np.arange(5.0), 1.0)


class TestBandDepth:
    """Pre-ranks and multivariate ranks."""

    def test_below_all_members(self, rng):
        ensemble = rng.uniform(1.0, 2.0, size=(9, 6))
        assert band_depth_prerank(np.zeros(6), ensemble) == pytest.approx(9.0)

    def test_above_all_members(self, rng):
        ensemble = rng.uniform(1.0, 2.0, size=(9, 6))
        assert band_depth_prerank(np.full(6, 5.0), ensemble) == pytest.approx(9.0)

    def test_hand_evaluation(self):
        ensemble = np.array([[0.0, 0.0], [2.0, 2.0]])
        assert band_depth_prerank(np.array([1.0, 1.0]), ensemble) == pytest.approx(3.0)

    def test_all_preranks(self):
        values = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
        assert band_depth_preranks(values).tolist() == pytest.approx([2.0, 3.0, 2.0])

    def test_rank_range(self, rng):
        for _ in range(20):
            rank = multivariate_rank(rng.normal(size=4), rng.normal(size=(7, 4)), rng)
            assert 1 <= rank <= 8

    def test_outlying_observation_at_extreme_bin(self, rng):
        samples = rng.normal(size=(19, 10))
        ranks = [multivariate_rank(np.full(10, 100.0), samples, rng) for _ in range(20)]
        # the outward trajectory has the lowest possible pre-rank
        assert all(r <= 5 for r in ranks)

    def test_ties_randomized(self, rng):
        ensemble = np.zeros((3, 4))
        ranks = {multivariate_rank(np.zeros(4), ensemble, rng) for _ in range(200)}
        assert ranks == {1, 2, 3, 4}

    def test_two_members_symmetric(self):
        rng = np.random.default_rng(5)
        ranks = np.array(
            [
                multivariate_rank(rng.normal(size=3), rng.normal(size=(1, 3)), rng)
                for _ in range(2000)
            ]
        )
        assert set(ranks) == {1, 2}
        assert np.mean(ranks == 1) == pytest.approx(0.5, abs=0.05)

    @pytest.mark.slow
    def test_exchangeable_ranks_uniform(self):
        rng = np.random.default_rng(33)
        m = 20
        ranks = np.array(
            [
                multivariate_rank(s[0], s[1:], rng)
                for s in rng.multivariate_normal(np.zeros(5), np.eye(5) + 0.5, size=(10_000, m))
            ]
        )
        _, chi2 = uniformity_pvalues(np.array([]), ranks, m)
        assert chi2 > 0.01


class TestFunctionals:
    """Scores of trajectory sums and maxima."""

    def test_sum(self):
        ensemble = PredictiveEnsemble(None, np.array([[1.0, 1.0], [3.0, 3.0]]))
        _, _, score = functional_scores(ensemble, np.array([2.0, 2.0]), Functional.SUM)
        assert score == pytest.approx(1.0)

    def test_degenerate_max(self):
        y = np.array([1.0, 4.0, 2.0])
        ensemble = PredictiveEnsemble(None, np.tile(y, (5, 1)))
        assert functional_scores(ensemble, y, "max") == pytest.approx((0.0, 0.0, 0.0))

    def test_length_mismatch(self):
        ensemble = PredictiveEnsemble(None, np.ones((3, 2)))
        with pytest.raises(ValueError):
            functional_scores(ensemble, np.ones(3), Functional.SUM)


class TestScoreReport:
    """Aggregation over cases and forecast days."""

    def test_day_blocks(self):
        assert day_blocks(72) == [slice(0, 24), slice(24, 48), slice(48, 72)]
        assert day_blocks(30) == [slice(0, 24), slice(24, 30)]
        assert day_blocks(6) == [slice(0, 6)]

    def _cases(self, rng, n=40, m=19, T=48):
        settings = VerifySettings()
        start = pd.Timestamp("2012-01-01", tz="UTC")
        cases = []
        for day in range(n):
            members = rng.gamma(2.0, 100.0, size=(m, T))
            y = rng.gamma(2.0, 100.0, size=T)
            ensemble = PredictiveEnsemble(start + pd.Timedelta(days=day), members)
            cases.append(score_case(ensemble, y, rng, settings))
        return cases, settings

    def test_report_layout(self, rng):
        cases, settings = self._cases(rng)
        report = ScoreReport.from_cases(cases, settings)
        assert report.n_cases == 40
        assert list(report.per_lead.columns) == ["lead_h", "mae", "rmse", "crps"]
        assert len(report.per_lead) == 48
        assert report.per_day["day"].tolist() == [1, 2]
        assert report.pit_hist.sum() == 40 * 24
        assert report.pit_hist.size == 20
        assert report.mv_rank_hist.sum() == 40
        assert report.mv_rank_hist.size == 20
        assert set(report.functional) == {"sum", "max"}
        assert np.all((0 <= report.coverage) & (report.coverage <= 1))

    def test_day_rmse_from_mean_square(self, rng):
        cases, settings = self._cases(rng, n=5)
        report = ScoreReport.from_cases(cases, settings)
        sq = np.vstack([c.sq_err for c in cases])[:, :24]
        assert report.per_day["rmse"].iloc[0] == pytest.approx(np.sqrt(sq.mean()))
        day_one = report.per_lead["mae"].iloc[:24].mean()
        assert report.per_day["mae"].iloc[0] == pytest.approx(day_one)

    def test_summary_serializable(self, rng):
        cases, settings = self._cases(rng, n=5)
        json.dumps(ScoreReport.from_cases(cases, settings).summary())

    def test_empty(self):
        with pytest.raises(ValueError):
            ScoreReport.from_cases([])

    def test_observation_shape_checked(self, rng):
        ensemble = PredictiveEnsemble(None, np.ones((5, 4)))
        with pytest.raises(ValueError):
            score_case(ensemble, np.ones(3), rng)
