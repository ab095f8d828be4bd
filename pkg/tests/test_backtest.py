import json

import numpy as np
import pandas as pd
import pytest

from windtraj.backtest import (
    MARGINAL_SCORE_COLUMNS,
    RANK_HIST_COLUMNS,
    Backtester,
    Combination,
    WindowForecast,
    audit_leakage,
    copula_history,
    day_streams,
    read_ensembles,
    write_backtest,
)
from windtraj.config import RunConfig
from windtraj.errors import DataError
from windtraj.model import ModelVariant, PredictiveEnsemble
from windtraj.synth import SynthConfig, generate

START = pd.Timestamp("2011-01-01", tz="UTC")


def _config(tmp_path, **sections):
    raw = {
        "data": {"T": 6, "window_days": 10, "eval_start": "2011-01-26"},
        "model": {
            "variants": ["full"],
            "n_gibbs": 60,
            "n_burn": 20,
            "m_pred": 19,
            "log_every": 0,
        },
        "copula": {"window_days": 10, "min_cases": 5},
        "paths": {"output_dir": str(tmp_path / "results")},
    }
    for name, values in sections.items():
        raw.setdefault(name, {}).update(values)
    return RunConfig.from_dict(raw)


@pytest.fixture(scope="module")
def cases():
    return generate(SynthConfig(T=6, n_days=40, seed=7))


@pytest.fixture(scope="module")
def result(cases, tmp_path_factory):
    config = _config(tmp_path_factory.mktemp("backtest"))
    return config, Backtester(config, cases).run()


class TestHelpers:
    """Building blocks of the rolling backtest."""

    def test_day_streams(self):
        a = [g.standard_normal() for g in day_streams(1, START)]
        b = [g.standard_normal() for g in day_streams(1, START)]
        c = [g.standard_normal() for g in day_streams(1, START + pd.Timedelta(days=1))]
        assert a == b
        assert len(set(a)) == 3
        assert a != c

    def test_day_streams_keyed_on_timestamp(self):
        noon = [g.standard_normal() for g in day_streams(1, START + pd.Timedelta(hours=12))]
        midnight = [g.standard_normal() for g in day_streams(1, START)]
        assert noon != midnight
        berlin = START.tz_convert("Europe/Berlin")
        assert [g.standard_normal() for g in day_streams(1, berlin)] == midnight
        naive = START.tz_localize(None)
        assert [g.standard_normal() for g in day_streams(1, naive)] == midnight

    def test_leakage_audit(self):
        ok = WindowForecast(START + pd.Timedelta(days=1), START)
        assert audit_leakage([ok, ok]) == 2
        leaky = WindowForecast(START, START)
        with pytest.raises(DataError, match="ends at"):
            audit_leakage([ok, leaky])

    def test_copula_history(self):
        days = [START + pd.Timedelta(days=d) for d in range(6)]
        ensemble = PredictiveEnsemble(None, np.ones((3, 2)))
        marginals = {t: ensemble for t in days}
        observations = {t: np.ones(2) for t in days if t != days[3]}
        history = copula_history(days[5], marginals, observations, 3)
        assert len(history) == 3
        # day 3 has no observations and day 5 is the target itself
        assert len(copula_history(days[5], marginals, observations, 10)) == 4

    def test_combination_names(self):
        combo = Combination(ModelVariant.IND_ERRORS, "copula")
        assert combo.name == "ind_errors_copula"
        assert combo.label == "Ind Errors Copula"


class TestBacktester:
    """The rolling fit-predict-score loop."""

    def test_common_days(self, result):
        _, outcome = result
        assert len(outcome.days) == 15
        assert outcome.days[0] == START + pd.Timedelta(days=25)
        for by_day in outcome.ensembles.values():
            assert set(outcome.days) <= set(by_day)

    def test_every_combination_scored(self, result):
        _, outcome = result
        names = sorted(combo.name for combo in outcome.reports)
        assert names == ["full_copula", "full_none"]
        for report in outcome.reports.values():
            assert report.n_cases == 15
            assert report.pit_hist.sum() == 15 * 6
            assert report.mv_rank_hist.size == 20

    def test_copula_ensembles_marked(self, result):
        _, outcome = result
        copula = outcome.ensembles[Combination(ModelVariant.FULL, "copula")]
        assert all(e.postproc == "copula" for e in copula.values())
        assert all(e.m == 19 for e in copula.values())

    def test_leakage_audited(self, result):
        _, outcome = result
        # fifteen targets plus ten earlier windows for the copula
        assert outcome.n_audited == 25

    def test_deterministic(self, result, cases):
        config, outcome = result
        again = Backtester(config, cases).run()
        day = outcome.days[3]
        for combo, by_day in outcome.ensembles.items():
            repeated = again.ensembles[combo][day]
            assert np.array_equal(by_day[day].trajectories, repeated.trajectories)

    def test_in_sample_copula(self, cases, tmp_path):
        config = _config(tmp_path, copula={"pit_source": "in_sample"})
        outcome = Backtester(config, cases).run()
        assert len(outcome.days) == 15
        assert outcome.n_audited == 15

    def test_marginal_only(self, cases, tmp_path):
        config = _config(
            tmp_path,
            model={"variants": ["fully_ind", "ind_errors"], "postproc": ["none"]},
            data={"eval_start": "2011-02-05"},
        )
        outcome = Backtester(config, cases).run()
        assert len(outcome.days) == 5
        assert len(outcome.reports) == 2

    def test_window_sweep(self, cases, tmp_path):
        config = _config(tmp_path, model={"postproc": ["none"]}, data={"eval_start": "2011-02-07"})
        table = Backtester(config, cases).window_sweep([5, 10])
        assert list(table.columns) == ["window_days", "variant", "day", "mae", "rmse", "crps"]
        assert table["window_days"].tolist() == [5, 10]

    def test_wrong_dimension(self, cases, tmp_path):
        with pytest.raises(DataError, match="T="):
            Backtester(_config(tmp_path, data={"T": 12}), cases)

    def test_not_enough_history(self, cases, tmp_path):
        config = _config(tmp_path, data={"window_days": 50, "eval_start": None})
        with pytest.raises(DataError, match="history"):
            Backtester(config, cases).run()


class TestOutputs:
    """Files written by a backtest."""

    def test_layout(self, result):
        config, outcome = result
        out = write_backtest(outcome, config)
        header = (out / "marginal_scores.csv").read_text().splitlines()[0]
        assert header == ",".join(MARGINAL_SCORE_COLUMNS)
        assert (out / "rank_hist.csv").read_text().splitlines()[0] == ",".join(RANK_HIST_COLUMNS)
        for name in ("functional_scores.csv", "per_lead.csv", "pit_hist.csv", "summary.json"):
            assert (out / name).exists()

        scores = pd.read_csv(out / "marginal_scores.csv")
        assert set(scores["postproc"]) == {"none", "copula"}
        assert scores["day"].tolist() == [1, 1]

        summary = json.loads((out / "summary.json").read_text())
        assert set(summary) == {"full_none", "full_copula"}

        manifest = json.loads((out / "full_copula" / "manifest.json").read_text())
        assert manifest["config_hash"] == config.config_hash()
        assert manifest["n_days"] == 15

        ensembles = read_ensembles(out / "full_copula")
        assert sorted(ensembles) == outcome.days
        assert all(e.postproc == "copula" for e in ensembles.values())


def _extreme_share(hist, n_bins=10):
    """Share of multivariate ranks in the outermost of ``n_bins`` merged bins."""
    coarse = np.array([chunk.sum() for chunk in np.array_split(hist, n_bins)])
    return (coarse[0] + coarse[-1]) / coarse.sum()


@pytest.fixture(scope="module")
def long_cases():
    return generate(SynthConfig(T=24, n_days=465, seed=21))


@pytest.fixture(scope="module")
def calibration_run(long_cases, tmp_path_factory):
    config = _config(
        tmp_path_factory.mktemp("calibration"),
        data={"T": 24, "window_days": 100, "eval_start": None},
        model={"postproc": ["none"], "n_gibbs": 1500, "n_burn": 500, "m_pred": 999},
        # one lead per day keeps the PIT values independent
        verify={"pit_leads": 1},
        run={"seed": 3, "n_jobs": -1},
    )
    return Backtester(config, long_cases).run()


@pytest.fixture(scope="module")
def pattern_run(long_cases, tmp_path_factory):
    eval_start = START + pd.Timedelta(days=160)
    config = _config(
        tmp_path_factory.mktemp("pattern"),
        data={"T": 24, "window_days": 100, "eval_start": eval_start.strftime("%Y-%m-%d")},
        model={
            "variants": ["full", "ind_errors", "fully_ind"],
            "postproc": ["none", "copula"],
            "n_gibbs": 1000,
            "n_burn": 500,
            "m_pred": 199,
        },
        copula={"window_days": 60, "min_cases": 30},
        run={"seed": 4, "n_jobs": -1},
    )
    return Backtester(config, long_cases).run()


@pytest.mark.slow
class TestSyntheticAcceptance:
    """Calibration and copula gains on data drawn from the model itself."""

    def test_self_calibration(self, calibration_run):
        report = calibration_run.reports[Combination(ModelVariant.FULL, "none")]
        assert len(calibration_run.days) == 365
        assert report.pit_ks_pvalue > 0.01
        assert report.rank_chi2_pvalue > 0.01
        assert 0.77 <= report.coverage[0] <= 0.83

    def test_independent_errors_miscalibrated(self, pattern_run):
        for variant in (ModelVariant.IND_ERRORS, ModelVariant.FULLY_IND):
            report = pattern_run.reports[Combination(variant, "none")]
            assert report.rank_chi2_pvalue < 1e-3
            assert _extreme_share(report.mv_rank_hist) > 0.4

    def test_dependent_ensembles_near_uniform(self, pattern_run):
        for combo, report in pattern_run.reports.items():
            if combo.postproc == "copula" or combo.variant == ModelVariant.FULL:
                assert _extreme_share(report.mv_rank_hist) < 0.3, combo.label

    def test_copula_improves_total_energy(self, pattern_run):
        for variant in (ModelVariant.IND_ERRORS, ModelVariant.FULLY_IND):
            base = pattern_run.reports[Combination(variant, "none")].functional["sum"][2]
            post = pattern_run.reports[Combination(variant, "copula")].functional["sum"][2]
            assert post <= 0.9 * base
