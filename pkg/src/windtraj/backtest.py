"""
Rolling backtests of the model variants with and without copula post-processing.

Every eligible target day is forecast from its own training window, so each
forecast is out of sample. Marginal forecasts of the days before a target
provide the latent scores of its copula. All combinations are scored on the
same set of days and written as CSV score tables, histogram tables and a
JSON summary, with one directory of ensembles and a manifest per
(variant, postproc) pair.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from . import __version__
from .config import RunConfig
from .copula import copula_ensemble, fit_copula, latent_scores
from .errors import DataError, NumericalError
from .gwishart import Graph
from .ingest import ForecastCase, TrainingWindow, build_windows, case_filename
from .model import (
    ModelConfig,
    ModelVariant,
    PosteriorDraw,
    PredictiveEnsemble,
    gibbs_fit,
    inverse_transform,
    predict,
    predict_latent,
    thin_evenly,
)
from .verify import CaseScores, ScoreReport, VerifySettings, score_case

logger = logging.getLogger(__name__)

MARGINAL_SCORE_COLUMNS = ["variant", "postproc", "day", "mae", "rmse", "crps", "coverage", "width"]
FUNCTIONAL_SCORE_COLUMNS = ["variant", "postproc", "functional", "mae", "rmse", "crps"]
PER_LEAD_COLUMNS = ["variant", "postproc", "lead_h", "mae", "rmse", "crps"]
PIT_HIST_COLUMNS = ["variant", "postproc", "target", "bin", "count"]
RANK_HIST_COLUMNS = ["variant", "postproc", "rank", "count"]
WINDOW_SWEEP_COLUMNS = ["window_days", "variant", "day", "mae", "rmse", "crps"]


@dataclass(frozen=True)
class Combination:
    """One (model variant, post-processing) pair."""

    variant: ModelVariant
    postproc: str

    @property
    def name(self) -> str:
        return f"{self.variant.value}_{self.postproc}"

    @property
    def label(self) -> str:
        suffix = " Copula" if self.postproc == "copula" else ""
        return self.variant.label + suffix


def day_streams(seed: int, init_time: pd.Timestamp) -> Tuple[np.random.Generator, ...]:
    """Independent marginal, copula and scoring streams of one forecast initialization."""
    stamp = pd.Timestamp(init_time)
    stamp = stamp.tz_localize("UTC") if stamp.tzinfo is None else stamp.tz_convert("UTC")
    seconds = (stamp - stamp.normalize()) // pd.Timedelta(seconds=1)
    children = np.random.SeedSequence([seed, stamp.toordinal(), seconds]).spawn(3)
    return tuple(np.random.default_rng(s) for s in children)


@dataclass(frozen=True, eq=False)
class WindowForecast:
    """Output of one training window: the marginal ensemble and, optionally, its copula."""

    init_time: pd.Timestamp
    train_end: pd.Timestamp
    marginal: Optional[PredictiveEnsemble] = None
    copula: Optional[PredictiveEnsemble] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.marginal is not None


def in_sample_copula(
    draws: Sequence[PosteriorDraw],
    window: TrainingWindow,
    model_config: ModelConfig,
    graph: Graph,
    marginal: PredictiveEnsemble,
    rng: np.random.Generator,
    n_cases: Optional[int] = None,
) -> PredictiveEnsemble:
    """Copula ensemble whose latent scores come from the target's own posterior."""
    chosen = thin_evenly(draws, model_config.m_pred)
    history = window.cases if n_cases is None else window.cases[-n_cases:]
    ensembles = [
        PredictiveEnsemble(
            case.init_time,
            inverse_transform(predict_latent(chosen, case.x_w, model_config.powers, rng)),
        )
        for case in history
    ]
    observed = np.vstack([case.y for case in history])
    fit = fit_copula(latent_scores(ensembles, observed, rng), graph)
    return copula_ensemble(fit, marginal, rng)


def forecast_window(
    window: TrainingWindow,
    model_config: ModelConfig,
    seed: int,
    in_sample_graph: Optional[Graph] = None,
    in_sample_cases: Optional[int] = None,
) -> WindowForecast:
    """Fit one window and forecast its target; numerical failures skip the day."""
    init_time = window.target.init_time
    train_end = window.cases[-1].init_time
    marginal_rng, copula_rng, _ = day_streams(seed, init_time)
    try:
        draws = gibbs_fit(window, model_config, marginal_rng)
        marginal = predict(draws, window.target.x_w, model_config, marginal_rng, init_time)
        copula = None
        if in_sample_graph is not None:
            copula = in_sample_copula(
                draws, window, model_config, in_sample_graph, marginal, copula_rng, in_sample_cases
            )
    except NumericalError as exc:
        logger.warning("Skipping %s: %s (%s)", init_time, exc, exc.diagnostics)
        return WindowForecast(init_time, train_end, error=str(exc))
    return WindowForecast(init_time, train_end, marginal, copula)


def out_of_sample_copula(
    marginal: PredictiveEnsemble,
    history: Sequence[Tuple[PredictiveEnsemble, np.ndarray]],
    graph: Graph,
    rng: np.random.Generator,
) -> PredictiveEnsemble:
    """Copula ensemble fitted on earlier out-of-sample forecasts and their observations."""
    ensembles = [ensemble for ensemble, _ in history]
    observed = np.vstack([y for _, y in history])
    fit = fit_copula(latent_scores(ensembles, observed, rng), graph)
    return copula_ensemble(fit, marginal, rng)


def _copula_job(day, marginal, history, graph, seed):
    _, copula_rng, _ = day_streams(seed, day)
    try:
        return day, out_of_sample_copula(marginal, history, graph, copula_rng)
    except NumericalError as exc:
        logger.warning("Skipping copula for %s: %s", day, exc)
        return day, None


def copula_history(
    init_time: pd.Timestamp,
    marginals: Dict[pd.Timestamp, PredictiveEnsemble],
    observations: Dict[pd.Timestamp, np.ndarray],
    window_days: int,
) -> List[Tuple[PredictiveEnsemble, np.ndarray]]:
    """The most recent earlier marginal forecasts with complete observations."""
    earlier = sorted(t for t in marginals if t < init_time and t in observations)
    return [(marginals[t], observations[t]) for t in earlier[-window_days:]]


def audit_leakage(forecasts: Iterable[WindowForecast]) -> int:
    """Raise if any training window does not end strictly before its target."""
    n = 0
    for forecast in forecasts:
        if not forecast.train_end < forecast.init_time:
            raise DataError(
                f"Training window for {forecast.init_time} ends at {forecast.train_end}"
            )
        n += 1
    return n


def score_ensembles(
    ensembles: Dict[pd.Timestamp, PredictiveEnsemble],
    observations: Dict[pd.Timestamp, np.ndarray],
    settings: VerifySettings,
    seed: int,
    days: Optional[Sequence[pd.Timestamp]] = None,
) -> ScoreReport:
    """Score ensembles day by day and aggregate them into a report."""
    days = sorted(ensembles) if days is None else list(days)
    cases: List[CaseScores] = []
    for day in days:
        if day not in observations:
            raise DataError(f"No observations for {day}")
        _, _, score_rng = day_streams(seed, day)
        cases.append(score_case(ensembles[day], observations[day], score_rng, settings))
    return ScoreReport.from_cases(cases, settings)


@dataclass(eq=False)
class BacktestResult:
    """Ensembles and scores of every requested combination on a common set of days."""

    days: List[pd.Timestamp]
    ensembles: Dict[Combination, Dict[pd.Timestamp, PredictiveEnsemble]]
    reports: Dict[Combination, ScoreReport]
    skipped: Dict[Combination, List[pd.Timestamp]] = field(default_factory=dict)
    n_audited: int = 0


class Backtester:
    """
    Rolling fit-predict-score engine.

    Parameters:
    -----------
    config : RunConfig
        Resolved run configuration
    cases : sequence of ForecastCase
        All available cases, sorted by init_time
    """

    def __init__(self, config: RunConfig, cases: Sequence[ForecastCase]):
        self.config = config
        self.cases = sorted(cases, key=lambda c: c.init_time)
        if not self.cases:
            raise DataError("No forecast cases to backtest")
        if self.cases[0].T != config.data.T:
            raise DataError(
                f"Cases have T={self.cases[0].T}, configuration expects {config.data.T}"
            )
        self.observations = {c.init_time: c.y for c in self.cases if c.has_observations}

    def _in_eval_range(self, init_time: pd.Timestamp) -> bool:
        start, end = self.config.data.eval_start, self.config.data.eval_end
        day = init_time.normalize()
        if start is not None and day < pd.Timestamp(start, tz="UTC"):
            return False
        if end is not None and day > pd.Timestamp(end, tz="UTC"):
            return False
        return True

    def target_windows(self, window_days: Optional[int] = None) -> List[TrainingWindow]:
        """Windows whose observed targets lie in the evaluation range."""
        window_days = window_days or self.config.data.window_days
        in_range = [
            w
            for w in build_windows(self.cases, window_days)
            if self._in_eval_range(w.target.init_time)
        ]
        windows = [w for w in in_range if w.target.has_observations]
        for w in in_range:
            if not w.target.has_observations:
                logger.warning("Skipping %s: incomplete observations", w.target.init_time)
        if not windows:
            raise DataError(
                f"No target day in the evaluation range has {window_days} days of history"
            )
        return windows

    def _marginal_windows(self, window_days: int) -> List[TrainingWindow]:
        """Target windows plus the earlier ones that feed the out-of-sample copula."""
        targets = self.target_windows(window_days)
        if not self._needs_history():
            return targets
        all_windows = build_windows(self.cases, window_days)
        first = targets[0].target.init_time
        earlier = [w for w in all_windows if w.target.init_time < first]
        earlier = earlier[-self.config.copula.window_days :]
        return earlier + targets

    def _needs_history(self) -> bool:
        return (
            "copula" in self.config.model.postproc
            and self.config.copula.pit_source == "out_of_sample"
        )

    def _parallel(self) -> Parallel:
        return Parallel(n_jobs=self.config.run.n_jobs)

    def run_marginal(
        self, variant: ModelVariant, windows: Sequence[TrainingWindow]
    ) -> Dict[pd.Timestamp, WindowForecast]:
        """Fit and forecast every window, fanning out over the worker pool."""
        model_config = self.config.model_config(variant)
        in_sample = (
            "copula" in self.config.model.postproc
            and self.config.copula.pit_source == "in_sample"
        )
        graph = self.config.copula_graph() if in_sample else None
        logger.info("%s: forecasting %d windows", variant.label, len(windows))
        results = self._parallel()(
            delayed(forecast_window)(
                w, model_config, self.config.run.seed, graph, self.config.copula.window_days
            )
            for w in windows
        )
        return {r.init_time: r for r in results}

    def run_copula(
        self,
        marginals: Dict[pd.Timestamp, PredictiveEnsemble],
        targets: Sequence[pd.Timestamp],
    ) -> Dict[pd.Timestamp, PredictiveEnsemble]:
        """Out-of-sample copula ensembles of the target days that have enough history."""
        copula_cfg = self.config.copula
        graph = self.config.copula_graph()
        jobs = []
        for day in targets:
            if day not in marginals:
                continue
            history = copula_history(day, marginals, self.observations, copula_cfg.window_days)
            if len(history) < copula_cfg.min_cases:
                logger.warning(
                    "Skipping copula for %s: %d earlier forecasts, need %d",
                    day,
                    len(history),
                    copula_cfg.min_cases,
                )
                continue
            jobs.append((day, history))

        results = self._parallel()(
            delayed(_copula_job)(day, marginals[day], history, graph, self.config.run.seed)
            for day, history in jobs
        )
        return {day: ens for day, ens in results if ens is not None}

    def combinations(self) -> List[Combination]:
        return [
            Combination(ModelVariant(v), p)
            for v in self.config.model.variants
            for p in self.config.model.postproc
        ]

    def forecast(
        self, window_days: Optional[int] = None
    ) -> Tuple[Dict[Combination, Dict[pd.Timestamp, PredictiveEnsemble]], List[pd.Timestamp], int]:
        """Ensembles of every combination, the common scored days and the audit count."""
        window_days = window_days or self.config.data.window_days
        windows = self._marginal_windows(window_days)
        targets = [w.target.init_time for w in self.target_windows(window_days)]
        ensembles: Dict[Combination, Dict[pd.Timestamp, PredictiveEnsemble]] = {}
        n_audited = 0

        for variant_name in self.config.model.variants:
            variant = ModelVariant(variant_name)
            forecasts = self.run_marginal(variant, windows)
            n_audited += audit_leakage(forecasts.values())
            marginals = {t: f.marginal for t, f in forecasts.items() if f.ok}
            for postproc in self.config.model.postproc:
                combo = Combination(variant, postproc)
                if postproc == "none":
                    ensembles[combo] = {t: marginals[t] for t in targets if t in marginals}
                elif self.config.copula.pit_source == "in_sample":
                    ensembles[combo] = {
                        t: forecasts[t].copula
                        for t in targets
                        if t in forecasts and forecasts[t].copula is not None
                    }
                else:
                    ensembles[combo] = self.run_copula(marginals, targets)

        common = [t for t in targets if all(t in e for e in ensembles.values())]
        if not common:
            raise DataError("No target day was forecast by every requested combination")
        return ensembles, common, n_audited

    def run(self) -> BacktestResult:
        """Forecast and score all requested combinations."""
        ensembles, days, n_audited = self.forecast()
        settings = self.config.verify_settings()
        reports, skipped = {}, {}
        all_targets = {t for e in ensembles.values() for t in e}
        for combo, by_day in ensembles.items():
            skipped[combo] = sorted(all_targets - set(by_day))
            reports[combo] = score_ensembles(
                by_day, self.observations, settings, self.config.run.seed, days
            )
            logger.info(
                "%s: %d days scored, day-1 CRPS %.1f MW",
                combo.label,
                len(days),
                reports[combo].per_day["crps"].iloc[0],
            )
        logger.info("Leakage audit passed for %d forecasts", n_audited)
        return BacktestResult(days, ensembles, reports, skipped, n_audited)

    def window_sweep(self, lengths: Sequence[int]) -> pd.DataFrame:
        """
        Marginal scores for several training-window lengths.

        All lengths are scored on the target days available to the longest one.
        """
        if not lengths:
            raise ValueError("window_sweep needs at least one window length")
        common = {w.target.init_time for w in self.target_windows(max(lengths))}
        settings = self.config.verify_settings()
        rows = []
        for length in sorted(lengths):
            windows = [w for w in self.target_windows(length) if w.target.init_time in common]
            for variant_name in self.config.model.variants:
                variant = ModelVariant(variant_name)
                forecasts = self.run_marginal(variant, windows)
                audit_leakage(forecasts.values())
                marginals = {t: f.marginal for t, f in forecasts.items() if f.ok}
                report = score_ensembles(
                    marginals, self.observations, settings, self.config.run.seed
                )
                for _, r in report.per_day.iterrows():
                    rows.append((length, variant.value, int(r.day), r.mae, r.rmse, r.crps))
        return pd.DataFrame(rows, columns=WINDOW_SWEEP_COLUMNS)


def write_manifest(
    directory: Union[str, Path], combo: Combination, config: RunConfig, n_days: int
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "variant": combo.variant.value,
        "postproc": combo.postproc,
        "config_hash": config.config_hash(),
        "version": __version__,
        "n_days": n_days,
    }
    path = directory / "manifest.json"
    with open(path, "w") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
    return path


def write_ensembles(
    directory: Union[str, Path], ensembles: Dict[pd.Timestamp, PredictiveEnsemble]
) -> List[Path]:
    directory = Path(directory) / "ensembles"
    return [ensembles[t].to_csv(directory / case_filename(t)) for t in sorted(ensembles)]


def read_ensembles(directory: Union[str, Path]) -> Dict[pd.Timestamp, PredictiveEnsemble]:
    """Read every ensemble CSV of a combination directory, keyed by init_time."""
    directory = Path(directory)
    ensemble_dir = directory / "ensembles" if (directory / "ensembles").is_dir() else directory
    paths = sorted(ensemble_dir.glob("*.csv"))
    if not paths:
        raise DataError(f"No ensemble files found in {ensemble_dir}")
    out = {}
    for path in paths:
        try:
            init_time = pd.to_datetime(path.stem, format="%Y%m%dT%H%MZ", utc=True)
        except ValueError as exc:
            raise DataError(f"{path}: file name is not an init_time") from exc
        out[init_time] = PredictiveEnsemble.from_csv(path, init_time)
    return out


def report_tables(reports: Dict[Combination, ScoreReport]) -> Dict[str, pd.DataFrame]:
    """The score and histogram tables of several combinations."""
    marginal, functional, per_lead, pit_hist, rank_hist = [], [], [], [], []
    for combo, report in reports.items():
        key = (combo.variant.value, combo.postproc)
        for _, r in report.per_day.iterrows():
            marginal.append(key + (int(r.day), r.mae, r.rmse, r.crps, r.coverage, r.width))
        for name, (mae, rmse, crps) in report.functional.items():
            functional.append(key + (name, mae, rmse, crps))
        for _, r in report.per_lead.iterrows():
            per_lead.append(key + (int(r.lead_h), r.mae, r.rmse, r.crps))
        for b, count in enumerate(report.pit_hist, start=1):
            pit_hist.append(key + ("lead", b, int(count)))
        for name, hist in report.functional_pit_hist.items():
            for b, count in enumerate(hist, start=1):
                pit_hist.append(key + (name, b, int(count)))
        for rank, count in enumerate(report.mv_rank_hist, start=1):
            rank_hist.append(key + (rank, int(count)))
    return {
        "marginal_scores.csv": pd.DataFrame(marginal, columns=MARGINAL_SCORE_COLUMNS),
        "functional_scores.csv": pd.DataFrame(functional, columns=FUNCTIONAL_SCORE_COLUMNS),
        "per_lead.csv": pd.DataFrame(per_lead, columns=PER_LEAD_COLUMNS),
        "pit_hist.csv": pd.DataFrame(pit_hist, columns=PIT_HIST_COLUMNS),
        "rank_hist.csv": pd.DataFrame(rank_hist, columns=RANK_HIST_COLUMNS),
    }


def write_reports(
    reports: Dict[Combination, ScoreReport], directory: Union[str, Path]
) -> List[Path]:
    """Write the score tables and ``summary.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, table in report_tables(reports).items():
        path = directory / name
        table.to_csv(path, index=False, float_format="%.6g")
        paths.append(path)
    summary = {combo.name: report.summary() for combo, report in reports.items()}
    path = directory / "summary.json"
    with open(path, "w") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
    paths.append(path)
    logger.info("Wrote %d report files to %s", len(paths), directory)
    return paths


def write_backtest(result: BacktestResult, config: RunConfig) -> Path:
    """Write ensembles, manifests and reports of a backtest under ``paths.output_dir``."""
    out = Path(config.paths.output_dir)
    for combo, by_day in result.ensembles.items():
        combo_dir = out / combo.name
        write_ensembles(combo_dir, {t: by_day[t] for t in result.days})
        write_manifest(combo_dir, combo, config, len(result.days))
    write_reports(result.reports, out)
    return out
