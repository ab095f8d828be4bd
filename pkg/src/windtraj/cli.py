"""
Command-line interface: ``windtraj {synth,fit,predict,backtest,verify}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd

from . import __version__
from .backtest import (
    Backtester,
    Combination,
    copula_history,
    day_streams,
    forecast_window,
    in_sample_copula,
    out_of_sample_copula,
    read_ensembles,
    score_ensembles,
    write_backtest,
    write_ensembles,
    write_manifest,
    write_reports,
)
from .config import RunConfig
from .errors import ConfigError, DataError, WindTrajError
from .ingest import (
    ForecastCase,
    build_cases,
    build_windows,
    case_filename,
    read_case_dir,
    read_nwp_csv,
    read_production_csv,
    window_for_target,
)
from .model import (
    ModelVariant,
    PredictiveEnsemble,
    chain_summary,
    gibbs_fit,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .synth import Scenario, SynthConfig, generate_dataset

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"


def configure_logging(level: int = logging.INFO, log_file: Optional[str] = None) -> None:
    """Attach a stream handler (and optionally a file handler) to the package logger."""
    root = logging.getLogger("windtraj")
    root.setLevel(level)
    formatter = logging.Formatter(LOG_FORMAT)
    stream = next((h for h in root.handlers if getattr(h, "_windtraj", False)), None)
    if stream is None:
        stream = logging.StreamHandler(sys.stderr)
        stream._windtraj = True  # type: ignore[attr-defined]
        root.addHandler(stream)
    stream.setFormatter(formatter)
    stream.setLevel(level)
    if log_file:
        handler = logging.FileHandler(log_file)
        handler.setFormatter(formatter)
        root.addHandler(handler)
    logging.getLogger("joblib").setLevel(logging.WARNING)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override one configuration key (repeatable)",
    )
    common.add_argument("--seed", type=int)
    common.add_argument("--window-days", type=int)
    common.add_argument(
        "--variant",
        action="append",
        choices=[v.value for v in ModelVariant],
        help="Model variant (repeatable)",
    )
    common.add_argument(
        "--postproc",
        action="append",
        choices=["none", "copula"],
        help="Post-processing (repeatable)",
    )
    common.add_argument("--T", dest="T", type=int, help="Trajectory length in hours")
    common.add_argument("--n-jobs", type=int, help="Worker processes (-1: all cores)")
    common.add_argument("--output-dir")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    common.add_argument("--log-file")

    parser = _Parser(
        prog="windtraj", description="Probabilistic wind power trajectory forecasts"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
    p.add_argument("--out", default="synthetic", help="Output directory")
    p.add_argument("--days", type=int, default=465)
    p.add_argument("--scenario", choices=[s.value for s in Scenario], default="well_specified")

    p = sub.add_parser("fit", parents=[common], help="Fit the posterior for one target day")
    p.add_argument("--init-time", help="Target initialization (default: latest case)")

    p = sub.add_parser("predict", parents=[common], help="Write the predictive ensemble")
    p.add_argument("--init-time", help="Target initialization (default: latest case)")

    sub.add_parser("backtest", parents=[common], help="Rolling fit-predict-score backtest")

    p = sub.add_parser("verify", parents=[common], help="Score existing ensemble directories")
    p.add_argument("ensembles", nargs="+", help="Combination directories with ensembles/")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """File, then ``--set`` overrides, then dedicated flags."""
    config = RunConfig.load(args.config) if args.config else RunConfig()
    config = config.with_overrides(args.overrides)
    flags = [
        ("run", "seed", args.seed),
        ("data", "window_days", args.window_days),
        ("model", "variants", args.variant),
        ("model", "postproc", args.postproc),
        ("data", "T", args.T),
        ("run", "n_jobs", args.n_jobs),
        ("paths", "output_dir", args.output_dir),
    ]
    for section, key, value in flags:
        if value is not None:
            config = config.replace_section(section, **{key: value})
    return config


def load_cases(config: RunConfig) -> List[ForecastCase]:
    paths = config.paths
    if paths.cases:
        cases = read_case_dir(paths.cases)
    elif paths.nwp:
        production = read_production_csv(paths.production) if paths.production else None
        cases = build_cases(
            read_nwp_csv(paths.nwp), production, T=config.data.T, lat_min=config.data.lat_min
        )
    else:
        raise ConfigError("Set paths.cases or paths.nwp (and paths.production)")
    if cases[0].T != config.data.T:
        raise DataError(f"Cases have T={cases[0].T}, configuration expects T={config.data.T}")
    return cases


def _target_time(cases: Sequence[ForecastCase], init_time: Optional[str]) -> pd.Timestamp:
    if init_time is None:
        return cases[-1].init_time
    ts = pd.Timestamp(init_time)
    return ts.tz_localize("UTC") if ts.tzinfo is None else ts.tz_convert("UTC")


def _checkpoint_dir(config: RunConfig, variant: ModelVariant, init_time: pd.Timestamp) -> Path:
    return Path(config.paths.checkpoint_dir) / variant.value / case_filename(init_time)[:-4]


def cmd_synth(args: argparse.Namespace, config: RunConfig) -> int:
    synth = SynthConfig(
        T=config.data.T,
        n_days=args.days,
        seed=config.run.seed,
        scenario=Scenario(args.scenario),
    )
    out = generate_dataset(synth).write(args.out)
    logger.info("Synthetic dataset written to %s", out)
    return 0


def cmd_fit(args: argparse.Namespace, config: RunConfig) -> int:
    cases = load_cases(config)
    init_time = _target_time(cases, args.init_time)
    window = window_for_target(cases, init_time, config.data.window_days)
    for name in config.model.variants:
        variant = ModelVariant(name)
        model_config = config.model_config(variant)
        marginal_rng, _, _ = day_streams(config.run.seed, init_time)
        draws = gibbs_fit(window, model_config, marginal_rng)
        directory = _checkpoint_dir(config, variant, init_time)
        save_checkpoint(
            draws,
            directory,
            model_config,
            {
                "variant": variant.value,
                "init_time": init_time.isoformat(),
                "config_hash": config.config_hash(),
                "diagnostics": chain_summary(draws),
            },
        )
        logger.info("%s: checkpoint written to %s", variant.label, directory)
    return 0


def _copula_for_day(
    config: RunConfig,
    cases: Sequence[ForecastCase],
    variant: ModelVariant,
    init_time: pd.Timestamp,
    marginal: PredictiveEnsemble,
    draws,
) -> PredictiveEnsemble:
    _, copula_rng, _ = day_streams(config.run.seed, init_time)
    graph = config.copula_graph()
    model_config = config.model_config(variant)
    if config.copula.pit_source == "in_sample":
        window = window_for_target(cases, init_time, config.data.window_days)
        return in_sample_copula(
            draws, window, model_config, graph, marginal, copula_rng, config.copula.window_days
        )

    # earlier marginal forecasts: reuse written ensembles, compute the rest
    marginal_dir = Path(config.paths.output_dir) / Combination(variant, "none").name
    existing = {}
    if (marginal_dir / "ensembles").is_dir():
        existing = read_ensembles(marginal_dir)
    observed = {c.init_time: c.y for c in cases if c.has_observations}
    earlier = [t for t in observed if t < init_time][-config.copula.window_days :]
    windows = {
        w.target.init_time: w
        for w in build_windows(cases, config.data.window_days)
        if w.target.init_time in earlier and w.target.init_time not in existing
    }
    for t, window in windows.items():
        forecast = forecast_window(window, model_config, config.run.seed)
        if forecast.ok:
            existing[t] = forecast.marginal
    history = copula_history(init_time, existing, observed, config.copula.window_days)
    if len(history) < config.copula.min_cases:
        raise DataError(
            f"Only {len(history)} earlier forecasts available for the copula of {init_time}, "
            f"need {config.copula.min_cases}"
        )
    return out_of_sample_copula(marginal, history, graph, copula_rng)


def cmd_predict(args: argparse.Namespace, config: RunConfig) -> int:
    cases = load_cases(config)
    init_time = _target_time(cases, args.init_time)
    target = next((c for c in cases if c.init_time == init_time), None)
    if target is None:
        raise DataError(f"No NWP covariates for init_time {init_time}")
    for name in config.model.variants:
        variant = ModelVariant(name)
        directory = _checkpoint_dir(config, variant, init_time)
        if not (directory / "meta.json").exists():
            raise DataError(f"No checkpoint for {variant.value} at {init_time}; run fit first")
        draws, _ = load_checkpoint(directory)
        model_config = config.model_config(variant)
        _, _, predict_rng = day_streams(config.run.seed, init_time)
        marginal = predict(draws, target.x_w, model_config, predict_rng, init_time)
        out = {"none": marginal}
        if "copula" in config.model.postproc:
            out["copula"] = _copula_for_day(config, cases, variant, init_time, marginal, draws)
        for postproc, ensemble in out.items():
            combo = Combination(variant, postproc)
            combo_dir = Path(config.paths.output_dir) / combo.name
            write_ensembles(combo_dir, {init_time: ensemble})
            write_manifest(combo_dir, combo, config, 1)
            logger.info("%s: %d trajectories written", combo.label, ensemble.m)
    return 0


def cmd_backtest(args: argparse.Namespace, config: RunConfig) -> int:
    backtester = Backtester(config, load_cases(config))
    result = backtester.run()
    out = write_backtest(result, config)
    if config.run.window_sweep:
        table = backtester.window_sweep(config.run.window_sweep)
        table.to_csv(out / "window_sweep.csv", index=False, float_format="%.6g")
        logger.info("Window sweep written to %s", out / "window_sweep.csv")
    return 0


def cmd_verify(args: argparse.Namespace, config: RunConfig) -> int:
    cases = load_cases(config)
    observed = {c.init_time: c.y for c in cases if c.has_observations}
    settings = config.verify_settings()
    reports = {}
    for directory in map(Path, args.ensembles):
        manifest_path = directory / "manifest.json"
        if not manifest_path.exists():
            raise DataError(f"{directory} has no manifest.json")
        with open(manifest_path) as handle:
            manifest = json.load(handle)
        combo = Combination(ModelVariant(manifest["variant"]), manifest["postproc"])
        ensembles = read_ensembles(directory)
        days = [t for t in sorted(ensembles) if t in observed]
        if not days:
            raise DataError(f"No observations for any ensemble in {directory}")
        reports[combo] = score_ensembles(ensembles, observed, settings, config.run.seed, days)
        logger.info("%s: %d days rescored", combo.label, len(days))
    write_reports(reports, config.paths.output_dir)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "backtest": cmd_backtest,
    "verify": cmd_verify,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
        configure_logging(level, args.log_file)
        config = resolve_config(args)
        return COMMANDS[args.command](args, config)
    except WindTrajError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except ValueError as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
