"""
Synthetic forecast cases drawn from the model's own generative process.

Daily wind-speed paths are simulated as positive AR(1) processes on 3-hourly
knots and splined to hourly values exactly as real NWP output is; production
follows y = max(X beta + eps, 0)^3 with eps ~ N_T(0, K^-1). Two
misspecified scenarios (heavy-tailed errors and a model without the cubic
term) exercise the verification tools on miscalibrated forecasts.

The module also provides the exact conjugate posterior of the scalar case
T = 1, which serves as an oracle for the Gibbs sampler.
"""

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .gwishart import PRIOR_DELTA, is_positive_definite
from .ingest import NWP_COLUMNS, ForecastCase, interpolate_hourly, write_case_dir
from .model import DEFAULT_POWERS, PosteriorDraw, build_design, covariate_blocks, transform

logger = logging.getLogger(__name__)

KNOT_STEP_H = 3
SYNTH_LAT = 52.0
SYNTH_LON = 10.0
HEAVY_TAIL_DF = 3.0


class Scenario(Enum):
    """Data-generating presets."""

    WELL_SPECIFIED = "well_specified"
    HEAVY_TAILS = "heavy_tails"  # multivariate Student-t errors
    MISSING_CUBIC = "missing_cubic"  # data keep x^3, the model should not

    @property
    def model_powers(self) -> Tuple[int, ...]:
        """Covariate powers the model should be fitted with for this scenario."""
        if self == Scenario.MISSING_CUBIC:
            return (0, 1)
        return DEFAULT_POWERS


def ar1_precision(T: int, phi: float, sd: float) -> np.ndarray:
    """Tridiagonal precision of a stationary AR(1) process with marginal SD ``sd``."""
    if not -1 < phi < 1:
        raise ValueError(f"AR coefficient must lie in (-1, 1), got {phi}")
    if sd <= 0:
        raise ValueError(f"sd must be positive, got {sd}")
    tau2 = sd**2 * (1 - phi**2)
    diag = np.full(T, 1 + phi**2)
    diag[[0, -1]] = 1.0
    if T == 1:
        diag[0] = 1 - phi**2
    K = np.diag(diag) - phi * (np.eye(T, k=1) + np.eye(T, k=-1))
    return K / tau2


def default_beta(T: int, powers: Sequence[int] = DEFAULT_POWERS) -> np.ndarray:
    """Smoothly lead-dependent coefficients, one block of T per covariate power."""
    lead = np.arange(T) / max(T - 1, 1)
    base = {0: 1.0, 1: 1.5, 2: 0.05, 3: 0.003}
    blocks = [base.get(p, 0.0) * (1.0 - 0.2 * lead) for p in powers]
    return np.concatenate(blocks)


@dataclass(frozen=True, eq=False)
class SynthConfig:
    """
    Parameters of a synthetic dataset.

    Parameters:
    -----------
    T : int
        Trajectory length
    n_days : int
        Number of daily forecast cases
    beta_true : numpy.ndarray, optional
        Coefficients of length 3T (default: :func:`default_beta`)
    K_true : numpy.ndarray, optional
        Error precision (default: AR(1) with ``error_phi`` and ``error_sd``)
    ws_phi, ws_mean, ws_sd : float
        AR(1) coefficient, mean and innovation SD of the 3-hourly wind-speed knots
    seed : int
        Random seed
    scenario : Scenario
        Generating preset
    """

    T: int = 72
    n_days: int = 465
    beta_true: Optional[np.ndarray] = None
    K_true: Optional[np.ndarray] = None
    ws_phi: float = 0.85
    ws_mean: float = 7.5
    ws_sd: float = 1.5
    error_phi: float = 0.9
    error_sd: float = 1.2
    seed: int = 0
    start: str = "2011-01-01"
    scenario: Scenario = Scenario.WELL_SPECIFIED

    def __post_init__(self):
        if self.T < 1 or self.n_days < 1:
            raise ValueError(f"T and n_days must be positive, got T={self.T}, n_days={self.n_days}")
        if not -1 < self.ws_phi < 1:
            raise ValueError(f"ws_phi must lie in (-1, 1), got {self.ws_phi}")
        object.__setattr__(self, "scenario", Scenario(self.scenario))

        beta = self.beta_true if self.beta_true is not None else default_beta(self.T)
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (len(DEFAULT_POWERS) * self.T,):
            raise ValueError(f"beta_true must have length {3 * self.T}, got {beta.shape}")
        object.__setattr__(self, "beta_true", beta)

        K = self.K_true
        if K is None:
            K = ar1_precision(self.T, self.error_phi, self.error_sd)
        K = np.atleast_2d(np.asarray(K, dtype=float))
        if K.shape != (self.T, self.T) or not is_positive_definite(K):
            raise ValueError("K_true must be a positive-definite T x T matrix")
        object.__setattr__(self, "K_true", K)


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    """Generated cases plus the NWP-style knots they were splined from."""

    config: SynthConfig
    cases: List[ForecastCase]
    knots: pd.DataFrame

    def write(self, directory: Union[str, Path]) -> Path:
        """
        Write ``cases/`` (case cache), ``nwp.csv`` and ``scenario.json``.

        For T <= 24 consecutive days don't overlap, and an hourly
        ``production.csv`` is written too.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_case_dir(self.cases, directory / "cases")
        self.knots.to_csv(directory / "nwp.csv", index=False, float_format="%.10g")
        if self.config.T <= 24:
            production_frame(self.cases).to_csv(
                directory / "production.csv", index=False, float_format="%.10g"
            )
        meta = {
            "scenario": self.config.scenario.value,
            "seed": self.config.seed,
            "T": self.config.T,
            "n_days": self.config.n_days,
            "model_powers": list(self.config.scenario.model_powers),
            "beta_true": self.config.beta_true.tolist(),
        }
        with open(directory / "scenario.json", "w") as handle:
            json.dump(meta, handle, indent=2)
        logger.info("Wrote %d synthetic cases to %s", len(self.cases), directory)
        return directory


def knot_leads(T: int, step: int = KNOT_STEP_H) -> np.ndarray:
    """Lead times 0, step, 2 step, ... covering 1..T with at least four knots."""
    n_knots = max(4, -(-T // step) + 1)
    return step * np.arange(n_knots)


def _simulate_knots(config: SynthConfig, rng: np.random.Generator, n_knots: int) -> np.ndarray:
    """One positive AR(1) knot path per day, shape (n_days, n_knots)."""
    stationary_sd = config.ws_sd / np.sqrt(1 - config.ws_phi**2)
    paths = np.empty((config.n_days, n_knots))
    paths[:, 0] = config.ws_mean + stationary_sd * rng.standard_normal(config.n_days)
    for k in range(1, n_knots):
        innovation = config.ws_sd * rng.standard_normal(config.n_days)
        anomaly = config.ws_phi * (paths[:, k - 1] - config.ws_mean)
        paths[:, k] = config.ws_mean + anomaly + innovation
    return np.maximum(paths, 0.0)


def _draw_errors(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    L = linalg.cholesky(config.K_true, lower=True)
    z = rng.standard_normal((config.T, config.n_days))
    eps = linalg.solve_triangular(L.T, z, lower=False).T
    if config.scenario == Scenario.HEAVY_TAILS:
        # scale mixture with the same covariance as the Gaussian errors
        w = rng.chisquare(HEAVY_TAIL_DF, size=config.n_days) / HEAVY_TAIL_DF
        eps *= np.sqrt((HEAVY_TAIL_DF - 2) / HEAVY_TAIL_DF) / np.sqrt(w)[:, None]
    return eps


def generate_dataset(config: SynthConfig) -> SyntheticDataset:
    """Simulate ``config.n_days`` daily cases; deterministic given the seed."""
    rng = np.random.default_rng(config.seed)
    leads = knot_leads(config.T)
    knots = _simulate_knots(config, rng, leads.size)
    eps = _draw_errors(config, rng)
    start = pd.Timestamp(config.start, tz="UTC")

    cases, rows = [], []
    for day in range(config.n_days):
        init_time = start + pd.Timedelta(days=day)
        x_w = interpolate_hourly(dict(zip(leads.tolist(), knots[day])), config.T)
        mean = build_design(x_w) @ config.beta_true
        y = np.maximum(mean + eps[day], 0.0) ** 3
        cases.append(ForecastCase(init_time, x_w, y))
        for lead, ws in zip(leads, knots[day]):
            rows.append((init_time, int(lead), SYNTH_LAT, SYNTH_LON, 0, float(ws)))

    logger.info(
        "Generated %d synthetic cases (T=%d, scenario %s, seed %d)",
        config.n_days,
        config.T,
        config.scenario.value,
        config.seed,
    )
    return SyntheticDataset(config, cases, pd.DataFrame(rows, columns=NWP_COLUMNS))


def generate(config: SynthConfig) -> List[ForecastCase]:
    """Synthetic forecast cases with observations."""
    return generate_dataset(config).cases


def production_frame(cases: Sequence[ForecastCase]) -> pd.DataFrame:
    """Hourly ``time,power_mw`` table of non-overlapping observed cases."""
    parts = []
    for case in cases:
        hours = case.init_time + pd.to_timedelta(np.arange(1, case.T + 1), unit="h")
        parts.append(pd.DataFrame({"time": hours, "power_mw": case.y}))
    frame = pd.concat(parts, ignore_index=True)
    if frame["time"].duplicated().any():
        raise ValueError("Cases overlap in time; production can't be written as one series")
    return frame


@dataclass(frozen=True, eq=False)
class NormalGammaPosterior:
    """
    Joint posterior beta | K ~ N(mean, (K precision)^-1), K ~ Gamma(shape, rate).

    The marginal of beta is a multivariate Student-t with 2 shape degrees of
    freedom.
    """

    mean: np.ndarray
    precision: np.ndarray
    shape: float
    rate: float

    @property
    def K_mean(self) -> float:
        return self.shape / self.rate

    @property
    def K_var(self) -> float:
        return self.shape / self.rate**2

    @property
    def beta_mean(self) -> np.ndarray:
        return self.mean

    @property
    def beta_cov(self) -> np.ndarray:
        if self.shape <= 1:
            return np.full(self.precision.shape, np.inf)
        return self.rate / (self.shape - 1) * linalg.inv(self.precision)

    def K_law(self):
        return stats.gamma(self.shape, scale=1.0 / self.rate)

    def beta_interval(self, level: float = 0.95) -> Tuple[np.ndarray, np.ndarray]:
        """Central ``level`` intervals of the Student-t marginals of beta."""
        scale = np.sqrt(self.rate / self.shape * np.diag(linalg.inv(self.precision)))
        law = stats.t(df=2.0 * self.shape, loc=self.mean, scale=scale)
        alpha = 0.5 * (1.0 - level)
        return law.ppf(alpha), law.ppf(1.0 - alpha)


def closed_form_posterior_T1(
    cases: Sequence[ForecastCase],
    powers: Sequence[int] = DEFAULT_POWERS,
    n0: Union[float, Sequence[float]] = 1.0,
    delta: float = PRIOR_DELTA,
    D: float = 1.0,
) -> NormalGammaPosterior:
    """
    Exact posterior of the tied model for scalar trajectories (T = 1).

    With beta | K ~ N(0, (K Diag(n0))^-1) and K ~ Gamma(delta / 2, rate D / 2),
    the cube-root observations y_n = c_n^T beta + eps_n give

        Lambda_N = Diag(n0) + C^T C,       mu_N = Lambda_N^-1 C^T y,
        a_N = delta / 2 + N / 2,           b_N = D / 2 + (y^T y - mu_N^T Lambda_N mu_N) / 2.

    Parameters:
    -----------
    cases : sequence of ForecastCase
        Observed cases with T = 1 (may be empty)
    powers : sequence of int
        Covariate powers
    n0 : float or sequence of float
        Fixed inflation factors
    """
    q = len(powers)
    n0 = np.broadcast_to(np.asarray(n0, dtype=float), (q,))
    for case in cases:
        if case.T != 1:
            raise ValueError(f"The closed-form posterior needs T = 1, got T={case.T}")
        if not case.has_observations:
            raise ValueError(f"Case {case.init_time} has no observations")

    prior_precision = np.diag(n0)
    if len(cases) == 0:
        return NormalGammaPosterior(np.zeros(q), prior_precision, 0.5 * delta, 0.5 * D)

    x = np.array([case.x_w[0] for case in cases])
    y = transform(np.array([case.y[0] for case in cases]))
    C = covariate_blocks(x, powers).T  # (N, q)
    precision = prior_precision + C.T @ C
    mean = linalg.solve(precision, C.T @ y, assume_a="pos")
    shape = 0.5 * delta + 0.5 * y.size
    rate = 0.5 * D + 0.5 * (y @ y - mean @ precision @ mean)
    return NormalGammaPosterior(mean, precision, shape, rate)


def beta_interval_hits(
    draws: Sequence[PosteriorDraw], beta_true: np.ndarray, level: float = 0.95
) -> np.ndarray:
    """Whether each component of ``beta_true`` lies in its central posterior interval."""
    betas = np.vstack([d.beta for d in draws])
    alpha = 0.5 * (1 - level)
    lo, hi = np.quantile(betas, [alpha, 1 - alpha], axis=0)
    return (lo <= beta_true) & (beta_true <= hi)
