"""
Verification of probabilistic trajectory forecasts.

Univariate scores (absolute and squared error, CRPS), randomized PIT values,
central prediction interval coverage and width, band-depth multivariate
ranks, and scores of scalar functionals (sum, max) of the trajectories.
Per-case results are collected into a :class:`ScoreReport` aggregated per
lead time and per forecast day (blocks of 24 leads).
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import properscoring as ps
from numba import njit
from scipy import stats

from .model import PredictiveEnsemble

logger = logging.getLogger(__name__)

HOURS_PER_DAY = 24
DEFAULT_LEVEL = 0.8
DEFAULT_PIT_BINS = 20
RANK_TEST_BINS = 10


class CrpsEstimator(Enum):
    ENSEMBLE = "ensemble"  # empirical CDF of the members
    FAIR = "fair"  # unbiased for the underlying distribution


class Functional(Enum):
    """Scalar summaries of a whole trajectory."""

    SUM = "sum"
    MAX = "max"

    def apply(self, trajectories: np.ndarray) -> np.ndarray:
        trajectories = np.asarray(trajectories, dtype=float)
        if self == Functional.SUM:
            return trajectories.sum(axis=-1)
        return trajectories.max(axis=-1)


def pit(
    ensemble_margin: np.ndarray, y: float, rng: Optional[np.random.Generator] = None
) -> float:
    """
    Randomized PIT of ``y`` among m - 1 ensemble members.

    The value is uniform on [#(x < y), #(x <= y) + 1] / m, so an observation
    exchangeable with the members yields an exactly uniform PIT.
    """
    rng = rng if rng is not None else np.random.default_rng()
    margin = np.sort(np.asarray(ensemble_margin, dtype=float))
    m = margin.size + 1
    rank_low = np.searchsorted(margin, y, side="left")
    rank_high = np.searchsorted(margin, y, side="right") + 1
    return float((rank_low + rng.uniform() * (rank_high - rank_low)) / m)


def pit_values(
    ensemble: PredictiveEnsemble, y: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Randomized PIT of every lead time of an observed trajectory."""
    margins = ensemble.sorted_margins()
    m = ensemble.m + 1
    low = (margins < y).sum(axis=0)
    high = (margins <= y).sum(axis=0) + 1
    return (low + rng.uniform(size=y.size) * (high - low)) / m


def interval_coverage_width(
    ensemble_margin: np.ndarray, y: float, level: float = DEFAULT_LEVEL
) -> Tuple[bool, float]:
    """Whether y lies in the central ``level`` interval, and the interval width."""
    margin = np.asarray(ensemble_margin, dtype=float)
    if margin.size < 10:
        raise ValueError(f"Interval estimation needs at least 10 members, got {margin.size}")
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    alpha = 0.5 * (1.0 - level)
    lo, hi = np.quantile(margin, [alpha, 1.0 - alpha])
    return bool(lo <= y <= hi), float(hi - lo)


def crps(
    ensemble_margin: np.ndarray,
    y,
    estimator: CrpsEstimator = CrpsEstimator.ENSEMBLE,
):
    """
    CRPS of an ensemble forecast (MW).

    The ensemble estimator is (1/m) sum|x_i - y| - (1/(2 m^2)) sum sum|x_i - x_j|;
    the fair estimator divides the second term by 2 m (m - 1) instead. Members
    run along the last axis, so a (T, m) array scores T margins at once.
    """
    members = np.asarray(ensemble_margin, dtype=float)
    m = members.shape[-1]
    if m < 2:
        raise ValueError(f"CRPS needs at least 2 members, got {m}")
    estimator = CrpsEstimator(estimator)
    if estimator == CrpsEstimator.ENSEMBLE:
        return ps.crps_ensemble(y, members)

    # sum_ij |x_i - x_j| = 2 sum_k (2k - m - 1) x_(k)
    ordered = np.sort(members, axis=-1)
    weights = 2.0 * np.arange(1, m + 1) - m - 1
    spread = 2.0 * (ordered * weights).sum(axis=-1)
    abs_term = np.abs(members - np.expand_dims(y, -1)).mean(axis=-1)
    return abs_term - spread / (2.0 * m * (m - 1))


def mae_rmse(ensemble_margin: np.ndarray, y) -> Tuple[float, float]:
    """Absolute error of the ensemble median and squared error of the ensemble mean."""
    members = np.asarray(ensemble_margin, dtype=float)
    if members.shape[-1] < 1:
        raise ValueError("Need at least one ensemble member")
    abs_err = np.abs(np.median(members, axis=-1) - y)
    sq_err = (np.mean(members, axis=-1) - y) ** 2
    return abs_err, sq_err


@njit
def _band_depth_preranks(values, tiebreak):
    """
    Band-depth pre-ranks of all m trajectories in ``values`` (m, T).

    ``tiebreak`` (T, m) holds a random permutation per lead; equal values are
    ranked in that order.
    """
    m, T = values.shape
    acc = np.zeros(m)
    for t in range(T):
        perm = tiebreak[t]
        column = np.empty(m)
        for i in range(m):
            column[i] = values[perm[i], t]
        order = np.argsort(column, kind="mergesort")
        for r in range(m):
            rank = r + 1
            acc[perm[order[r]]] += (m - rank) * (rank - 1)
    return acc / T + (m - 1)


def _tiebreak(rng: np.random.Generator, m: int, T: int) -> np.ndarray:
    return rng.permuted(np.tile(np.arange(m, dtype=np.int64), (T, 1)), axis=1)


def band_depth_preranks(
    trajectories: np.ndarray, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """Pre-rank of every trajectory among all rows of ``trajectories``."""
    values = np.ascontiguousarray(np.atleast_2d(trajectories), dtype=float)
    m, T = values.shape
    rng = rng if rng is not None else np.random.default_rng(0)
    return _band_depth_preranks(values, _tiebreak(rng, m, T))


def band_depth_prerank(
    trajectory: np.ndarray,
    ensemble: np.ndarray,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Band-depth pre-rank of ``trajectory`` within ``ensemble`` plus itself.

    rho(y) = (1/T) sum_t [m - rank(y_t)] [rank(y_t) - 1] + (m - 1), where
    rank(y_t) is the univariate rank among all m values at lead t.
    """
    stacked = np.vstack([np.atleast_2d(ensemble), np.atleast_1d(trajectory)])
    return float(band_depth_preranks(stacked, rng)[-1])


def multivariate_rank(
    y: np.ndarray, samples: np.ndarray, rng: Optional[np.random.Generator] = None
) -> int:
    """Rank (1..m) of the observed trajectory's pre-rank among all m pre-ranks."""
    rng = rng if rng is not None else np.random.default_rng()
    stacked = np.vstack([np.atleast_2d(samples), np.atleast_1d(y)])
    rho = band_depth_preranks(stacked, rng)
    obs, others = rho[-1], rho[:-1]
    below = int(np.sum(others < obs))
    ties = int(np.sum(others == obs))
    return below + 1 + int(rng.integers(0, ties + 1))


def functional_scores(
    ensemble: PredictiveEnsemble,
    y: np.ndarray,
    functional: Functional,
    estimator: CrpsEstimator = CrpsEstimator.ENSEMBLE,
) -> Tuple[float, float, float]:
    """Absolute error, squared error and CRPS of a trajectory functional."""
    y = np.asarray(y, dtype=float)
    if y.size != ensemble.T:
        raise ValueError(f"Observation has {y.size} leads, ensemble has {ensemble.T}")
    functional = Functional(functional)
    members = functional.apply(ensemble.trajectories)
    observed = float(functional.apply(y))
    abs_err, sq_err = mae_rmse(members, observed)
    return float(abs_err), float(sq_err), float(crps(members, observed, estimator))


def day_blocks(T: int) -> List[slice]:
    """Lead-index slices of the forecast days (leads 1-24, 25-48, ...)."""
    return [slice(s, min(s + HOURS_PER_DAY, T)) for s in range(0, T, HOURS_PER_DAY)]


@dataclass(frozen=True)
class VerifySettings:
    """Options of the verification suite."""

    level: float = DEFAULT_LEVEL
    pit_bins: int = DEFAULT_PIT_BINS
    pit_leads: int = HOURS_PER_DAY
    rank_leads: int = HOURS_PER_DAY
    crps_estimator: CrpsEstimator = CrpsEstimator.ENSEMBLE
    functionals: Tuple[Functional, ...] = (Functional.SUM, Functional.MAX)


@dataclass(frozen=True, eq=False)
class CaseScores:
    """Scores of one forecast case."""

    init_time: Optional[pd.Timestamp]
    abs_err: np.ndarray
    sq_err: np.ndarray
    crps: np.ndarray
    covered: np.ndarray
    width: np.ndarray
    pit: np.ndarray
    mv_rank: int
    m: int
    functional: Dict[str, Tuple[float, float, float, float]] = field(default_factory=dict)


def score_case(
    ensemble: PredictiveEnsemble,
    y: np.ndarray,
    rng: np.random.Generator,
    settings: VerifySettings = VerifySettings(),
) -> CaseScores:
    """Score one predictive ensemble against its observed trajectory."""
    y = np.asarray(y, dtype=float)
    if y.shape != (ensemble.T,):
        raise ValueError(f"Observation shape {y.shape} doesn't match T={ensemble.T}")
    members = ensemble.trajectories.T  # (T, m)
    abs_err, sq_err = mae_rmse(members, y)
    crps_t = crps(members, y, settings.crps_estimator)

    alpha = 0.5 * (1.0 - settings.level)
    lo, hi = np.quantile(ensemble.trajectories, [alpha, 1.0 - alpha], axis=0)
    covered = (lo <= y) & (y <= hi)

    n_pit = min(settings.pit_leads, ensemble.T)
    pits = pit_values(ensemble, y, rng)[:n_pit]
    n_rank = min(settings.rank_leads, ensemble.T)
    rank = multivariate_rank(y[:n_rank], ensemble.trajectories[:, :n_rank], rng)

    functional = {}
    for f in settings.functionals:
        values = f.apply(ensemble.trajectories)
        observed = float(f.apply(y))
        f_abs, f_sq = mae_rmse(values, observed)
        f_crps = crps(values, observed, settings.crps_estimator)
        f_pit = pit(values, observed, rng)
        functional[f.value] = (float(f_abs), float(f_sq), float(f_crps), f_pit)

    return CaseScores(
        init_time=ensemble.init_time,
        abs_err=np.asarray(abs_err),
        sq_err=np.asarray(sq_err),
        crps=np.asarray(crps_t),
        covered=covered,
        width=hi - lo,
        pit=pits,
        mv_rank=rank,
        m=ensemble.m + 1,
        functional=functional,
    )


def uniformity_pvalues(pits: np.ndarray, ranks: np.ndarray, m: int) -> Tuple[float, float]:
    """KS p-value of PIT values and chi-square p-value of multivariate ranks."""
    ks = float(stats.kstest(pits, "uniform").pvalue) if pits.size else float("nan")
    if ranks.size == 0:
        return ks, float("nan")
    n_bins = min(RANK_TEST_BINS, m)
    edges = np.linspace(0, m, n_bins + 1).round().astype(int)
    observed = np.histogram(ranks - 1, bins=edges)[0]
    expected = ranks.size * np.diff(edges) / m
    chi2 = float(stats.chisquare(observed, expected).pvalue)
    return ks, chi2


@dataclass(eq=False)
class ScoreReport:
    """
    Aggregated verification results over many forecast cases.

    ``per_day`` has one row per forecast day and columns mae, rmse, crps;
    ``functional`` maps "sum"/"max" to (mae, rmse, crps).
    """

    n_cases: int
    per_lead: pd.DataFrame
    per_day: pd.DataFrame
    coverage: np.ndarray
    width: np.ndarray
    pit_hist: np.ndarray
    mv_rank_hist: np.ndarray
    functional: Dict[str, Tuple[float, float, float]]
    functional_pit_hist: Dict[str, np.ndarray]
    pit_ks_pvalue: float
    rank_chi2_pvalue: float
    level: float = DEFAULT_LEVEL

    @classmethod
    def from_cases(
        cls, cases: Sequence[CaseScores], settings: VerifySettings = VerifySettings()
    ) -> "ScoreReport":
        if not cases:
            raise ValueError("Cannot build a score report from zero cases")
        abs_err = np.vstack([c.abs_err for c in cases])
        sq_err = np.vstack([c.sq_err for c in cases])
        crps_v = np.vstack([c.crps for c in cases])
        covered = np.vstack([c.covered for c in cases]).astype(float)
        width = np.vstack([c.width for c in cases])
        T = abs_err.shape[1]
        m = cases[0].m

        per_lead = pd.DataFrame(
            {
                "lead_h": np.arange(1, T + 1),
                "mae": abs_err.mean(axis=0),
                "rmse": np.sqrt(sq_err.mean(axis=0)),
                "crps": crps_v.mean(axis=0),
            }
        )
        rows = []
        for day, block in enumerate(day_blocks(T), start=1):
            rows.append(
                {
                    "day": day,
                    "mae": abs_err[:, block].mean(),
                    "rmse": np.sqrt(sq_err[:, block].mean()),
                    "crps": crps_v[:, block].mean(),
                    "coverage": covered[:, block].mean(),
                    "width": width[:, block].mean(),
                }
            )
        per_day = pd.DataFrame(rows)

        pits = np.concatenate([c.pit for c in cases])
        ranks = np.array([c.mv_rank for c in cases])
        pit_hist = np.histogram(pits, bins=settings.pit_bins, range=(0.0, 1.0))[0]
        rank_hist = np.bincount(ranks - 1, minlength=m)
        ks, chi2 = uniformity_pvalues(pits, ranks, m)

        functional, functional_pit = {}, {}
        for f in settings.functionals:
            values = np.array([c.functional[f.value] for c in cases])
            functional[f.value] = (
                float(values[:, 0].mean()),
                float(np.sqrt(values[:, 1].mean())),
                float(values[:, 2].mean()),
            )
            functional_pit[f.value] = np.histogram(
                values[:, 3], bins=settings.pit_bins, range=(0.0, 1.0)
            )[0]

        return cls(
            n_cases=len(cases),
            per_lead=per_lead,
            per_day=per_day,
            coverage=per_day["coverage"].to_numpy(),
            width=per_day["width"].to_numpy(),
            pit_hist=pit_hist,
            mv_rank_hist=rank_hist,
            functional=functional,
            functional_pit_hist=functional_pit,
            pit_ks_pvalue=ks,
            rank_chi2_pvalue=chi2,
            level=settings.level,
        )

    def summary(self) -> Dict[str, object]:
        return {
            "n_cases": self.n_cases,
            "coverage": [float(c) for c in self.coverage],
            "width": [float(w) for w in self.width],
            "pit_ks_pvalue": self.pit_ks_pvalue,
            "rank_chi2_pvalue": self.rank_chi2_pvalue,
            "functional": {k: list(v) for k, v in self.functional.items()},
        }
