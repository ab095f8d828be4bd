"""
Input preparation for regional wind power trajectory forecasts.

This module turns gridded NWP wind-speed forecasts and hourly production
records into aligned forecast cases: the ensemble is reduced to its mean,
the 3-6 h native steps are splined to hourly values, the grid is averaged
over the points north of a latitude threshold, and the resulting cases are
grouped into chronological rolling training windows.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline

from .errors import DataError

logger = logging.getLogger(__name__)

NWP_COLUMNS = ["init_time", "lead_h", "lat", "lon", "member", "ws100"]
PRODUCTION_COLUMNS = ["time", "power_mw"]
CASE_COLUMNS = ["lead_h", "ws_mean", "power_mw"]
CASE_FILE_FORMAT = "%Y%m%dT%H%MZ"

DEFAULT_LAT_MIN = 51.0
DEFAULT_T = 72


@dataclass(frozen=True)
class NwpGridRecord:
    """One wind-speed value of one ensemble member at one grid point and lead time."""

    init_time: pd.Timestamp
    lead_h: int
    lat: float
    lon: float
    member: int
    wind_speed_100m: float

    def __post_init__(self):
        if self.wind_speed_100m < 0:
            raise ValueError(f"Negative wind speed {self.wind_speed_100m} at {self._cell()}")
        if not 0 <= self.lead_h <= 240:
            raise ValueError(f"Lead time {self.lead_h} h out of range at {self._cell()}")

    def _cell(self) -> str:
        return f"init={self.init_time}, lead={self.lead_h}h, lat={self.lat}, lon={self.lon}"


@dataclass(frozen=True)
class ProductionRecord:
    """Hourly regional production in MW."""

    time: pd.Timestamp
    power: float

    def __post_init__(self):
        if self.power < 0:
            raise ValueError(f"Negative production {self.power} MW at {self.time}")


@dataclass(frozen=True, eq=False)
class ForecastCase:
    """
    Spatially averaged hourly wind-speed forecast with optional observed production.

    Parameters:
    -----------
    init_time : pandas.Timestamp
        Forecast initialization time (UTC)
    x_w : numpy.ndarray
        Hourly wind-speed forecasts for lead times 1..T (m/s)
    y : numpy.ndarray, optional
        Observed production for the same lead times (MW); None for pure prediction
    """

    init_time: pd.Timestamp
    x_w: np.ndarray
    y: Optional[np.ndarray] = None

    def __post_init__(self):
        x_w = np.asarray(self.x_w, dtype=float)
        if x_w.ndim != 1 or x_w.size == 0:
            raise ValueError("x_w must be a non-empty vector")
        if np.any(~np.isfinite(x_w)) or np.any(x_w < 0):
            raise ValueError(f"x_w must be finite and non-negative (case {self.init_time})")
        object.__setattr__(self, "x_w", x_w)
        object.__setattr__(self, "init_time", pd.Timestamp(self.init_time))
        if self.y is not None:
            y = np.asarray(self.y, dtype=float)
            if y.shape != x_w.shape:
                raise ValueError(
                    f"Observation length {y.shape} doesn't match covariate length {x_w.shape}"
                )
            if np.any(~np.isfinite(y)) or np.any(y < 0):
                raise ValueError(f"y must be finite and non-negative (case {self.init_time})")
            object.__setattr__(self, "y", y)

    @property
    def T(self) -> int:
        return int(self.x_w.size)

    @property
    def has_observations(self) -> bool:
        return self.y is not None

    def without_observations(self) -> "ForecastCase":
        return ForecastCase(self.init_time, self.x_w)


@dataclass(frozen=True)
class TrainingWindow:
    """N chronologically preceding cases with observations and one target case."""

    cases: Tuple[ForecastCase, ...]
    target: ForecastCase
    _stacked: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "cases", tuple(self.cases))
        if len(self.cases) < 1:
            raise ValueError("A training window needs at least one case")
        T = self.target.T
        for case in self.cases:
            if case.T != T:
                raise ValueError(f"Case {case.init_time} has T={case.T}, target has T={T}")
            if not case.has_observations:
                raise ValueError(f"Training case {case.init_time} has no observations")
            if case.init_time >= self.target.init_time:
                raise ValueError(
                    f"Training case {case.init_time} does not precede target "
                    f"{self.target.init_time}"
                )

    @property
    def N(self) -> int:
        return len(self.cases)

    @property
    def T(self) -> int:
        return self.target.T

    @property
    def X(self) -> np.ndarray:
        """Covariates of the training cases, shape (N, T)."""
        if "X" not in self._stacked:
            self._stacked["X"] = np.vstack([c.x_w for c in self.cases])
        return self._stacked["X"]

    @property
    def Y(self) -> np.ndarray:
        """Observed production of the training cases, shape (N, T)."""
        if "Y" not in self._stacked:
            self._stacked["Y"] = np.vstack([c.y for c in self.cases])
        return self._stacked["Y"]


def records_to_frame(records: Iterable[NwpGridRecord]) -> pd.DataFrame:
    """Convert NWP records to the tabular form used throughout this module."""
    rows = [
        (r.init_time, r.lead_h, r.lat, r.lon, r.member, r.wind_speed_100m) for r in records
    ]
    frame = pd.DataFrame(rows, columns=NWP_COLUMNS)
    frame["init_time"] = pd.to_datetime(frame["init_time"], utc=True)
    return frame


def _as_frame(records: Union[pd.DataFrame, Iterable[NwpGridRecord]]) -> pd.DataFrame:
    if isinstance(records, pd.DataFrame):
        missing = set(NWP_COLUMNS) - set(records.columns)
        if missing:
            raise DataError(f"NWP table is missing columns: {sorted(missing)}")
        return records
    return records_to_frame(records)


def ensemble_mean(records: Union[pd.DataFrame, Iterable[NwpGridRecord]]) -> pd.DataFrame:
    """
    Reduce the NWP ensemble to its arithmetic mean at every grid cell.

    Parameters:
    -----------
    records : pandas.DataFrame or iterable of NwpGridRecord
        Member forecasts with columns init_time, lead_h, lat, lon, member, ws100

    Returns:
    --------
    pandas.DataFrame
        One row per (init_time, lead_h, lat, lon) with member = 0

    Raises:
    -------
    DataError
        If a cell lacks one of the members present elsewhere in the input, or
        a (member, init_time, lead_h, lat, lon) record appears more than once
    """
    frame = _as_frame(records)
    if frame.empty:
        raise DataError("No NWP records to average")
    repeated = frame.duplicated(["member", "init_time", "lead_h", "lat", "lon"], keep="first")
    if repeated.any():
        first = frame[repeated].iloc[0]
        raise DataError(
            f"Repeated record for member={first['member']}, init_time={first['init_time']}, "
            f"lead_h={first['lead_h']}, lat={first['lat']}, lon={first['lon']} "
            f"({int(repeated.sum())} repeated record(s) in total)"
        )
    members = np.sort(frame["member"].unique())
    if members.size == 1 and members[0] == 0:
        return frame.copy()

    cell_keys = ["init_time", "lead_h", "lat", "lon"]
    grouped = frame.groupby(cell_keys, sort=True)
    counts = grouped["member"].nunique()
    incomplete = counts[counts < members.size]
    if not incomplete.empty:
        init_time, lead_h, lat, lon = incomplete.index[0]
        present = set(frame.loc[
            (frame["init_time"] == init_time)
            & (frame["lead_h"] == lead_h)
            & (frame["lat"] == lat)
            & (frame["lon"] == lon),
            "member",
        ])
        absent = sorted(set(members) - present)
        raise DataError(
            f"Missing ensemble member(s) {absent} for cell init_time={init_time}, "
            f"lead_h={lead_h}, lat={lat}, lon={lon} "
            f"({len(incomplete)} incomplete cell(s) in total)"
        )

    mean = grouped["ws100"].mean().reset_index()
    mean["member"] = 0
    return mean[NWP_COLUMNS]


def interpolate_hourly(series: Mapping[int, float], T: int = DEFAULT_T) -> np.ndarray:
    """
    Spline native 3 h or 6 h forecasts to hourly values for lead times 1..T.

    A natural cubic spline is fitted through the knots and evaluated at every
    hour; values are clamped below at zero afterwards, so knot values are
    reproduced exactly whenever they are non-negative.

    Parameters:
    -----------
    series : mapping
        Lead time in hours -> value
    T : int
        Trajectory length in hours

    Returns:
    --------
    numpy.ndarray
        Hourly values of length T
    """
    if T < 1:
        raise ValueError(f"T must be positive, got {T}")
    if len(series) < 4:
        raise DataError(f"Spline interpolation needs at least 4 knots, got {len(series)}")

    leads = np.array(sorted(series), dtype=float)
    values = np.array([series[int(h)] for h in leads], dtype=float)
    if np.any(~np.isfinite(values)):
        raise DataError("Non-finite knot values")
    if leads[0] > 1 or leads[-1] < T:
        raise DataError(
            f"Knots span [{leads[0]:g}, {leads[-1]:g}] h but lead times 1..{T} are required "
            f"(no extrapolation)"
        )

    spline = CubicSpline(leads, values, bc_type="natural")
    hourly = spline(np.arange(1, T + 1, dtype=float))
    return np.maximum(hourly, 0.0)


def spatial_average(
    records: Union[pd.DataFrame, Iterable[NwpGridRecord]], lat_min: float = DEFAULT_LAT_MIN
) -> pd.Series:
    """
    Unweighted mean wind speed over the grid points north of ``lat_min``.

    Returns:
    --------
    pandas.Series
        Mean wind speed indexed by (init_time, lead_h)

    Raises:
    -------
    DataError
        If some (init_time, lead_h) step has no grid point north of ``lat_min``
    """
    frame = _as_frame(records)
    if (frame["member"] != 0).any():
        raise ValueError("spatial_average expects ensemble-mean records (member = 0)")
    north = frame[frame["lat"] > lat_min]
    if north.empty:
        raise DataError(f"No grid points with latitude > {lat_min}")
    averaged = north.groupby(["init_time", "lead_h"], sort=True)["ws100"].mean()
    expected = pd.MultiIndex.from_frame(frame[["init_time", "lead_h"]].drop_duplicates())
    uncovered = expected.difference(averaged.index)
    if len(uncovered):
        init_time, lead_h = uncovered[0]
        raise DataError(
            f"No grid points with latitude > {lat_min} for init_time={init_time}, "
            f"lead_h={lead_h} ({len(uncovered)} uncovered forecast step(s) in total)"
        )
    n_points = north.groupby(["init_time", "lead_h"])["ws100"].size()
    logger.debug(
        "Spatial average over %d-%d grid points north of %.2f",
        n_points.min(),
        n_points.max(),
        lat_min,
    )
    return averaged.rename("ws_mean")


def build_cases(
    nwp: pd.DataFrame,
    production: Optional[pd.Series] = None,
    T: int = DEFAULT_T,
    lat_min: float = DEFAULT_LAT_MIN,
) -> List[ForecastCase]:
    """
    Run the full preprocessing chain and return one forecast case per init_time.

    Cases whose observation trajectory has missing hours keep their covariates
    but carry no observations, so they can still be forecast targets while
    being excluded from training.
    """
    averaged = spatial_average(ensemble_mean(nwp), lat_min)
    cases = []
    n_dropped = 0
    for init_time, knots in averaged.groupby(level="init_time", sort=True):
        series = {int(lead): float(v) for (_, lead), v in knots.items()}
        x_w = interpolate_hourly(series, T)
        y = None
        if production is not None:
            hours = pd.Timestamp(init_time) + pd.to_timedelta(np.arange(1, T + 1), unit="h")
            y_obs = production.reindex(hours).to_numpy(dtype=float)
            if np.any(np.isnan(y_obs)):
                n_dropped += 1
                logger.warning(
                    "Case %s has %d missing production hour(s); excluded from training",
                    init_time,
                    int(np.isnan(y_obs).sum()),
                )
            else:
                y = y_obs
        cases.append(ForecastCase(pd.Timestamp(init_time), x_w, y))
    logger.info("Built %d forecast cases (%d without complete observations)", len(cases), n_dropped)
    return cases


def build_windows(cases: Sequence[ForecastCase], window_days: int) -> List[TrainingWindow]:
    """
    Build rolling training windows of the ``window_days`` most recent observed cases.

    Every case with at least ``window_days`` observed predecessors becomes a
    target. Windows are purely chronological, so early targets of a year are
    trained on the end of the previous year.
    """
    if window_days < 1:
        raise ValueError(f"window_days must be at least 1, got {window_days}")
    ordered = list(cases)
    for prev, nxt in zip(ordered, ordered[1:]):
        if nxt.init_time <= prev.init_time:
            raise ValueError(
                f"Cases must be sorted by init_time ({prev.init_time} precedes {nxt.init_time})"
            )

    windows = []
    observed: List[ForecastCase] = []
    for case in ordered:
        if len(observed) >= window_days:
            windows.append(TrainingWindow(tuple(observed[-window_days:]), case))
        if case.has_observations:
            observed.append(case)
    logger.info("Built %d training windows of %d days", len(windows), window_days)
    return windows


def earliest_target(cases: Sequence[ForecastCase], window_days: int) -> Optional[pd.Timestamp]:
    """First init_time with ``window_days`` observed predecessors, or None."""
    observed = [c for c in cases if c.has_observations]
    if len(observed) < window_days:
        return None
    last_needed = observed[window_days - 1].init_time
    later = [c.init_time for c in cases if c.init_time > last_needed]
    return min(later) if later else None


def window_for_target(
    cases: Sequence[ForecastCase], init_time: pd.Timestamp, window_days: int
) -> TrainingWindow:
    """
    Training window of the case initialized at ``init_time``.

    Raises:
    -------
    DataError
        If there is no such case, or fewer than ``window_days`` observed cases
        precede it (the message names the earliest feasible target)
    """
    init_time = pd.Timestamp(init_time)
    if init_time.tzinfo is None:
        init_time = init_time.tz_localize("UTC")
    matches = [c for c in cases if c.init_time == init_time]
    if not matches:
        raise DataError(f"No NWP covariates for init_time {init_time}")
    history = sorted(
        (c for c in cases if c.init_time < init_time and c.has_observations),
        key=lambda c: c.init_time,
    )
    if len(history) < window_days:
        earliest = earliest_target(cases, window_days)
        hint = f"earliest feasible target is {earliest}" if earliest else "no feasible target"
        raise DataError(
            f"Only {len(history)} observed cases precede {init_time}, "
            f"need {window_days} ({hint})"
        )
    return TrainingWindow(tuple(history[-window_days:]), matches[0])


def read_nwp_csv(path: Union[str, Path]) -> pd.DataFrame:
    """Read an NWP CSV with header ``init_time,lead_h,lat,lon,member,ws100``."""
    frame = pd.read_csv(path)
    if list(frame.columns) != NWP_COLUMNS:
        raise DataError(
            f"{path}: expected header {','.join(NWP_COLUMNS)}, got {list(frame.columns)}"
        )
    frame["init_time"] = pd.to_datetime(frame["init_time"], utc=True)
    frame["lead_h"] = frame["lead_h"].astype(int)
    frame["member"] = frame["member"].astype(int)
    if (frame["ws100"] < 0).any():
        bad = frame[frame["ws100"] < 0].iloc[0]
        raise DataError(
            f"{path}: negative wind speed at init_time={bad.init_time}, lead_h={bad.lead_h}"
        )
    return frame


def read_production_csv(path: Union[str, Path]) -> pd.Series:
    """Read hourly production from a CSV with header ``time,power_mw``."""
    frame = pd.read_csv(path)
    if list(frame.columns) != PRODUCTION_COLUMNS:
        raise DataError(
            f"{path}: expected header {','.join(PRODUCTION_COLUMNS)}, got {list(frame.columns)}"
        )
    times = pd.to_datetime(frame["time"], utc=True)
    if not times.is_monotonic_increasing or times.duplicated().any():
        raise DataError(f"{path}: timestamps must be strictly increasing")
    if (times != times.dt.floor("h")).any():
        raise DataError(f"{path}: timestamps must lie on the hour")
    power = frame["power_mw"].astype(float)
    if (power < 0).any():
        raise DataError(f"{path}: negative production at {times[power < 0].iloc[0]}")
    return pd.Series(power.to_numpy(), index=pd.DatetimeIndex(times), name="power_mw")


def case_filename(init_time: pd.Timestamp) -> str:
    return pd.Timestamp(init_time).strftime(CASE_FILE_FORMAT) + ".csv"


def write_case_csv(case: ForecastCase, directory: Union[str, Path]) -> Path:
    """Write one case as ``lead_h,ws_mean,power_mw`` (power empty when unobserved)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "lead_h": np.arange(1, case.T + 1),
            "ws_mean": case.x_w,
            "power_mw": case.y if case.y is not None else np.full(case.T, np.nan),
        }
    )
    path = directory / case_filename(case.init_time)
    frame.to_csv(path, index=False, float_format="%.10g")
    return path


def read_case_csv(path: Union[str, Path]) -> ForecastCase:
    path = Path(path)
    frame = pd.read_csv(path)
    if list(frame.columns)[:2] != CASE_COLUMNS[:2]:
        raise DataError(f"{path}: expected header {','.join(CASE_COLUMNS)}")
    init_time = pd.to_datetime(path.stem, format=CASE_FILE_FORMAT, utc=True)
    leads = frame["lead_h"].to_numpy()
    if not np.array_equal(leads, np.arange(1, len(frame) + 1)):
        raise DataError(f"{path}: lead_h must run 1..T without gaps")
    y = None
    if "power_mw" in frame.columns and frame["power_mw"].notna().all():
        y = frame["power_mw"].to_numpy(dtype=float)
    elif "power_mw" in frame.columns and frame["power_mw"].notna().any():
        logger.warning("Case %s has missing production hours; excluded from training", init_time)
    return ForecastCase(init_time, frame["ws_mean"].to_numpy(dtype=float), y)


def read_case_dir(directory: Union[str, Path]) -> List[ForecastCase]:
    """Read every cached case in ``directory``, sorted by init_time."""
    paths = sorted(Path(directory).glob("*.csv"))
    if not paths:
        raise DataError(f"No case files found in {directory}")
    cases = [read_case_csv(p) for p in paths]
    cases.sort(key=lambda c: c.init_time)
    return cases


def write_case_dir(cases: Iterable[ForecastCase], directory: Union[str, Path]) -> List[Path]:
    return [write_case_csv(case, directory) for case in cases]
