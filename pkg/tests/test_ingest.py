import numpy as np
import pandas as pd
import pytest
from scipy.interpolate import CubicSpline

from windtraj.errors import DataError
from windtraj.ingest import (
    ForecastCase,
    NwpGridRecord,
    TrainingWindow,
    build_cases,
    build_windows,
    earliest_target,
    ensemble_mean,
    interpolate_hourly,
    read_case_dir,
    records_to_frame,
    spatial_average,
    window_for_target,
    write_case_dir,
)

INIT = pd.Timestamp("2012-03-01", tz="UTC")


def _record(value, lat=52.0, lon=10.0, member=0, lead_h=3):
    return NwpGridRecord(INIT, lead_h, lat, lon, member, value)


def _daily_cases(make_case, n, T=3, observed=True):
    return [
        make_case(d, np.full(T, 5.0), np.full(T, 100.0) if observed else None)
        for d in range(n)
    ]


class TestEnsembleMean:
    """Reduction of member forecasts to the ensemble mean."""

    def test_two_members(self):
        out = ensemble_mean([_record(4.0, member=1), _record(6.0, member=2)])
        assert len(out) == 1
        assert out["ws100"].iloc[0] == pytest.approx(5.0)
        assert out["member"].iloc[0] == 0

    def test_single_member(self):
        out = ensemble_mean([_record(7.3, member=1)])
        assert out["ws100"].iloc[0] == pytest.approx(7.3)

    def test_fifty_members(self):
        out = ensemble_mean([_record(float(k), member=k) for k in range(1, 51)])
        assert out["ws100"].iloc[0] == pytest.approx(25.5)

    def test_missing_member_names_cell(self):
        records = [
            _record(4.0, member=1, lat=52.0),
            _record(6.0, member=2, lat=52.0),
            _record(5.0, member=1, lat=53.0),
        ]
        with pytest.raises(DataError, match="lat=53"):
            ensemble_mean(records)

    def test_repeated_record_rejected(self):
        records = [_record(4.0, member=1), _record(6.0, member=2), _record(5.0, member=2)]
        with pytest.raises(DataError, match="Repeated record for member=2"):
            ensemble_mean(records)

    def test_negative_wind_speed_rejected(self):
        with pytest.raises(ValueError):
            _record(-1.0)


class TestInterpolateHourly:
    """Natural cubic spline from native lead times to hourly values."""

    def test_constant_series(self):
        series = {h: 5.0 for h in range(0, 13, 3)}
        assert np.allclose(interpolate_hourly(series, T=12), 5.0)

    def test_affine_series(self):
        series = {h: 2.0 * h for h in range(0, 13, 3)}
        assert np.allclose(interpolate_hourly(series, T=12), 2.0 * np.arange(1, 13))

    def test_six_hourly_knots(self):
        series = {h: 1.0 + 0.5 * h for h in range(0, 25, 6)}
        assert np.allclose(interpolate_hourly(series, T=24), 1.0 + 0.5 * np.arange(1, 25))

    def test_bump_matches_clamped_spline(self):
        series = {0: 0.0, 3: 0.0, 6: 9.0, 9: 0.0, 12: 0.0}
        out = interpolate_hourly(series, T=12)
        reference = CubicSpline([0, 3, 6, 9, 12], [0, 0, 9, 0, 0], bc_type="natural")
        expected = np.maximum(reference(np.arange(1, 13)), 0.0)
        assert np.all(out >= 0)
        assert np.allclose(out, expected)
        assert out[5] == pytest.approx(9.0)

    def test_too_few_knots(self):
        with pytest.raises(DataError, match="4 knots"):
            interpolate_hourly({0: 1.0, 3: 1.0, 6: 1.0}, T=6)

    def test_no_extrapolation(self):
        with pytest.raises(DataError, match="extrapolation"):
            interpolate_hourly({h: 1.0 for h in range(0, 10, 3)}, T=12)


class TestSpatialAverage:
    """Latitude-filtered mean over grid points."""

    def test_southern_point_excluded(self):
        out = spatial_average([_record(3.0, lat=52.0), _record(100.0, lat=50.0)], lat_min=51.0)
        assert out.iloc[0] == pytest.approx(3.0)

    def test_mean_of_points(self):
        records = [_record(v, lat=lat) for v, lat in [(2.0, 52.0), (4.0, 53.0), (6.0, 54.0)]]
        assert spatial_average(records).iloc[0] == pytest.approx(4.0)

    def test_many_points(self):
        values = np.arange(371, dtype=float)
        records = [_record(v, lat=51.5, lon=float(i)) for i, v in enumerate(values)]
        records.append(_record(1e6, lat=50.0))
        assert spatial_average(records).iloc[0] == pytest.approx(values.mean())

    def test_no_points_north(self):
        with pytest.raises(DataError):
            spatial_average([_record(3.0, lat=50.0)])

    def test_step_without_northern_points(self):
        records = [
            _record(3.0, lat=52.0, lead_h=3),
            _record(4.0, lat=50.0, lead_h=6),
            _record(5.0, lat=52.0, lead_h=9),
        ]
        with pytest.raises(DataError, match="lead_h=6"):
            spatial_average(records, lat_min=51.0)


class TestBuildCases:
    """End-to-end preprocessing of NWP and production tables."""

    def _nwp(self, n_days, value=6.0):
        rows = []
        for day in range(n_days):
            init = INIT + pd.Timedelta(days=day)
            for lead in range(0, 13, 3):
                for member in (1, 2):
                    rows.append((init, lead, 52.0, 10.0, member, value + member - 1.5))
        return records_to_frame(
            NwpGridRecord(*row) for row in rows
        )

    def test_cases_from_tables(self):
        nwp = self._nwp(2)
        hours = pd.date_range(INIT, periods=60, freq="h")
        production = pd.Series(np.arange(60, dtype=float), index=hours)
        cases = build_cases(nwp, production, T=12)
        assert len(cases) == 2
        assert np.allclose(cases[0].x_w, 6.0)
        assert np.array_equal(cases[0].y, np.arange(1, 13, dtype=float))
        assert np.array_equal(cases[1].y, np.arange(25, 37, dtype=float))

    def test_missing_production_hours(self):
        nwp = self._nwp(2)
        hours = pd.date_range(INIT, periods=20, freq="h")
        production = pd.Series(np.ones(20), index=hours)
        cases = build_cases(nwp, production, T=12)
        assert cases[0].has_observations
        assert not cases[1].has_observations


class TestBuildWindows:
    """Rolling chronological training windows."""

    def test_one_window(self, make_case):
        cases = _daily_cases(make_case, 101)
        windows = build_windows(cases, 100)
        assert len(windows) == 1
        assert windows[0].target is cases[100]
        assert windows[0].N == 100

    def test_boundary(self, make_case):
        assert build_windows(_daily_cases(make_case, 100), 100) == []

    def test_long_series(self, make_case):
        assert len(build_windows(_daily_cases(make_case, 465, T=1), 100)) == 365

    def test_training_precedes_target(self, make_case):
        windows = build_windows(_daily_cases(make_case, 30), 10)
        for window in windows:
            assert max(c.init_time for c in window.cases) < window.target.init_time
            assert window.cases[-1].init_time == window.target.init_time - pd.Timedelta(days=1)

    def test_unobserved_cases_skipped_in_training(self, make_case):
        cases = _daily_cases(make_case, 12)
        cases[5] = cases[5].without_observations()
        windows = build_windows(cases, 10)
        assert len(windows) == 1
        assert windows[0].target is cases[11]
        assert all(c.has_observations for c in windows[0].cases)

    def test_unsorted_rejected(self, make_case):
        cases = _daily_cases(make_case, 5)
        with pytest.raises(ValueError, match="sorted"):
            build_windows(cases[::-1], 2)

    def test_window_rejects_future_case(self, make_case):
        cases = _daily_cases(make_case, 3)
        with pytest.raises(ValueError, match="precede"):
            TrainingWindow((cases[0], cases[2]), cases[1])


class TestWindowForTarget:
    """Selecting the training window of a single target."""

    def test_naive_time_is_utc(self, make_case):
        cases = _daily_cases(make_case, 8)
        window = window_for_target(cases, pd.Timestamp("2012-01-06"), 5)
        assert window.target is cases[5]
        assert window.N == 5

    def test_unknown_init_time(self, make_case):
        with pytest.raises(DataError, match="No NWP covariates"):
            window_for_target(_daily_cases(make_case, 8), "2013-01-01", 5)

    def test_insufficient_history_names_earliest_target(self, make_case):
        cases = _daily_cases(make_case, 8)
        with pytest.raises(DataError, match="2012-01-06"):
            window_for_target(cases, cases[2].init_time, 5)

    def test_earliest_target(self, make_case):
        cases = _daily_cases(make_case, 8)
        assert earliest_target(cases, 5) == cases[5].init_time
        assert earliest_target(cases, 8) is None


class TestCaseCache:
    """Round trip through the per-case CSV cache."""

    def test_write_and_read(self, tmp_path, make_case):
        cases = [
            make_case(0, [1.0, 2.0], [10.0, 20.0]),
            make_case(1, [3.0, 4.0]),
        ]
        write_case_dir(cases, tmp_path)
        loaded = read_case_dir(tmp_path)
        assert [c.init_time for c in loaded] == [c.init_time for c in cases]
        assert np.allclose(loaded[0].y, [10.0, 20.0])
        assert loaded[1].y is None

    def test_empty_directory(self, tmp_path):
        with pytest.raises(DataError):
            read_case_dir(tmp_path)

    def test_case_validation(self):
        with pytest.raises(ValueError):
            ForecastCase(INIT, np.array([1.0, 2.0]), np.array([1.0]))
