"""Cloud-cover series and scheduler-input filtering.

Cloud cover arrives as hourly values per station and day (columns h00..h23).
Within the simulation it is piecewise constant: the value at hour H holds
for every slot starting in [H:00, H+1:00). Filtering removes links whose
cloud cover strictly exceeds a threshold from the scheduler input so the
slots can serve somebody else instead.
"""

from __future__ import annotations

import csv
import datetime as _dt
from dataclasses import dataclass

import numpy as np

from .channel import EstimateTable
from .scenario import Scenario


class WeatherError(ValueError):
    pass


@dataclass
class CloudSeries:
    """Hourly cloud cover per station for one day.

    ``hourly`` maps station_id -> float array of shape (24,), values in
    [0, 1]. Stations absent from the map are treated as clear sky.
    """

    date: _dt.date
    hourly: dict

    def cloud_at(self, station_id: int, slot: int, slot_duration_s: float) -> float:
        """Piecewise-constant lookup, wrapping past the stored day."""
        series = self.hourly.get(station_id)
        if series is None:
            return 0.0
        hour = int(slot * slot_duration_s // 3600) % 24
        return float(series[hour])


def load_clouds(path, date: _dt.date = None) -> CloudSeries:
    """Read a clouds CSV (station_id, date, h00..h23).

    With ``date`` given, only matching rows are kept; otherwise all rows
    must share one date. A station may appear at most once per date.
    """
    hour_cols = [f"h{h:02d}" for h in range(24)]
    by_date: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = ["station_id", "date"] + hour_cols
        if reader.fieldnames != need:
            raise WeatherError(f"{path}: expected columns {need}")
        for row in reader:
            row_date = _dt.date.fromisoformat(row["date"])
            sid = int(row["station_id"])
            day = by_date.setdefault(row_date, {})
            if sid in day:
                raise WeatherError(f"{path}: duplicate station {sid} for {row_date}")
            values = np.array([float(row[c]) for c in hour_cols])
            if np.any((values < 0.0) | (values > 1.0)):
                raise WeatherError(f"{path}: station {sid} cloud cover out of [0, 1]")
            day[sid] = values
    if date is not None:
        if date not in by_date:
            raise WeatherError(f"{path}: no rows for {date}")
        return CloudSeries(date=date, hourly=by_date[date])
    if not by_date:
        raise WeatherError(f"{path}: no rows")
    if len(by_date) > 1:
        raise WeatherError(f"{path}: multiple dates present, pass an explicit date")
    only_date, hourly = by_date.popitem()
    return CloudSeries(date=only_date, hourly=hourly)


def cloud_matrix(series: CloudSeries, scenario: Scenario) -> np.ndarray:
    """Dense (n_stations, n_slots) cloud-cover array for estimate building."""
    time = scenario.time
    hours = (np.arange(time.slot_count, dtype=np.int64)
             * time.slot_duration_s // 3600).astype(np.int64) % 24
    out = np.zeros((scenario.n_stations, time.slot_count))
    for i, st in enumerate(scenario.stations):
        series_g = series.hourly.get(st.station_id)
        if series_g is not None:
            out[i] = series_g[hours]
    return out


def apply_filter(estimates: EstimateTable, threshold: float = 0.8) -> EstimateTable:
    """Drop rows whose cloud cover strictly exceeds ``threshold``.

    Equality stays in: a link at exactly the threshold is still offered to
    the schedulers. Returns a new table; the input is untouched.
    """
    if not 0.0 <= threshold <= 1.0:
        raise WeatherError("filter threshold out of [0, 1]")
    keep = estimates.cloud <= threshold
    return estimates.take(keep)
