"""Synthetic daily weather and a conceptual snow + soil bucket watershed.

The generator only has to reproduce three dependency regimes: soil water
with memory spanning more than a year, snowpack that melts out every summer,
and streamflow dominated by same-day rain and melt. Years are a fixed 366
days long.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .data import TARGET_NAMES, WEATHER_NAMES, TimeSeriesDataset
from .errors import ConfigError, ParseError

DAYS_PER_YEAR = 366
CSV_COLUMNS = ("date",) + WEATHER_NAMES + TARGET_NAMES


@dataclass
class WeatherSeries:
    precip: np.ndarray
    tmin: np.ndarray
    tmax: np.ndarray
    srad: np.ndarray
    wind: np.ndarray
    rhum: np.ndarray
    doy: np.ndarray

    @property
    def n_days(self) -> int:
        return len(self.precip)

    def matrix(self) -> np.ndarray:
        return np.column_stack([getattr(self, n) for n in WEATHER_NAMES])


@dataclass
class WatershedParams:
    melt_rate: float = 3.0          # mm / degC / day
    freeze_temp: float = 0.0        # degC
    soil_capacity: float = 600.0    # mm
    et_coeff: float = 0.2           # mm per (MJ/m2) at full soil
    recession_k: float = 0.001      # 1/day
    infiltration_frac: float = 0.75

    def validate(self) -> None:
        if not self.melt_rate > 0:
            raise ConfigError(f"melt_rate must be > 0, got {self.melt_rate}")
        if not self.soil_capacity > 0:
            raise ConfigError(f"soil_capacity must be > 0, got {self.soil_capacity}")
        if not 0 < self.recession_k < 1:
            raise ConfigError(f"recession_k must be in (0, 1), got {self.recession_k}")
        if not 0 <= self.infiltration_frac <= 1:
            raise ConfigError(f"infiltration_frac must be in [0, 1], got {self.infiltration_frac}")
        if self.et_coeff < 0:
            raise ConfigError(f"et_coeff must be >= 0, got {self.et_coeff}")

    @classmethod
    def from_mapping(cls, values: dict) -> "WatershedParams":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown watershed parameter(s): {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in values.items()})


@dataclass
class TargetSeries:
    sw: np.ndarray
    sno: np.ndarray
    sf: np.ndarray
    et: np.ndarray  # diagnostic only, not exported

    def matrix(self) -> np.ndarray:
        return np.column_stack([self.sw, self.sno, self.sf])


def _ar1(rng: np.random.Generator, n: int, phi: float, sd: float) -> np.ndarray:
    return lfilter([1.0], [1.0, -phi], rng.normal(0.0, sd, n))


def gen_weather(seed: int, n_days: int) -> WeatherSeries:
    """Seasonal cycles plus autocorrelated noise; deterministic per seed.

    Annual precipitation totals follow a lag-1 autoregressive multiplier so
    that wet and dry spells last several years.
    """
    if n_days < DAYS_PER_YEAR:
        raise ConfigError(f"n_days must be >= {DAYS_PER_YEAR}, got {n_days}")
    rng = np.random.default_rng(seed)
    day = np.arange(n_days)
    doy = day % DAYS_PER_YEAR + 1
    year = day // DAYS_PER_YEAR
    season = np.cos(2 * np.pi * (doy - 200) / DAYS_PER_YEAR)  # +1 at midsummer

    n_years = int(year[-1]) + 1
    wet_log = _ar1(rng, n_years, 0.75, 0.30)
    wet_mult = np.exp(wet_log - 0.5 * wet_log.var())

    tmean = 4.0 + 15.0 * season + _ar1(rng, n_days, 0.75, 2.2)
    dtr = np.clip(11.0 + 2.0 * season + rng.normal(0.0, 1.5, n_days), 2.0, None)
    tmin = tmean - dtr / 2
    tmax = tmean + dtr / 2

    p_wet = 0.30 + 0.06 * season
    wet = rng.random(n_days) < p_wet
    amount = rng.gamma(0.8, 7.0, n_days) * wet_mult[year]
    precip = np.where(wet, amount, 0.0)

    srad = np.clip(15.0 + 9.0 * season - 5.0 * wet + rng.normal(0.0, 2.0, n_days), 0.5, None)
    wind = rng.gamma(4.0, 0.9, n_days)
    rhum = np.clip(0.62 - 0.08 * season + 0.18 * wet + _ar1(rng, n_days, 0.5, 0.06), 0.0, 1.0)
    return WeatherSeries(precip, tmin, tmax, srad, wind, rhum, doy)


def simulate_watershed(weather: WeatherSeries, params: WatershedParams,
                       sw0: float | None = None, sno0: float = 0.0) -> TargetSeries:
    """Run the daily bucket model.

    Order within a day: snow accumulation or melt, infiltration of the liquid
    input (overflow above capacity runs off), ET from the soil store, then
    baseflow ``recession_k * SW``. Streamflow is baseflow plus direct runoff.
    """
    params.validate()
    cap = params.soil_capacity
    sw = 0.5 * cap if sw0 is None else float(sw0)
    if not 0 <= sw <= cap:
        raise ConfigError(f"sw0 must be within [0, soil_capacity], got {sw}")
    sno = float(sno0)
    tmean = 0.5 * (weather.tmin + weather.tmax)
    precip = weather.precip
    srad = weather.srad
    n = weather.n_days
    out_sw, out_sno, out_sf, out_et = (np.empty(n) for _ in range(4))
    k, frac, melt_rate, t0 = params.recession_k, params.infiltration_frac, params.melt_rate, params.freeze_temp
    et_scale = params.et_coeff / cap

    for i in range(n):
        temp = tmean[i]
        p = precip[i]
        if temp < t0:
            sno += p
            liquid = 0.0
        else:
            melt = min(sno, melt_rate * (temp - t0))
            sno -= melt
            liquid = p + melt
        infil = frac * liquid
        runoff = liquid - infil
        sw += infil
        if sw > cap:
            runoff += sw - cap
            sw = cap
        et = min(sw, et_scale * srad[i] * sw)
        sw -= et
        base = k * sw
        sw -= base
        out_sw[i] = sw
        out_sno[i] = sno
        out_sf[i] = base + runoff
        out_et[i] = et
    return TargetSeries(out_sw, out_sno, out_sf, out_et)


def make_dataset(seed: int, years: int, params: WatershedParams | None = None) -> TimeSeriesDataset:
    params = params or WatershedParams()
    if years < 1:
        raise ConfigError(f"years must be >= 1, got {years}")
    weather = gen_weather(seed, years * DAYS_PER_YEAR)
    targets = simulate_watershed(weather, params)
    return TimeSeriesDataset.from_raw(weather.matrix(), targets.matrix(), weather.doy)


def export_csv(dataset: TimeSeriesDataset, path: str | Path) -> None:
    if dataset.norm_stats is not None or dataset.y_names != TARGET_NAMES:
        raise ConfigError("export expects a raw dataset carrying all three targets")
    path = Path(path)
    try:
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc
    with fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        weather = dataset.weather
        year_offset = 0
        for i in range(dataset.n_days):
            if i and dataset.doy[i] <= dataset.doy[i - 1]:
                year_offset += 1
            date = f"{year_offset + 1:04d}-{int(dataset.doy[i]):03d}"
            w.writerow([date, *map(repr, weather[i].tolist()), *map(repr, dataset.Y[i].tolist())])


def load_csv(path: str | Path) -> TimeSeriesDataset:
    path = Path(path)
    rows_in, rows_out, doys = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        if tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise ParseError(f"expected header {','.join(CSV_COLUMNS)}", line=1)
        nw = len(WEATHER_NAMES)
        for row in reader:
            line = reader.line_num
            if len(row) != len(CSV_COLUMNS):
                raise ParseError(f"expected {len(CSV_COLUMNS)} columns, found {len(row)}", line=line)
            try:
                _, doy = row[0].split("-")
                values = [float(v) for v in row[1:]]
                doy = int(doy)
            except ValueError as exc:
                raise ParseError(str(exc), line=line) from None
            if not 1 <= doy <= DAYS_PER_YEAR:
                raise ParseError(f"day of year {doy} outside 1..{DAYS_PER_YEAR}", line=line)
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite value", line=line)
            doys.append(doy)
            rows_in.append(values[:nw])
            rows_out.append(values[nw:])
    if not doys:
        raise ParseError("no data rows", line=2)
    return TimeSeriesDataset.from_raw(np.array(rows_in), np.array(rows_out), np.array(doys))


def lag_autocorr(x: np.ndarray, lag: int) -> float:
    x = np.asarray(x, dtype=np.float64) - np.mean(x)
    return float(np.dot(x[:-lag], x[lag:]) / np.dot(x, x))

