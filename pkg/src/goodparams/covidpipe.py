"""Weekly fitting of the SEIR-COVID model to recorded infections and deaths.

For every fitting day ``t0`` the pipeline

1. estimates the death proportion ``p_D`` from the week ending on ``t0``;
2. calibrates the tolerance ``r(t0)`` as an inflated minimum of the worst
   relative error over a pre-sample of candidates;
3. keeps the candidates whose recorded infections ``I_s`` and deaths ``D``
   stay within ``r(t0)`` of the data on every day of ``[t0, t0 + 6]``;
4. runs each accepted candidate forward and reports the day of maximum daily
   deaths after ``t0``.

Unobserved compartments at ``t0`` are rebuilt per candidate from the recorded
ones, so every candidate starts from its own initial state.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import candidates as cand
from .dynsys import SEIR_COMPARTMENTS, SeirCovidModel, SeirCovidParams, Trajectory, simulate_batch
from .estimator import GoodSet, Target, rejection_estimate, score_sample
from .fitness import SUP_WINDOW, FitnessSpec

log = logging.getLogger(__name__)

IS_COL = SEIR_COMPARTMENTS.index("I_s")
D_COL = SEIR_COMPARTMENTS.index("D")
FIT_DAYS = 7
SMOOTH_HALF_WIDTH = 3
MIN_TOLERANCE = 1e-12
PERCENTILES = (2.5, 50.0, 97.5)
GRID_PARAMS = ("beta", "tau_E", "tau_R", "tau_S", "tau_RS", "tau_D", "p_S")
CSV_COLUMNS = ("date", "confirmed", "deaths", "recovered")


class DataError(ValueError):
    """Problems with an observed series."""


class MissingColumnError(DataError):
    pass


class DateGapError(DataError):
    pass


class DecreasingSeriesError(DataError):
    pass


class InitialStateError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


def smooth7(x: Sequence[float]) -> np.ndarray:
    """Centred 7-day mean; windows shrink at the ends of the series."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n == 0:
        raise ValueError("cannot smooth an empty series")
    csum = np.concatenate([[0.0], np.cumsum(x)])
    t = np.arange(n)
    lo = np.maximum(t - SMOOTH_HALF_WIDTH, 0)
    hi = np.minimum(t + SMOOTH_HALF_WIDTH, n - 1)
    return (csum[hi + 1] - csum[lo]) / (hi - lo + 1)


def _incidence(cum: np.ndarray) -> np.ndarray:
    return np.diff(cum, prepend=0.0)


@dataclass
class ObservedSeries:
    """Daily cumulative counts plus the derived (optionally smoothed) series.

    Incidences are day-to-day differences of the cumulative counts (the first
    day counts in full).  Prevalences are running sums of the smoothed
    incidences, and recorded active infections are
    ``confirmed - recovered - deaths``.
    """

    dates: list[dt.date]
    confirmed_cum: np.ndarray
    deaths_cum: np.ndarray
    recovered_cum: np.ndarray
    smooth: bool = True

    confirmed_inc: np.ndarray = field(init=False, repr=False)
    deaths_inc: np.ndarray = field(init=False, repr=False)
    recovered_inc: np.ndarray = field(init=False, repr=False)
    confirmed: np.ndarray = field(init=False, repr=False)
    deaths: np.ndarray = field(init=False, repr=False)
    recovered: np.ndarray = field(init=False, repr=False)
    infected_stats: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.dates = list(self.dates)
        n = len(self.dates)
        if n == 0:
            raise DataError("empty series")
        for a, b in zip(self.dates, self.dates[1:]):
            if (b - a).days != 1:
                raise DateGapError(f"dates not contiguous between {a} and {b}")
        for name in ("confirmed_cum", "deaths_cum", "recovered_cum"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise DataError(f"{name} has {arr.size} values for {n} dates")
            if np.any(arr < 0):
                raise DataError(f"{name} has negative counts")
            bad = np.flatnonzero(np.diff(arr) < 0)
            if bad.size:
                raise DecreasingSeriesError(f"{name} decreases on {self.dates[bad[0] + 1]}")
            setattr(self, name, arr)
        smoother = smooth7 if self.smooth else (lambda v: v)
        self.confirmed_inc = smoother(_incidence(self.confirmed_cum))
        self.deaths_inc = smoother(_incidence(self.deaths_cum))
        self.recovered_inc = smoother(_incidence(self.recovered_cum))
        self.confirmed = np.cumsum(self.confirmed_inc)
        self.deaths = np.cumsum(self.deaths_inc)
        self.recovered = np.cumsum(self.recovered_inc)
        self.infected_stats = self.confirmed - self.recovered - self.deaths

    def __len__(self) -> int:
        return len(self.dates)

    def day_index(self, day: int | dt.date | str) -> int:
        if isinstance(day, str):
            day = dt.date.fromisoformat(day)
        if isinstance(day, dt.date):
            idx = (day - self.dates[0]).days
        else:
            idx = int(day)
        if not 0 <= idx < len(self):
            raise DataError(f"day {day} outside the series {self.dates[0]}..{self.dates[-1]}")
        return idx

    def observed_trajectory(self) -> Trajectory:
        """Observed SEIR states; unobserved compartments are NaN."""
        states = np.full((len(self), len(SEIR_COMPARTMENTS)), np.nan)
        states[:, IS_COL] = self.infected_stats
        states[:, D_COL] = self.deaths
        return Trajectory(states, SEIR_COMPARTMENTS, 0)

    def head(self, n_days: int) -> "ObservedSeries":
        return ObservedSeries(self.dates[:n_days], self.confirmed_cum[:n_days], self.deaths_cum[:n_days],
                              self.recovered_cum[:n_days], self.smooth)


def load_series(path, smooth: bool = True) -> ObservedSeries:
    """Read a ``date,confirmed,deaths,recovered`` CSV of cumulative counts."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise MissingColumnError(f"{path}: missing column(s) {', '.join(missing)}")
        rows = list(reader)
    try:
        dates = [dt.date.fromisoformat(r["date"].strip()) for r in rows]
        cols = {c: np.array([float(r[c]) for r in rows]) for c in CSV_COLUMNS[1:]}
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return ObservedSeries(dates, cols["confirmed"], cols["deaths"], cols["recovered"], smooth)


def write_series(series: ObservedSeries, path, integer: bool = False) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for i, d in enumerate(series.dates):
            vals = (series.confirmed_cum[i], series.deaths_cum[i], series.recovered_cum[i])
            w.writerow([d.isoformat(), *(str(int(round(v))) if integer else "%.17g" % v for v in vals)])


# -- per-candidate initial states ---------------------------------------------


def _initial_arrays(obs: ObservedSeries, t0: int, mparams: np.ndarray, population_N: float):
    if t0 + 1 >= len(obs):
        raise DataError(f"initial conditions at day {t0} need data for day {t0 + 1}")
    p = np.atleast_2d(mparams)
    tau_E, tau_R, tau_S, p_S = p[:, 1], p[:, 2], p[:, 3], p[:, 6]
    if np.any(p_S <= 0):
        raise InitialStateError("p_S must be positive")
    scale = (1 - p_S) / p_S
    Is0 = obs.infected_stats[t0]
    I0 = scale * Is0
    I1 = scale * obs.infected_stats[t0 + 1]
    R0 = (scale + 1) * obs.recovered[t0]
    D0 = obs.deaths[t0]
    gamma_I = 1 / tau_E
    nu_R = (1 - p_S) / tau_R
    gamma_S = p_S / tau_S
    E0 = 1 / gamma_I * (I1 + (nu_R + gamma_S - 1) * I0)
    clamped = E0 < 0
    E0 = np.where(clamped, 0.0, E0)
    S0 = population_N - E0 - I0 - Is0 - R0 - D0
    states = np.stack([S0, E0, I0, np.full_like(S0, Is0), R0, np.full_like(S0, D0)], axis=1)
    return states, S0 >= 0, clamped


def initial_conditions(obs: ObservedSeries, t0: int, params: SeirCovidParams, population_N: float) -> np.ndarray:
    """Initial SEIR state at ``t0`` for one candidate."""
    states, ok, clamped = _initial_arrays(obs, t0, params.as_array()[None, :], population_N)
    if clamped[0]:
        warnings.warn(f"negative exposed count at day {t0} clamped to 0", RuntimeWarning, stacklevel=2)
    if not ok[0]:
        raise InitialStateError(
            f"population {population_N} too small for the scaled compartments at day {t0}"
        )
    return states[0]


def moving_death_rate(obs: ObservedSeries, t0: int, mode: str = "weekly") -> float:
    """Deaths over confirmed cases, from the week ending on ``t0`` or cumulatively."""
    if mode == "weekly":
        if t0 < FIT_DAYS - 1:
            raise DataError(f"p_D at day {t0} needs {FIT_DAYS} days of data")
        sl = slice(t0 - FIT_DAYS + 1, t0 + 1)
        deaths, confirmed = obs.deaths_inc[sl].sum(), obs.confirmed_inc[sl].sum()
    elif mode == "cumulative":
        deaths, confirmed = obs.deaths[t0], obs.confirmed[t0]
    else:
        raise ValueError(f"unknown p_D mode {mode!r}")
    if confirmed <= 0:
        raise DataError(f"no confirmed cases in the p_D window ending on day {t0}")
    return float(min(max(deaths / confirmed, 0.0), 1.0))


# -- weekly fitting -------------------------------------------------------------


def check_window(obs: ObservedSeries, t0: int) -> None:
    last = t0 + FIT_DAYS - 1 + (SMOOTH_HALF_WIDTH if obs.smooth else 0)
    if t0 < FIT_DAYS - 1 or last >= len(obs):
        raise DataError(f"day {t0}: need data on days {t0 - FIT_DAYS + 1}..{last}")
    window = slice(t0, t0 + FIT_DAYS)
    if np.any(obs.infected_stats[window] <= 0) or np.any(obs.deaths[window] <= 0):
        raise DataError(f"day {t0}: recorded infections and deaths must be positive in the window")


def week_target(obs: ObservedSeries, t0: int, p_D: float, population_N: float, r: float = 1.0,
                horizon: int | None = None) -> Target:
    model = SeirCovidModel(population_N)

    def extend(rows: np.ndarray) -> np.ndarray:
        return np.column_stack([rows, np.full(rows.shape[0], p_D)])

    def initial(mparams: np.ndarray):
        states, ok, _ = _initial_arrays(obs, t0, mparams, population_N)
        return states, ok

    fitness = FitnessSpec(SUP_WINDOW, (t0, t0 + FIT_DAYS - 1), (IS_COL, D_COL), r=r)
    return Target(model, obs.observed_trajectory(), fitness, initial, start_time=t0, extend_params=extend,
                  summary_end=None if horizon is None else t0 + horizon, peak_component=D_COL,
                  peak_increments=True)


def _check_grid(grid: cand.CandidateGrid) -> None:
    if grid.names != GRID_PARAMS:
        raise ValueError(f"SEIR-COVID grid dimensions must be {GRID_PARAMS}, got {grid.names}")


def calibrate_r(grid: cand.CandidateGrid, q: cand.DiscreteDist, obs: ObservedSeries, t0: int,
                n_pre: int = 100_000, seed: int = 0, inflation: float = 1.1,
                population_N: float = 1e6, p_D: float | None = None, p_D_mode: str = "weekly",
                workers: int = 1) -> float:
    """``inflation`` times the smallest worst relative error over ``n_pre`` sampled candidates."""
    _check_grid(grid)
    check_window(obs, t0)
    if p_D is None:
        p_D = moving_death_rate(obs, t0, p_D_mode)
    target = week_target(obs, t0, p_D, population_N)
    _, scores = score_sample(grid, target, n_pre, seed, q, workers)
    finite = scores[np.isfinite(scores)]
    if finite.size == 0:
        raise CalibrationError(f"day {t0}: no sampled candidate produced a valid simulation")
    return max(inflation * float(finite.min()), MIN_TOLERANCE)


@dataclass
class WeeklyFitResult:
    t0: int
    date: dt.date
    r_t0: float | None
    p_D: float | None
    good_set: GoodSet | None
    peak_days: np.ndarray
    percentiles: dict[float, float]
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "t0": self.t0,
            "date": self.date.isoformat(),
            "status": self.status,
            "r_t0": self.r_t0,
            "p_D": self.p_D,
            "percentiles": {f"{k:g}": v for k, v in self.percentiles.items()},
            "good_set": None if self.good_set is None else self.good_set.to_dict(),
        }


def peak_percentiles(peak_days: np.ndarray) -> dict[float, float]:
    if peak_days.size == 0:
        return {}
    return {p: float(np.percentile(peak_days, p)) for p in PERCENTILES}


def weekly_fit(grid: cand.CandidateGrid, q: cand.DiscreteDist, obs: ObservedSeries, t0: int,
               n: int = 500_000, seed: int = 0, population_N: float = 1e6, horizon: int = 730,
               r_t0: float | None = None, n_pre: int = 100_000, inflation: float = 1.1,
               p_D_mode: str = "weekly", workers: int = 1) -> WeeklyFitResult:
    """Rejection fit on the week starting at ``t0``; calibrates ``r(t0)`` unless given."""
    _check_grid(grid)
    check_window(obs, t0)
    p_D = moving_death_rate(obs, t0, p_D_mode)
    if r_t0 is None:
        r_t0 = calibrate_r(grid, q, obs, t0, n_pre, cand.derive_seed(seed, t0, 0), inflation,
                           population_N, p_D, workers=workers)
    target = week_target(obs, t0, p_D, population_N, r_t0, horizon)
    good = rejection_estimate(grid, target, n, cand.derive_seed(seed, t0, 1), q, workers)
    peaks = good.peak_days()
    status = "ok" if good.n_distinct_good else "empty"
    log.info("t0=%s r=%.4g p_D=%.4g good=%d", obs.dates[t0], r_t0, p_D, good.n_distinct_good)
    return WeeklyFitResult(t0, obs.dates[t0], r_t0, p_D, good, peaks, peak_percentiles(peaks), status)


def fit_days(obs: ObservedSeries, start, end, stride: int = 7) -> list[int]:
    a, b = obs.day_index(start), obs.day_index(end)
    return list(range(a, b + 1, stride))


def weekly_sequence(grid: cand.CandidateGrid, q: cand.DiscreteDist, obs: ObservedSeries, start, end,
                    stride: int = 7, **kwargs) -> list[WeeklyFitResult]:
    """:func:`weekly_fit` for every ``stride``-th day from ``start`` to ``end``; failures are recorded."""
    results = []
    for t0 in fit_days(obs, start, end, stride):
        try:
            results.append(weekly_fit(grid, q, obs, t0, **kwargs))
        except (DataError, CalibrationError, InitialStateError) as exc:
            log.warning("t0=%s failed: %s", obs.dates[t0], exc)
            results.append(WeeklyFitResult(t0, obs.dates[t0], None, None, None, np.empty(0), {},
                                           status=f"error: {exc}"))
    return results


def peaks_table(results: Sequence[WeeklyFitResult]) -> list[list]:
    """Rows ``(t0, p2.5, median, p97.5)`` with peaks as ISO dates."""
    rows = []
    for res in results:
        if not res.percentiles:
            rows.append([res.date.isoformat(), "", "", ""])
            continue
        start = res.date - dt.timedelta(days=res.t0)
        rows.append([res.date.isoformat(),
                     *((start + dt.timedelta(days=round(res.percentiles[p]))).isoformat() for p in PERCENTILES)])
    return rows


def params_summary(results: Sequence[WeeklyFitResult]) -> list[list]:
    """Per fitting day and parameter: count, min, quartiles and max of the good set."""
    rows = []
    for res in results:
        if res.good_set is None or not res.good_set.n_distinct_good:
            continue
        names = list(res.good_set.param_names)
        for name in names:
            v = res.good_set.values(name)
            rows.append([res.date.isoformat(), name, v.size, *np.percentile(v, [0, 25, 50, 75, 100])])
        rows.append([res.date.isoformat(), "p_D", res.good_set.n_distinct_good, *([res.p_D] * 5)])
    return rows


# -- synthetic data ---------------------------------------------------------------


def synthetic_series(params: dict[str, float], n_days: int, restart_days: Sequence[int],
                     population_N: float = 1e6, start_date: dt.date = dt.date(2020, 3, 1),
                     seed_state: Sequence[float] | None = None, p_D0: float = 0.03,
                     p_D_mode: str = "weekly") -> ObservedSeries:
    """Noise-free cumulative series generated by one parameter vector.

    Between restart days the model is iterated as is.  On every restart day
    ``t0`` the state is rebuilt exactly as the fitting pipeline rebuilds it
    (scaled unobserved compartments, inverted exposed count, ``p_D`` from the
    preceding week), so the generating parameters reproduce each fitted week.
    The returned series is unsmoothed.
    """
    theta = [float(params[k]) for k in GRID_PARAMS]
    model = SeirCovidModel(population_N)
    if seed_state is None:
        seed_state = (population_N - 551.0, 300.0, 200.0, 50.0, 0.0, 1.0)
    x = np.asarray(seed_state, dtype=float)
    restarts = set(int(d) for d in restart_days)
    if min(restarts, default=FIT_DAYS) < FIT_DAYS - 1 or max(restarts, default=0) + 1 >= n_days:
        raise ValueError("restart days need a full preceding week and one following day")
    confirmed = np.zeros(n_days)
    deaths = np.zeros(n_days)
    recovered = np.zeros(n_days)
    confirmed[0], deaths[0] = x[IS_COL] + x[D_COL], x[D_COL]
    dates = [start_date + dt.timedelta(days=i) for i in range(n_days)]
    p_D = p_D0

    def coeffs_for(pd):
        return model.prepare(np.array(theta + [pd]))

    def record(day, state, coeffs):
        _, _, gamma_S, _, nu_RS, _ = (c[0] for c in coeffs)
        confirmed[day + 1] = confirmed[day] + gamma_S * state[2]
        recovered[day + 1] = recovered[day] + nu_RS * state[IS_COL]

    coeffs = coeffs_for(p_D)
    for day in range(n_days - 1):
        if day in restarts:
            prefix = ObservedSeries(dates[: day + 1], confirmed[: day + 1], deaths[: day + 1],
                                    recovered[: day + 1], smooth=False)
            p_D = moving_death_rate(prefix, day, p_D_mode)
            coeffs = coeffs_for(p_D)
            # Day t0 + 1 of the recorded compartments does not depend on E(t0).
            scale = (1 - theta[6]) / theta[6]
            provisional = x.copy()
            provisional[2] = scale * prefix.infected_stats[day]
            provisional[IS_COL] = prefix.infected_stats[day]
            nxt = model.advance(provisional[None, :], coeffs)[0]
            record(day, provisional, coeffs)
            deaths[day + 1] = nxt[D_COL]
            head = ObservedSeries(dates[: day + 2], confirmed[: day + 2], deaths[: day + 2],
                                  recovered[: day + 2], smooth=False)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                x = initial_conditions(head, day, SeirCovidParams(*theta, p_D), population_N)
        nxt = model.advance(x[None, :], coeffs)[0]
        record(day, x, coeffs)
        deaths[day + 1] = nxt[D_COL]
        x = nxt
    return ObservedSeries(dates, confirmed, deaths, recovered, smooth=False)


def true_peak_day(obs: ObservedSeries, t0: int, params: dict[str, float], population_N: float,
                  horizon: int = 730, p_D_mode: str = "weekly") -> int:
    """Daily-deaths peak of one parameter vector continued from its rebuilt state at ``t0``."""
    p_D = moving_death_rate(obs, t0, p_D_mode)
    theta = SeirCovidParams(*(params[k] for k in GRID_PARAMS), p_D)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        x0 = initial_conditions(obs, t0, theta, population_N)
    traj = simulate_batch(SeirCovidModel(population_N), theta.as_array()[None, :], x0, horizon)[0]
    return t0 + 1 + int(np.argmax(np.diff(traj[:, D_COL])))


def grid_from_table(values: dict[str, Sequence[float]]) -> cand.CandidateGrid:
    return cand.build_explicit_grid([(k, values[k]) for k in GRID_PARAMS])


# Candidate values for the US fit.
US_GRID_VALUES: dict[str, list[float]] = {
    "beta": [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.6, 0.7, 0.8, 0.9, 1, 1.1, 1.2, 1.3,
             1.4, 1.5],
    "tau_E": [4, 5, 6, 7],
    "tau_R": list(range(5, 15)),
    "tau_S": list(range(3, 15)),
    "tau_RS": list(range(5, 29)),
    "tau_D": list(range(1, 29)),
    "p_S": [0.01, 0.025, 0.05, 0.075, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95,
            0.99],
}
