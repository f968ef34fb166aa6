"""Discrete-time compartmental models and their trajectories.

Two families are provided:

* ``sir``: proportions ``(S, I, R)`` driven by a transmission rate ``beta``
  and a recovery rate ``gamma``.
* ``seir-covid``: absolute counts ``(S, E, I, I_s, R, D)`` where ``I_s`` holds
  the infections that entered the official statistics and ``D`` the deaths.

Every model exposes the same small surface used by the estimator: a vectorised
``advance`` acting on a batch of states (one row per candidate, optionally
written into a caller-supplied ``out`` array), a ``prepare`` hook turning raw
parameter rows into per-row coefficients, and row-wise plus scalar state
validation.  Scalar and batch paths share the same
arithmetic, so a candidate simulated alone or inside a batch yields
bit-identical states.
"""

from __future__ import annotations

from dataclasses import dataclass, astuple
from typing import Sequence

import numpy as np

SIR_COMPARTMENTS = ("S", "I", "R")
SEIR_COMPARTMENTS = ("S", "E", "I", "I_s", "R", "D")

SIR_SUM_TOL = 1e-9
SEIR_SUM_RTOL = 1e-6

DEFAULT_US_POPULATION = 328_200_000


class StateError(ValueError):
    """A state vector violates its model invariants."""

    def __init__(self, message: str, day: int | None = None):
        self.day = day
        if day is not None:
            message = f"day {day}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class SirParams:
    beta: float
    gamma: float

    def __post_init__(self):
        if not (self.beta > 0 and self.gamma > 0):
            raise ValueError(f"SIR rates must be positive, got {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.beta, self.gamma], dtype=float)


@dataclass(frozen=True)
class SeirCovidParams:
    """Natural parameters: force of infection, mean durations (days) and proportions.

    ``p_D`` is not searched over; it is estimated from the data and attached
    to every candidate of a given week.
    """

    beta: float
    tau_E: float
    tau_R: float
    tau_S: float
    tau_RS: float
    tau_D: float
    p_S: float
    p_D: float = 0.0

    def __post_init__(self):
        taus = (self.tau_E, self.tau_R, self.tau_S, self.tau_RS, self.tau_D)
        if self.beta <= 0 or min(taus) <= 0:
            raise ValueError(f"beta and all durations must be positive, got {self}")
        if not 0 < self.p_S <= 1:
            raise ValueError(f"p_S must lie in (0, 1], got {self.p_S}")
        if not 0 <= self.p_D <= 1:
            raise ValueError(f"p_D must lie in [0, 1], got {self.p_D}")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


@dataclass(frozen=True)
class SeirCovidRates:
    beta: float
    gamma_I: float
    gamma_S: float
    nu_R: float
    nu_RS: float
    delta_death: float
    population_N: float

    def __post_init__(self):
        values = astuple(self)
        if not all(np.isfinite(v) and v >= 0 for v in values):
            raise ValueError(f"rates must be finite and non-negative, got {self}")


def rates_from_params(params: SeirCovidParams, population_N: float) -> SeirCovidRates:
    return SeirCovidRates(
        beta=params.beta,
        gamma_I=1.0 / params.tau_E,
        gamma_S=params.p_S / params.tau_S,
        nu_R=(1.0 - params.p_S) / params.tau_R,
        nu_RS=(1.0 - params.p_D) / params.tau_RS,
        delta_death=params.p_D / params.tau_D,
        population_N=float(population_N),
    )


# -- batch kernels -----------------------------------------------------------
# Each kernel maps an (n, k) array of states to the next day's states.  The
# expressions are written once and used by both scalar and batch callers.


def _sir_advance(x: np.ndarray, beta: np.ndarray, gamma: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    out = np.empty_like(x) if out is None else out
    S, I, R = x[:, 0], x[:, 1], x[:, 2]
    infections = beta * I * S
    recoveries = gamma * I
    out[:, 0] = S - infections
    out[:, 1] = I + infections - recoveries
    out[:, 2] = R + recoveries
    return out


def _seir_advance(
    x: np.ndarray,
    beta: np.ndarray,
    gamma_I: np.ndarray,
    gamma_S: np.ndarray,
    nu_R: np.ndarray,
    nu_RS: np.ndarray,
    delta: np.ndarray,
    N: float,
    out: np.ndarray | None = None,
) -> np.ndarray:
    out = np.empty_like(x) if out is None else out
    S, E, I, Is, R, D = (x[:, j] for j in range(6))
    infections = beta * S / (N - D) * I
    onsets = gamma_I * E
    recorded = gamma_S * I
    out[:, 0] = S - infections
    out[:, 1] = E - onsets + infections
    out[:, 2] = I - (nu_R + gamma_S) * I + onsets
    out[:, 3] = Is - (nu_RS + delta) * Is + recorded
    out[:, 4] = R + nu_R * I + nu_RS * Is
    out[:, 5] = D + delta * Is
    return out


class SirModel:
    name = "sir"
    compartments = SIR_COMPARTMENTS
    param_names = ("beta", "gamma")
    population_N = 1.0

    def prepare(self, params: np.ndarray) -> tuple:
        params = np.atleast_2d(np.asarray(params, dtype=float))
        return params[:, 0], params[:, 1]

    def advance(self, x: np.ndarray, coeffs: tuple, out: np.ndarray | None = None) -> np.ndarray:
        return _sir_advance(x, *coeffs, out=out)

    def check_state(self, x: np.ndarray, day: int | None = None) -> None:
        x = np.asarray(x, dtype=float)
        if x.shape != (3,):
            raise StateError(f"SIR state needs 3 components, got shape {x.shape}", day)
        if np.any(x < -SIR_SUM_TOL) or np.any(x > 1 + SIR_SUM_TOL):
            raise StateError(f"SIR components must lie in [0, 1], got {x}", day)
        if abs(x.sum() - 1.0) > SIR_SUM_TOL:
            raise StateError(f"SIR components must sum to 1, got {x.sum()!r}", day)

    def states_ok(self, x: np.ndarray) -> np.ndarray:
        return np.all((x >= -SIR_SUM_TOL) & (x <= 1 + SIR_SUM_TOL), axis=1)

    def states_valid(self, x: np.ndarray) -> np.ndarray:
        """Row-wise version of :meth:`check_state`; NaN rows are invalid."""
        return self.states_ok(x) & (np.abs(x.sum(axis=1) - 1.0) <= SIR_SUM_TOL)


class SeirCovidModel:
    """SEIR variant with an "infected in statistics" compartment and deaths.

    Parameter rows are ``(beta, tau_E, tau_R, tau_S, tau_RS, tau_D, p_S, p_D)``.
    """

    name = "seir-covid"
    compartments = SEIR_COMPARTMENTS
    param_names = ("beta", "tau_E", "tau_R", "tau_S", "tau_RS", "tau_D", "p_S", "p_D")

    def __init__(self, population_N: float = DEFAULT_US_POPULATION):
        if not population_N > 0:
            raise ValueError("population_N must be positive")
        self.population_N = float(population_N)

    def prepare(self, params: np.ndarray) -> tuple:
        p = np.atleast_2d(np.asarray(params, dtype=float))
        beta, tau_E, tau_R, tau_S, tau_RS, tau_D, p_S, p_D = (p[:, j] for j in range(8))
        return (
            beta,
            1.0 / tau_E,
            p_S / tau_S,
            (1.0 - p_S) / tau_R,
            (1.0 - p_D) / tau_RS,
            p_D / tau_D,
        )

    def advance(self, x: np.ndarray, coeffs: tuple, out: np.ndarray | None = None) -> np.ndarray:
        return _seir_advance(x, *coeffs, self.population_N, out=out)

    def check_state(self, x: np.ndarray, day: int | None = None) -> None:
        check_seir_state(x, self.population_N, day)

    def states_ok(self, x: np.ndarray) -> np.ndarray:
        N = self.population_N
        return np.all(x >= -SEIR_SUM_RTOL * N, axis=1) & (x[:, 5] < N)

    def states_valid(self, x: np.ndarray) -> np.ndarray:
        N = self.population_N
        return np.all(x >= 0, axis=1) & (np.abs(x.sum(axis=1) - N) <= SEIR_SUM_RTOL * N)


def check_seir_state(x: np.ndarray, population_N: float, day: int | None = None) -> None:
    x = np.asarray(x, dtype=float)
    if x.shape != (6,):
        raise StateError(f"SEIR state needs 6 components, got shape {x.shape}", day)
    if np.any(x < 0):
        raise StateError(f"SEIR compartments must be non-negative, got {x}", day)
    if abs(x.sum() - population_N) > SEIR_SUM_RTOL * population_N:
        raise StateError(f"SEIR compartments sum to {x.sum()!r}, expected {population_N!r}", day)


SIR = SirModel()


def get_model(name: str, population_N: float | None = None):
    if name == "sir":
        return SIR
    if name == "seir-covid":
        return SeirCovidModel(DEFAULT_US_POPULATION if population_N is None else population_N)
    raise ValueError(f"unknown model {name!r}; expected 'sir' or 'seir-covid'")


@dataclass(frozen=True)
class Trajectory:
    """Daily states of one run; ``states[j]`` is the state on day ``start_time + j``."""

    states: np.ndarray
    compartments: tuple[str, ...]
    start_time: int = 0

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] == 0 or states.shape[1] != len(self.compartments):
            raise ValueError(f"states must be (days, {len(self.compartments)}), got {states.shape}")
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def end_time(self) -> int:
        return self.start_time + len(self) - 1

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.start_time, self.end_time + 1)

    def covers(self, first: int, last: int) -> bool:
        return self.start_time <= first and last <= self.end_time

    def window(self, first: int, last: int) -> np.ndarray:
        """States for days ``first..last`` inclusive."""
        if not self.covers(first, last):
            raise ValueError(
                f"window [{first}, {last}] not covered by days [{self.start_time}, {self.end_time}]"
            )
        return self.states[first - self.start_time : last - self.start_time + 1]

    def at(self, day: int) -> np.ndarray:
        return self.window(day, day)[0]

    def component(self, name: str) -> np.ndarray:
        return self.states[:, self.compartments.index(name)]


def sir_step(state: Sequence[float], params: SirParams) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    SIR.check_state(x)
    return SIR.advance(x[None, :], SIR.prepare(params.as_array()))[0]


def seir_step(state: Sequence[float], rates: SeirCovidRates) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    N = rates.population_N
    check_seir_state(x, N)
    if N - x[5] <= 0:
        raise StateError("population exhausted: N - D must be positive")
    coeffs = tuple(
        np.array([v])
        for v in (rates.beta, rates.gamma_I, rates.gamma_S, rates.nu_R, rates.nu_RS, rates.delta_death)
    )
    return _seir_advance(x[None, :], *coeffs, N)[0]


def _params_row(model, params) -> np.ndarray:
    if isinstance(params, (SirParams, SeirCovidParams)):
        row = params.as_array()
    else:
        row = np.asarray(params, dtype=float).ravel()
    if row.shape != (len(model.param_names),):
        raise ValueError(
            f"{model.name} expects {len(model.param_names)} parameters "
            f"{model.param_names}, got {row.shape[0]}"
        )
    return row


def simulate(model, params, initial_state: Sequence[float], horizon: int, start_time: int = 0) -> Trajectory:
    """Iterate the model ``horizon`` days from ``initial_state``.

    Every state is validated; the first invalid one raises with its day label.
    """
    if isinstance(model, str):
        model = get_model(model)
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    row = _params_row(model, params)
    x = np.asarray(initial_state, dtype=float)
    model.check_state(x, start_time)
    states = simulate_batch(model, row[None, :], x, horizon)[0]
    bad = np.flatnonzero(~model.states_valid(states))
    if bad.size:
        j = int(bad[0])
        model.check_state(states[j], start_time + j)
        raise StateError(f"non-finite state {states[j]}", start_time + j)
    return Trajectory(states, model.compartments, start_time)


def simulate_batch(model, params: np.ndarray, initial_states: np.ndarray, horizon: int) -> np.ndarray:
    """Simulate many candidates at once.

    ``params`` is ``(n, d)``; ``initial_states`` is ``(n, k)`` or a single
    ``(k,)`` state shared by all rows.  Returns ``(n, horizon + 1, k)``.  No
    per-step validation is done here; use ``model.states_ok`` on the result.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    n = params.shape[0]
    k = len(model.compartments)
    x0 = np.broadcast_to(np.asarray(initial_states, dtype=float), (n, k))
    coeffs = model.prepare(params)
    out = np.empty((n, horizon + 1, k))
    out[:, 0] = x0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for j in range(horizon):
            model.advance(out[:, j], coeffs, out=out[:, j + 1])
    return out
