"""The simulated SIR experiment: true parameters, candidate grids and fitness rule.

Days are numbered from 1 with day 1 holding the initial state, so the observed
window "t <= 10" is days 1..10 and the infected peak of the true run falls on
day 24.  The pointwise band is taken relative to each candidate's own
trajectory, which gives the reference good-parameter counts (68 at
r = 0.05 and 263 at r = 0.1 on every grid).
"""

from __future__ import annotations

import numpy as np

from .candidates import CLOSED, HALF_OPEN, CandidateGrid, build_range_grid
from .dynsys import SIR, SirParams, Trajectory, simulate
from .estimator import Target
from .fitness import POINTWISE_BAND, FitnessSpec

SIR_TRUE = SirParams(beta=0.25, gamma=1 / 21)
SIR_X0 = (0.95, 0.05, 0.0)
SIR_START_DAY = 1
SIR_WINDOW = (1, 10)
SIR_SUMMARY_END = 60
GRID_STEP = 0.001

# (beta range, gamma range), each (lo, hi, convention)
SIR_GRIDS = {
    "Z1": ((0.0, 1.0, HALF_OPEN), (0.0, 0.5, HALF_OPEN)),
    "Z2": ((0.0, 1.0, HALF_OPEN), (0.0, 0.2, HALF_OPEN)),
    "Z3": ((0.1, 0.5, CLOSED), (0.0, 0.2, HALF_OPEN)),
}


def sir_grid(name: str, step: float = GRID_STEP) -> CandidateGrid:
    (blo, bhi, bconv), (glo, ghi, gconv) = SIR_GRIDS[name]
    return CandidateGrid(
        ("beta", "gamma"),
        (build_range_grid(blo, bhi, step, bconv), build_range_grid(glo, ghi, step, gconv)),
    )


def sir_observed(params: SirParams = SIR_TRUE, last_day: int = SIR_WINDOW[1]) -> Trajectory:
    return simulate(SIR, params, SIR_X0, last_day - SIR_START_DAY, start_time=SIR_START_DAY)


def sir_fitness(r: float, window=SIR_WINDOW, reference: str = "simulated") -> FitnessSpec:
    return FitnessSpec(POINTWISE_BAND, window, (0, 1, 2), r=r, reference=reference)


def sir_target(r: float, summary_end: int | None = SIR_SUMMARY_END, reference: str = "simulated") -> Target:
    return Target(
        model=SIR,
        observed=sir_observed(),
        fitness=sir_fitness(r, reference=reference),
        initial_state=np.array(SIR_X0),
        start_time=SIR_START_DAY,
        summary_end=summary_end,
        peak_component=1,
    )


def sir_peak_day(params: SirParams = SIR_TRUE, last_day: int = SIR_SUMMARY_END) -> int:
    """Earliest day of maximum infected proportion."""
    traj = sir_observed(params, last_day)
    return traj.start_time + int(np.argmax(traj.component("I")))
