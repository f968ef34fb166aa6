"""Rejection estimation of the good-parameter set, exhaustive scans and pre-samples.

A :class:`Target` bundles everything needed to score candidates against an
observed trajectory: the model, the fitness rule, how each candidate's initial
state is built, and which summaries to record for accepted candidates.

Work is split into fixed blocks of draw indices (or grid indices for scans).
Blocks are independent, may run on a thread pool, and are merged in block
order, so results never depend on the number of workers.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import candidates as cand
from .dynsys import Trajectory, simulate_batch
from .fitness import FitnessSpec, evaluate_batch

log = logging.getLogger(__name__)

BLOCK = 1 << 16
DEFAULT_SCAN_LIMIT = 10**8


class ScanLimitError(RuntimeError):
    pass


@dataclass
class Target:
    model: object
    observed: Trajectory
    fitness: FitnessSpec
    # A fixed state shared by all candidates, or a callable mapping model
    # parameter rows to (states, valid-mask).
    initial_state: np.ndarray | Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    start_time: int = 0
    # Maps grid rows to model parameter rows (e.g. appends a fixed p_D column).
    extend_params: Callable[[np.ndarray], np.ndarray] | None = None
    # Last day simulated for accepted candidates' summaries.
    summary_end: int | None = None
    peak_component: int | None = None
    # Peak of day-to-day increments (e.g. daily deaths) instead of levels.
    peak_increments: bool = False

    def __post_init__(self):
        first, last = self.fitness.window
        self.fitness.check_components(len(self.model.compartments))
        if first < self.start_time:
            raise ValueError("fitness window starts before the simulation")
        if not self.observed.covers(first, last):
            raise ValueError(
                f"observed trajectory does not cover the fitness window {self.fitness.window}"
            )

    @property
    def window_end(self) -> int:
        return self.fitness.window[1]

    @property
    def last_day(self) -> int:
        return max(self.window_end, self.summary_end if self.summary_end is not None else self.window_end)

    def model_params(self, grid_rows: np.ndarray) -> np.ndarray:
        return grid_rows if self.extend_params is None else self.extend_params(grid_rows)

    def initial_states(self, mparams: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = mparams.shape[0]
        if callable(self.initial_state):
            return self.initial_state(mparams)
        x0 = np.broadcast_to(np.asarray(self.initial_state, dtype=float), (n, len(self.model.compartments)))
        return x0, np.ones(n, dtype=bool)


@dataclass
class Evaluation:
    verdict: np.ndarray
    score: np.ndarray
    valid: np.ndarray
    # Window-end states, kept so accepted rows can be extended without re-simulating.
    trajectories: np.ndarray
    mparams: np.ndarray


def evaluate(target: Target, grid: cand.CandidateGrid, indices: np.ndarray) -> Evaluation:
    """Simulate candidates through the fitness window and apply the fitness map."""
    mparams = target.model_params(grid.decode(indices))
    x0, valid = target.initial_states(mparams)
    first, last = target.fitness.window
    traj = simulate_batch(target.model, mparams, x0, last - target.start_time)
    n, days, k = traj.shape
    valid = valid & np.all(np.isfinite(traj), axis=(1, 2))
    valid &= target.model.states_ok(traj.reshape(-1, k)).reshape(n, days).all(axis=1)
    sim_window = traj[:, first - target.start_time :]
    verdict, score = evaluate_batch(sim_window, target.observed.window(first, last), target.fitness)
    verdict &= valid
    score = np.where(valid, score, np.inf)
    return Evaluation(verdict, score, valid, traj, mparams)


def summarize(target: Target, traj: np.ndarray, mparams: np.ndarray) -> list[dict]:
    """Peak day/value and final state for each row, extending the runs if needed."""
    extra = target.last_day - (target.start_time + traj.shape[1] - 1)
    if extra > 0:
        tail = simulate_batch(target.model, mparams, traj[:, -1], extra)
        traj = np.concatenate([traj, tail[:, 1:]], axis=1)
    end = (target.summary_end if target.summary_end is not None else target.window_end) - target.start_time
    traj = traj[:, : end + 1]
    out = []
    for row in traj:
        summary = {"final_state": [float(v) for v in row[-1]]}
        if target.peak_component is not None:
            series = row[:, target.peak_component]
            offset = target.start_time
            if target.peak_increments:
                series = np.diff(series)
                offset += 1
            if series.size:
                j = int(np.argmax(series))
                summary["peak_day"] = offset + j
                summary["peak_value"] = float(series[j])
        out.append(summary)
    return out


def _blocks(total: int, block: int = BLOCK) -> Iterator[tuple[int, int]]:
    for a in range(0, total, block):
        yield a, min(a + block, total)


def _map_blocks(fn, blocks, workers: int):
    blocks = list(blocks)
    if workers <= 1 or len(blocks) <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))


@dataclass
class ScanResult:
    p: int
    G: float
    good_indices: np.ndarray
    cardinality: int

    def to_dict(self, grid: cand.CandidateGrid | None = None) -> dict:
        d = {"p": self.p, "G": self.G, "cardinality": self.cardinality,
             "good_indices": [int(i) for i in self.good_indices]}
        if grid is not None:
            d["good_params"] = [grid.index_to_param(int(i)) for i in self.good_indices]
        return d


def exhaustive_scan(grid: cand.CandidateGrid, target: Target, q: cand.DiscreteDist = cand.UNIFORM,
                    limit: int = DEFAULT_SCAN_LIMIT, workers: int = 1) -> ScanResult:
    card = grid.cardinality
    if card > limit:
        raise ScanLimitError(f"grid has {card} points, above the scan limit {limit}")
    q.check(grid)

    def run(block):
        idx = np.arange(*block, dtype=np.int64)
        return idx[evaluate(target, grid, idx).verdict]

    good = np.concatenate(_map_blocks(run, _blocks(card), workers) or [np.empty(0, np.int64)])
    return ScanResult(p=int(good.size), G=q.mass(grid, good), good_indices=good, cardinality=card)


@dataclass
class AcceptedParam:
    index: int
    params: dict[str, float]
    multiplicity: int
    score: float
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"index": self.index, "params": self.params, "multiplicity": self.multiplicity,
                "score": self.score, **self.summary}


@dataclass
class GoodSet:
    """Distinct accepted parameters of one rejection run, sorted by grid index."""

    accepted: list[AcceptedParam]
    n_sampled: int
    n_accepted_draws: int
    n_invalid: int
    seed: int
    fitness: FitnessSpec
    param_names: tuple[str, ...]
    compartments: tuple[str, ...]

    @property
    def n_distinct_good(self) -> int:
        return len(self.accepted)

    @property
    def indices(self) -> np.ndarray:
        return np.array([a.index for a in self.accepted], dtype=np.int64)

    def values(self, name: str) -> np.ndarray:
        return np.array([a.params[name] for a in self.accepted])

    def peak_days(self) -> np.ndarray:
        return np.array([a.summary["peak_day"] for a in self.accepted if "peak_day" in a.summary])

    def to_dict(self) -> dict:
        return {
            "fitness": self.fitness.to_dict(),
            "seed": self.seed,
            "n_sampled": self.n_sampled,
            "n_accepted_draws": self.n_accepted_draws,
            "n_distinct_good": self.n_distinct_good,
            "n_invalid": self.n_invalid,
            "param_names": list(self.param_names),
            "compartments": list(self.compartments),
            "accepted": [a.to_dict() for a in self.accepted],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def csv_rows(self) -> tuple[list[str], list[list]]:
        header = ["index", *self.param_names, "multiplicity", "score", "peak_day", "peak_value",
                  *(f"final_{c}" for c in self.compartments)]
        rows = []
        for a in self.accepted:
            s = a.summary
            rows.append([a.index, *(a.params[n] for n in self.param_names), a.multiplicity, a.score,
                         s.get("peak_day", ""), s.get("peak_value", ""), *s.get("final_state", [])])
        return header, rows

    def write_csv(self, path) -> None:
        header, rows = self.csv_rows()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([format_number(v) for v in row])


def format_number(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


@dataclass
class _BlockOutcome:
    indices: np.ndarray
    counts: np.ndarray
    scores: np.ndarray
    summaries: list[dict]
    n_invalid: int


def rejection_estimate(grid: cand.CandidateGrid, target: Target, n: int, seed: int,
                       q: cand.DiscreteDist = cand.UNIFORM, workers: int = 1) -> GoodSet:
    """Sample ``n`` candidates from ``q`` and keep those the fitness map accepts."""
    if n < 1:
        raise ValueError("n must be at least 1")
    q.check(grid)

    def run(block) -> _BlockOutcome:
        a, b = block
        idx = cand.sample(grid, q, b - a, seed, start=a)
        ev = evaluate(target, grid, idx)
        hit = np.flatnonzero(ev.verdict)
        uniq, first, counts = np.unique(idx[hit], return_index=True, return_counts=True)
        rows = hit[first]
        summaries = summarize(target, ev.trajectories[rows], ev.mparams[rows]) if rows.size else []
        return _BlockOutcome(uniq, counts, ev.score[rows], summaries, int((~ev.valid).sum()))

    merged: dict[int, AcceptedParam] = {}
    n_hits = n_invalid = 0
    for out in _map_blocks(run, _blocks(n), workers):
        n_invalid += out.n_invalid
        for i, c, s, summ in zip(out.indices, out.counts, out.scores, out.summaries):
            i = int(i)
            n_hits += int(c)
            if i in merged:
                merged[i].multiplicity += int(c)
            else:
                merged[i] = AcceptedParam(i, grid.index_to_param(i), int(c), float(s), summ)
    accepted = [merged[i] for i in sorted(merged)]
    log.debug("rejection run: %d draws, %d accepted, %d distinct", n, n_hits, len(accepted))
    return GoodSet(accepted, n, n_hits, n_invalid, seed, target.fitness, grid.names,
                   tuple(target.model.compartments))


def score_sample(grid: cand.CandidateGrid, target: Target, n: int, seed: int,
                 q: cand.DiscreteDist = cand.UNIFORM, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Grid indices and fitness scores of ``n`` sampled candidates (``inf`` when invalid)."""
    q.check(grid)

    def run(block):
        a, b = block
        idx = cand.sample(grid, q, b - a, seed, start=a)
        return idx, evaluate(target, grid, idx).score

    parts = _map_blocks(run, _blocks(n), workers)
    if not parts:
        return np.empty(0, np.int64), np.empty(0)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def estimate_G_presample(grid: cand.CandidateGrid, target: Target, n_pre: int, seed: int,
                         q: cand.DiscreteDist = cand.UNIFORM, workers: int = 1) -> float:
    """Share of accepted draws (with multiplicity) in a pre-sample of size ``n_pre``."""
    if n_pre < 1:
        raise ValueError("n_pre must be at least 1")

    def run(block):
        a, b = block
        idx = cand.sample(grid, q, b - a, seed, start=a)
        return int(evaluate(target, grid, idx).verdict.sum())

    return sum(_map_blocks(run, _blocks(n_pre), workers)) / n_pre
