"""Binary fitness maps deciding whether a simulated trajectory fits an observed one.

All maps are evaluated on an inclusive day window and a subset of compartments.
The batch entry point, :func:`evaluate_batch`, works on an ``(n, days, k)``
array of window-aligned simulations and returns both the 0/1 verdict and the
score whose threshold defines it (the smallest tolerance at which the
candidate would pass).  The scalar functions are thin wrappers around it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynsys import Trajectory

POINTWISE_BAND = "pointwise-relative-band"
MEAN_DISTANCE = "mean-distance"
SUP_WINDOW = "sup-relative-window"
KINDS = (POINTWISE_BAND, MEAN_DISTANCE, SUP_WINDOW)

# Thresholds are inclusive; this keeps exact-boundary inputs such as
# obs * (1 + r) accepted despite rounding in the product.
BOUNDARY_RTOL = 1e-12


class FitnessError(ValueError):
    """Raised when a relative band is undefined (zero reference value)."""


@dataclass(frozen=True)
class FitnessSpec:
    """A well-fit rule.

    ``reference`` only matters for the pointwise band: ``"observed"`` accepts
    ``|sim - obs| <= r * obs``, ``"simulated"`` accepts ``|sim - obs| <= r * sim``
    (the variant that matches the reference SIR grid counts).
    """

    kind: str
    window: tuple[int, int]
    components: tuple[int, ...]
    r: float | None = None
    delta_tolerance: float | None = None
    reference: str = "observed"

    def __post_init__(self):
        object.__setattr__(self, "window", tuple(int(t) for t in self.window))
        object.__setattr__(self, "components", tuple(int(c) for c in self.components))
        if self.kind not in KINDS:
            raise ValueError(f"unknown fitness kind {self.kind!r}")
        first, last = self.window
        if last < first:
            raise ValueError(f"empty window {self.window}")
        if not self.components or min(self.components) < 0:
            raise ValueError(f"invalid compared components {self.components}")
        if self.kind == MEAN_DISTANCE:
            if self.delta_tolerance is None or not self.delta_tolerance > 0:
                raise ValueError("mean-distance needs delta_tolerance > 0")
        elif self.r is None or not self.r > 0:
            raise ValueError(f"{self.kind} needs a tolerance r > 0")
        if self.reference not in ("observed", "simulated"):
            raise ValueError(f"reference must be 'observed' or 'simulated', got {self.reference!r}")

    @property
    def tolerance(self) -> float:
        return self.delta_tolerance if self.kind == MEAN_DISTANCE else self.r

    def with_tolerance(self, value: float) -> "FitnessSpec":
        if self.kind == MEAN_DISTANCE:
            return FitnessSpec(self.kind, self.window, self.components, delta_tolerance=value)
        return FitnessSpec(self.kind, self.window, self.components, r=value, reference=self.reference)

    def check_components(self, n_compartments: int) -> None:
        if max(self.components) >= n_compartments:
            raise ValueError(
                f"components {self.components} out of range for a {n_compartments}-compartment model"
            )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "window": list(self.window),
            "components": list(self.components),
            "r": self.r,
            "delta_tolerance": self.delta_tolerance,
            "reference": self.reference,
        }


def within(score, tolerance: float):
    return score <= tolerance * (1.0 + BOUNDARY_RTOL)


def _relative_errors(sim: np.ndarray, obs: np.ndarray, reference: str) -> np.ndarray:
    diff = np.abs(sim - obs)
    if reference == "observed":
        if np.any(obs <= 0):
            raise FitnessError("observed values must be strictly positive inside the window")
        return diff / obs
    # Zero simulated value: passes only on an exact match.
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = diff / np.abs(sim)
    return np.where(diff == 0, 0.0, rel)


def evaluate_batch(sim: np.ndarray, obs: np.ndarray, spec: FitnessSpec) -> tuple[np.ndarray, np.ndarray]:
    """Verdicts and scores for ``sim`` of shape ``(n, days, k)`` against ``obs`` ``(days, k)``.

    Both arrays must already be restricted to the fitness window.  Rows with
    non-finite values get verdict ``False`` and score ``inf``.
    """
    cols = list(spec.components)
    s = sim[:, :, cols]
    o = obs[:, cols]
    if spec.kind == MEAN_DISTANCE:
        score = np.sqrt(((s - o) ** 2).sum(axis=2)).mean(axis=1)
    else:
        reference = spec.reference if spec.kind == POINTWISE_BAND else "observed"
        with np.errstate(invalid="ignore"):
            score = _relative_errors(s, o, reference).max(axis=(1, 2))
    score = np.where(np.isfinite(score), score, np.inf)
    return within(score, spec.tolerance), score


def _window_pair(sim: Trajectory, obs: Trajectory, window) -> tuple[np.ndarray, np.ndarray]:
    first, last = window
    return sim.window(first, last), obs.window(first, last)


def _single(sim: Trajectory, obs: Trajectory, spec: FitnessSpec) -> tuple[bool, float]:
    spec.check_components(sim.states.shape[1])
    s, o = _window_pair(sim, obs, spec.window)
    verdict, score = evaluate_batch(s[None], o, spec)
    return bool(verdict[0]), float(score[0])


def _require(spec: FitnessSpec, kind: str) -> None:
    if spec.kind != kind:
        raise ValueError(f"expected a {kind} spec, got {spec.kind}")


def pointwise_relative_band(sim: Trajectory, obs: Trajectory, spec: FitnessSpec) -> int:
    _require(spec, POINTWISE_BAND)
    return int(_single(sim, obs, spec)[0])


def mean_distance(sim: Trajectory, obs: Trajectory, spec: FitnessSpec) -> int:
    _require(spec, MEAN_DISTANCE)
    return int(_single(sim, obs, spec)[0])


def sup_relative_window(sim: Trajectory, obs: Trajectory, spec: FitnessSpec) -> int:
    _require(spec, SUP_WINDOW)
    return int(_single(sim, obs, spec)[0])


def worst_relative_error(sim: Trajectory, obs: Trajectory, window, components) -> float:
    """Largest component-wise relative error over the window: the smallest passing ``r``."""
    s, o = _window_pair(sim, obs, window)
    cols = list(components)
    return float(_relative_errors(s[:, cols], o[:, cols], "observed").max())


def fits(sim: Trajectory, obs: Trajectory, spec: FitnessSpec) -> int:
    """Dispatch on ``spec.kind``."""
    return int(_single(sim, obs, spec)[0])
