"""Finite candidate grids and reproducible sampling over them.

Grid points are addressed by a mixed-radix index with the *last* dimension
varying fastest, so an index persisted to disk decodes to the same parameter
vector on any machine.

Sampling is draw-indexed: draw ``i`` is a pure function of ``(seed, i)``.  It is
backed by numpy's counter-based Philox generator, whose counter can be jumped
to any draw, so a sample may be split into arbitrary index ranges and computed
in any order without changing a single value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from typing import Iterable, Mapping, Sequence

import numpy as np

HALF_OPEN = "half-open"  # (lo, hi]
CLOSED = "closed"  # [lo, hi]

_U53 = 2.0**-53


def _decimals(x: float) -> int:
    exponent = Decimal(repr(float(x))).normalize().as_tuple().exponent
    return max(0, -exponent)


def build_range_grid(lo: float, hi: float, step: float, convention: str = HALF_OPEN) -> np.ndarray:
    """Evenly spaced values ``lo + k * step`` rounded to the step's decimal precision."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got {lo}, {hi}")
    if not step > 0:
        raise ValueError("step must be positive")
    ratio = (hi - lo) / step
    count = round(ratio)
    if abs(ratio - count) > 1e-9:
        raise ValueError(f"(hi - lo) = {hi - lo} is not a multiple of step {step}")
    if convention == HALF_OPEN:
        ks = np.arange(1, count + 1)
    elif convention == CLOSED:
        ks = np.arange(0, count + 1)
    else:
        raise ValueError(f"unknown endpoint convention {convention!r}")
    return np.round(lo + ks * step, max(_decimals(step), _decimals(lo)))


@dataclass(frozen=True)
class CandidateGrid:
    names: tuple[str, ...]
    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.names) != len(self.values) or not self.names:
            raise ValueError("need one value list per dimension")
        vals = []
        for name, v in zip(self.names, self.values):
            v = np.asarray(v, dtype=float).ravel()
            if v.size == 0:
                raise ValueError(f"dimension {name!r} is empty")
            if np.any(np.diff(v) == 0):
                raise ValueError(f"dimension {name!r} has duplicate values")
            if np.any(np.diff(v) < 0):
                raise ValueError(f"dimension {name!r} values must be strictly increasing")
            v.setflags(write=False)
            vals.append(v)
        object.__setattr__(self, "values", tuple(vals))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(v.size for v in self.values)

    @property
    def cardinality(self) -> int:
        return math.prod(self.shape)

    @property
    def ndim(self) -> int:
        return len(self.names)

    def decode(self, indices) -> np.ndarray:
        """Parameter rows ``(n, ndim)`` for an array of grid indices."""
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.cardinality):
            raise IndexError(f"grid index out of range [0, {self.cardinality})")
        out = np.empty(idx.shape + (self.ndim,))
        rest = idx.copy()
        for j in range(self.ndim - 1, -1, -1):
            size = self.values[j].size
            out[..., j] = self.values[j][rest % size]
            rest //= size
        return out

    def encode(self, params) -> np.ndarray:
        """Inverse of :meth:`decode`; every value must be an exact grid member."""
        p = np.atleast_2d(np.asarray(params, dtype=float))
        if p.shape[1] != self.ndim:
            raise ValueError(f"expected {self.ndim} parameters per row")
        idx = np.zeros(p.shape[0], dtype=np.int64)
        for j, v in enumerate(self.values):
            pos = np.searchsorted(v, p[:, j])
            pos_c = np.minimum(pos, v.size - 1)
            if np.any(v[pos_c] != p[:, j]):
                raise ValueError(f"value not on the {self.names[j]!r} grid")
            idx = idx * v.size + pos_c
        return idx

    def index_to_param(self, index: int) -> dict[str, float]:
        row = self.decode(np.array([index]))[0]
        return dict(zip(self.names, (float(x) for x in row)))

    def param_to_index(self, params: Mapping[str, float] | Sequence[float]) -> int:
        if isinstance(params, Mapping):
            params = [params[name] for name in self.names]
        return int(self.encode([list(params)])[0])

    def describe(self) -> dict:
        return {name: [float(x) for x in v] for name, v in zip(self.names, self.values)}


def build_explicit_grid(dims: Mapping[str, Iterable[float]] | Sequence[tuple[str, Iterable[float]]]) -> CandidateGrid:
    items = list(dims.items()) if isinstance(dims, Mapping) else list(dims)
    return CandidateGrid(
        tuple(name for name, _ in items),
        tuple(np.asarray(list(values), dtype=float) for _, values in items),
    )


@dataclass(frozen=True)
class DiscreteDist:
    """Sampling distribution over grid indices: uniform, or explicit weights."""

    kind: str = "uniform"
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "uniform":
            if self.weights is not None:
                raise ValueError("uniform distribution takes no weights")
        elif self.kind == "explicit":
            w = np.asarray(self.weights, dtype=float).ravel()
            if w.size == 0 or np.any(w <= 0):
                raise ValueError("explicit weights must be strictly positive")
            if abs(math.fsum(w) - 1.0) > 1e-12:
                raise ValueError(f"weights must sum to 1, got {math.fsum(w)!r}")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
        else:
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    def check(self, grid: CandidateGrid) -> None:
        if self.kind == "explicit" and self.weights.size != grid.cardinality:
            raise ValueError("explicit weights must have one entry per grid point")

    def mass(self, grid: CandidateGrid, indices) -> float:
        idx = np.unique(np.asarray(indices, dtype=np.int64))
        if self.kind == "uniform":
            return idx.size / grid.cardinality
        return math.fsum(self.weights[idx])


UNIFORM = DiscreteDist()


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 64-bit seed for a sub-stream identified by integer keys."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def uniforms(seed: int, start: int, n: int) -> np.ndarray:
    """Doubles in [0, 1) for draws ``start .. start + n - 1`` of stream ``seed``."""
    if n < 0 or start < 0:
        raise ValueError("start and n must be non-negative")
    bitgen = np.random.Philox(key=int(seed))
    # Philox emits four 64-bit words per counter value.
    bitgen.advance(start // 4)
    if start % 4:
        bitgen.random_raw(start % 4)
    raw = np.asarray(bitgen.random_raw(n), dtype=np.uint64)
    return (raw >> np.uint64(11)).astype(np.float64) * _U53


def sample(grid: CandidateGrid, dist: DiscreteDist, n: int, seed: int, start: int = 0) -> np.ndarray:
    """Grid indices of draws ``start .. start + n - 1`` (with replacement) from ``dist``."""
    dist.check(grid)
    u = uniforms(seed, start, n)
    card = grid.cardinality
    if dist.kind == "uniform":
        if card > 2**53:
            raise ValueError("grid too large for double-precision index sampling")
        return np.minimum((u * card).astype(np.int64), card - 1)
    cdf = np.cumsum(dist.weights)
    return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), card - 1).astype(np.int64)
