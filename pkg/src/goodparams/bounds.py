"""Sample-size bounds for recovering good parameters, plus empirical checks.

Notation: ``p`` good parameters of total sampling mass ``G``; the learner may
miss a fraction ``c`` of that mass with failure probability ``delta``.  The
hypothesis space has ``2**p`` elements.  Logarithms are natural and every
combinatorial quantity is handled in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import candidates as cand

ROUNDINGS = ("nearest", "ceil", "floor", "gamma")
DEFAULT_ROUNDING = "nearest"


def _check_prob(name: str, x: float) -> None:
    if not 0 < x < 1:
        raise ValueError(f"{name} must lie in (0, 1), got {x}")


def _log_card(h_cardinality) -> float:
    if h_cardinality < 1:
        raise ValueError("hypothesis space must be non-empty")
    return math.log(h_cardinality)


def log_binom(n: float, k: float) -> float:
    """log C(n, k) via log-gamma; ``k`` may be non-integer."""
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def binomial_index(c: float, p: int, rounding: str = DEFAULT_ROUNDING) -> float:
    """Upper summation index ``(1 - c) p`` made usable as a binomial argument.

    ``nearest`` matches every reference sample size (6.8 -> 7 and
    26.3 -> 26); ``gamma`` keeps the real value for a log-gamma binomial.
    """
    x = (1.0 - c) * p
    if rounding == "nearest":
        return float(math.floor(x + 0.5))
    if rounding == "ceil":
        return float(math.ceil(x - 1e-9))
    if rounding == "floor":
        return float(math.floor(x + 1e-9))
    if rounding == "gamma":
        return x
    raise ValueError(f"rounding must be one of {ROUNDINGS}")


def theorem1_bound(n: int, epsilon: float, h_cardinality) -> float:
    """min(1, |H| exp(-n epsilon))."""
    log_b = _log_card(h_cardinality) - n * epsilon
    return 1.0 if log_b >= 0 else math.exp(log_b)


def corollary_sample_size(epsilon: float, delta_confidence: float, h_cardinality) -> float:
    """(1/epsilon) log(|H| / delta); callers take the ceiling for an integer N."""
    return (_log_card(h_cardinality) - math.log(delta_confidence)) / epsilon


def eq9_sample_size(c: float, delta_confidence: float, G: float, p: int) -> float:
    """General sample size (p log 2 - log delta) / (c G)."""
    _check_prob("c", c)
    _check_prob("delta", delta_confidence)
    return (p * math.log(2) - math.log(delta_confidence)) / (c * G)


def log_binomial_prefix(n: int, k: int) -> float:
    """log sum_{j=0}^{k} C(n, j), computed stably."""
    terms = np.array([log_binom(n, j) for j in range(int(k) + 1)])
    top = terms.max()
    return float(top + math.log(np.exp(terms - top).sum()))


def prop2_probability_bound(c: float, G: float, p: int, n: int, rounding: str = DEFAULT_ROUNDING) -> float:
    """min(1, sum_{k<=K} C(p, k) exp(-c G n)) with K the rounded ``(1 - c) p``.

    Valid when the sampling distribution is uniform over the good parameters.
    """
    if not 0 < c <= 1:
        raise ValueError(f"c must lie in (0, 1], got {c}")
    if rounding == "gamma":
        raise ValueError("the probability bound sums over integers; use an integer rounding")
    K = binomial_index(c, p, rounding)
    log_b = log_binomial_prefix(p, K) - c * G * n
    return 1.0 if log_b >= 0 else math.exp(log_b)


def eq10_sample_size(c: float, delta_confidence: float, G: float, p: int,
                     rounding: str = DEFAULT_ROUNDING) -> float:
    """Improved sample size under conditionally uniform sampling; needs c > 1/2."""
    if not 0.5 < c < 1:
        raise ValueError(f"the improved bound needs 1/2 < c < 1, got c={c}")
    _check_prob("delta", delta_confidence)
    K = binomial_index(c, p, rounding)
    tail = (1 - c) ** 2 * p**2 / (c * p + 1)
    return (log_binom(p, K) + math.log1p(tail) - math.log(delta_confidence)) / (c * G)


def log_binomial_prefix_bound(n: int, p: int) -> tuple[float, float]:
    """Both sides of log sum_{k<=p} C(n,k) <= log C(n,p) + log(1 + p^2/(n-p+1)).

    Exact integer arithmetic for n <= 60, log-gamma beyond.
    """
    if p < 0 or n < 2 * p:
        raise ValueError(f"need integers n >= 2p >= 0, got n={n}, p={p}")
    if n <= 60:
        prefix = sum(math.comb(n, k) for k in range(p + 1))
        lhs = math.log(prefix)
        log_c = math.log(math.comb(n, p))
    else:
        lhs = log_binomial_prefix(n, p)
        log_c = log_binom(n, p)
    return lhs, log_c + math.log1p(p * p / (n - p + 1))


def min_meaningful_c(delta_confidence: float, p: int) -> float:
    """Smallest c for which the general sample size stays below |Z| when p ~ G |Z|."""
    return math.log(2) - math.log(delta_confidence) / p


def sample_size_curve(c_values, delta_confidence: float, G: float, p: int,
                      rounding: str = DEFAULT_ROUNDING) -> list[tuple[float, float, float]]:
    """Rows (c, general bound, improved bound); the improved one is NaN for c <= 1/2."""
    rows = []
    for c in c_values:
        c = float(c)
        m10 = eq10_sample_size(c, delta_confidence, G, p, rounding) if c > 0.5 else math.nan
        rows.append((c, eq9_sample_size(c, delta_confidence, G, p), m10))
    return rows


@dataclass
class MonteCarloCheck:
    trials: int
    violations: int
    theorem1: float
    prop2: float | None

    @property
    def rate(self) -> float:
        return self.violations / self.trials

    def holds(self, bound: float, n_sigma: float = 3.0) -> bool:
        slack = n_sigma * math.sqrt(max(bound * (1 - bound), 0.0) / self.trials)
        return self.rate <= bound + slack


def montecarlo_verify_theorem1(p_small: int, grid_size: int, n: int, epsilon: float, trials: int,
                               seed: int, q: cand.DiscreteDist = cand.UNIFORM,
                               block_trials: int = 256) -> MonteCarloCheck:
    """Empirical P(L(h_hat) > epsilon) on a synthetic grid whose first ``p_small`` points are good.

    Trial ``t`` uses draws ``t*n .. (t+1)*n - 1`` of the seed's stream.  The
    missed mass L(h_hat) is computed exactly from the unseen good points.
    """
    if grid_size > 10**4 or p_small > 12 or p_small < 1:
        raise ValueError("Monte-Carlo check expects |Z| <= 1e4 and 1 <= p <= 12")
    grid = cand.CandidateGrid(("z",), (np.arange(grid_size, dtype=float),))
    q.check(grid)
    good = np.arange(p_small)
    mass = np.full(p_small, 1 / grid_size) if q.kind == "uniform" else np.asarray(q.weights)[good]
    G = float(mass.sum())
    violations = 0
    for t0 in range(0, trials, block_trials):
        t1 = min(t0 + block_trials, trials)
        draws = cand.sample(grid, q, (t1 - t0) * n, seed, start=t0 * n).reshape(t1 - t0, n)
        seen = np.stack([(draws == g).any(axis=1) for g in good], axis=1)
        missed = (~seen * mass).sum(axis=1)
        # Summed masses land on epsilon only up to rounding; keep ">" strict.
        violations += int((missed > epsilon * (1 + 1e-9)).sum())
    c = epsilon / G
    prop2 = prop2_probability_bound(c, G, p_small, n) if 0 < c <= 1 and q.kind == "uniform" else None
    return MonteCarloCheck(trials, violations, theorem1_bound(n, epsilon, 2**p_small), prop2)
