"""Core numerics: weight table, non-termination probability, config combinatorics.

Everything downstream (the equalisation solver, the exhaustive sweep, the
Monte Carlo drift runs) consumes the objects built here:

* ``WTable`` — the weight-to-pain transfer function sampled on the grid
  p = m / grid_size.  The table stores ``W = 4 * w(p)`` where
  ``w(p) = p/(1-p) * f(p)``; the constant factor 4 cancels in every
  downstream use (log-differences and argmins), see ``WTable.scale_note``.
* ``QHat`` — the probability that a branching chain never terminates, the
  root near 0.991603 of ``q = (1 - (1 - q/2)^9)^4``.
* ``DegreeConfig`` — a sorted 4-tuple of downstream branch counts, with the
  permutation count and occurrence probability attached.

All functions here are pure and deterministic; the table is built once and
treated as immutable by every consumer.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "BracketError",
    "SolverFailure",
    "GridParams",
    "SeriesCoeffs",
    "WTable",
    "QHat",
    "DegreeConfig",
    "bisect_root",
    "nontermination_map",
    "solve_qhat",
    "wtilde",
    "end_correction",
    "build_wtable",
    "binom",
    "noperm",
    "config_prob",
    "all_configs",
]

LOOKUP_SENTINEL = 1e10  # returned for lookup arguments >= 1 ("unbounded pain")
COMMON_VALUE_CAP = 1e8  # upper bracket for the equalisation common value


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class BracketError(RuntimeError):
    """A root bracket does not satisfy the required sign condition."""


class SolverFailure(RuntimeError):
    """The cell solver produced an unusable result (e.g. NaN from the table).

    Carries the cell coordinates for diagnostics.
    """

    def __init__(self, message: str, p_index: int | None = None,
                 config: tuple[int, ...] | None = None):
        super().__init__(message)
        self.p_index = p_index
        self.config = config


# --------------------------------------------------------------------------
# Grid and table types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GridParams:
    """Discretisation of the weight interval (0, 1) into grid_size steps."""

    grid_size: int = 20000  # row m holds weight p = m / grid_size

    def __post_init__(self) -> None:
        if not isinstance(self.grid_size, int) or self.grid_size < 2:
            raise DomainError(f"grid_size must be an integer >= 2, got {self.grid_size!r}")

    @property
    def min_index(self) -> int:
        return 1

    @property
    def max_index(self) -> int:
        return self.grid_size - 1

    def weight_of(self, m: int) -> float:
        """The weight p represented by row m."""
        return m / self.grid_size


@dataclass(frozen=True)
class SeriesCoeffs:
    """Cubic series correction applied on top of the three rational factors.

    The coefficients are exact rationals realised in binary64:
    c0 = 1, c1 = 5/3072, c2 = 100/(9*17*16^5), c3 = 125/2^42.
    """

    c0: float = 1.0
    c1: float = 5.0 / 3072.0
    c2: float = 100.0 / (9.0 * 17.0 * 16.0 ** 5)
    c3: float = 125.0 / 2.0 ** 42


@dataclass(frozen=True)
class WTable:
    """The discretised transfer function, shared by every solver.

    values[m] = wtilde(m/grid_size - 1/5) * end_correction(m/grid_size) for
    m in [1, grid_size - 1].  Row 0 is NaN and must never be read: lookups
    clamp their index to [1, grid_size - 1] (a NaN escaping into a solver is
    converted into a SolverFailure, which is the tripwire for index bugs).
    """

    values: np.ndarray
    grid: GridParams
    # The table stores 4*w(p), not w(p); every consumer uses log-differences
    # or argmins, where the global factor cancels.  Never mix the two scales.
    scale_note: str = field(default="values hold 4*w(p)", compare=False)

    def __post_init__(self) -> None:
        n = self.grid.grid_size
        if self.values.shape != (n,):
            raise DomainError(f"table must have exactly grid_size={n} rows")

    def lookup(self, x: float) -> float:
        """Table value at weight x, with clamped flooring.

        Arguments >= 1 represent unbounded pain and return a large sentinel.
        """
        if x >= 1.0:
            return LOOKUP_SENTINEL
        i = int(math.floor(self.grid.grid_size * x))
        if i < 1:
            i = 1
        elif i > self.grid.grid_size - 1:
            i = self.grid.grid_size - 1
        return float(self.values[i])


@dataclass(frozen=True)
class QHat:
    """Probability that a chain never terminates (root of the degree map)."""

    value: float

    def __post_init__(self) -> None:
        if not (0.99 < self.value < 1.0):
            raise DomainError(f"non-termination probability out of range: {self.value!r}")

    @property
    def residual(self) -> float:
        """Absolute defect in the fixed-point equation q = (1-(1-q/2)^9)^4."""
        return abs(self.value - nontermination_map(self.value))

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class DegreeConfig:
    """Sorted 4-tuple (j1 <= j2 <= j3 <= j4) of downstream branch counts.

    Each j_i in [1, 9] counts the forward branches of one of the four
    non-root directions; there are exactly 495 distinct sorted tuples.
    """

    j: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        if len(self.j) != 4 or not all(isinstance(v, int) for v in self.j):
            raise DomainError(f"config must be a 4-tuple of integers, got {self.j!r}")
        if not all(1 <= v <= 9 for v in self.j):
            raise DomainError(f"branch counts must lie in [1, 9], got {self.j!r}")
        if list(self.j) != sorted(self.j):
            raise DomainError(f"config must be sorted ascending, got {self.j!r}")

    def __iter__(self) -> Iterator[int]:
        return iter(self.j)

    def __getitem__(self, i: int) -> int:
        return self.j[i]


def all_configs() -> tuple[DegreeConfig, ...]:
    """All 495 sorted configs in lexicographic order."""
    return tuple(DegreeConfig(c) for c in
                 itertools.combinations_with_replacement(range(1, 10), 4))


# --------------------------------------------------------------------------
# Root finding
# --------------------------------------------------------------------------

def bisect_root(f: Callable[[float], float], target: float,
                lb: float, ub: float, accuracy: float) -> float:
    """Bisection for f(x) = target with f monotone nonincreasing on [lb, ub].

    Requires f(lb) >= target >= f(ub); the bracket invariant is maintained but
    not re-verified (an invalid bracket simply drives the result to one end,
    which callers treat as a sentinel).  Ties resolve downward: f(mid) >=
    target moves the lower bound, exactly mirroring the reference solver this
    library reproduces.  Returns the final midpoint once the bracket is
    narrower than ``accuracy`` (or indistinguishable at float resolution).
    """
    while True:
        mid = 0.5 * (lb + ub)
        if mid == lb or mid == ub:
            return mid  # bracket already at binary64 resolution
        if f(mid) >= target:
            lb = mid
        else:
            ub = mid
        if ub - lb < accuracy:
            return mid


# --------------------------------------------------------------------------
# Non-termination probability
# --------------------------------------------------------------------------

def nontermination_map(q: float) -> float:
    """One step of the branching recursion q -> (1 - (1 - q/2)^9)^4."""
    return (1.0 - (1.0 - 0.5 * q) ** 9) ** 4


def solve_qhat(accuracy: float = 1e-11) -> QHat:
    """Largest root strictly below 1 of q = (1 - (1 - q/2)^9)^4.

    Bisection on [0.9, 1.0]; the residual of the returned value is of the
    same order as ``accuracy``.
    """
    if not (0.0 < accuracy < 1e-6):
        raise DomainError(f"accuracy must lie in (0, 1e-6), got {accuracy!r}")
    lb, ub = 0.9, 1.0
    if nontermination_map(lb) - lb < 0.0 or nontermination_map(ub) - ub > 0.0:
        raise BracketError("fixed-point bracket [0.9, 1.0] lost its sign condition")
    root = bisect_root(lambda q: nontermination_map(q) - q, 0.0, lb, ub, accuracy)
    return QHat(root)


# --------------------------------------------------------------------------
# Weight function
# --------------------------------------------------------------------------

_COEFFS = SeriesCoeffs()


def wtilde(t: float) -> float:
    """Smooth (uncorrected) table value at t = p - 1/5.

    Three rational factors times a cubic series; equals 1 at t = 0 and
    vanishes at t = -1/5.  Accepts t in [-1/5, 4/5), i.e. p in (0, 1) plus
    the closed left endpoint where the value is exactly 0.
    """
    if not (-0.2 <= t < 0.8):
        raise DomainError(f"argument must lie in [-1/5, 4/5), got {t!r}")
    c = _COEFFS
    series = ((c.c3 * t + c.c2) * t + c.c1) * t + c.c0
    return ((1.0 + 5.0 * t) / (1.0 - 1.25 * t)
            * (16.0 + 5.0 * t) / (16.0 - 1.25 * t)
            * (256.0 + 5.0 * t) / (256.0 - 1.25 * t)
            * series)


def end_correction(p: float) -> float:
    """Damping factor applied near the ends of the weight interval.

    exp(-(20/27) (1/5 - p)^3) for p < 1/5, exp(-(1/4) (p - 1/2)^3) for
    p > 1/2, and exactly 1 in between.  The comparisons are strict so that
    the gating matches the row-index gating (m < 4000, m > 10000 at
    grid_size 20000) bit-for-bit.
    """
    if not (0.0 < p < 1.0):
        raise DomainError(f"weight must lie in (0, 1), got {p!r}")
    if p < 0.2:
        g = p - 0.2
        return math.exp((20.0 / 27.0) * g * g * g)
    if p > 0.5:
        g = p - 0.5
        return math.exp(-0.25 * g * g * g)
    return 1.0


def build_wtable(grid: GridParams) -> WTable:
    """Tabulate wtilde(m/M - 1/5) * end_correction(m/M) for m in [1, M-1].

    Built by scalar calls so the table is bit-identical to the scalar API.
    Row 0 is NaN (never read; lookups clamp to row 1).
    """
    n = grid.grid_size
    values = np.full(n, np.nan, dtype=np.float64)
    for m in range(1, n):
        p = m / n
        values[m] = wtilde(p - 0.2) * end_correction(p)
    if not np.all(np.diff(values[1:]) > 0.0):
        raise BracketError("weight table lost strict monotonicity")
    return WTable(values=values, grid=grid)


# --------------------------------------------------------------------------
# Config combinatorics
# --------------------------------------------------------------------------

def binom(n: int, k: int) -> int:
    """Binomial coefficient restricted to the degree range n <= 9."""
    if not (isinstance(n, int) and isinstance(k, int) and 0 <= k <= n <= 9):
        raise DomainError(f"need 0 <= k <= n <= 9, got n={n!r}, k={k!r}")
    return math.comb(n, k)


def noperm(config: DegreeConfig) -> int:
    """Number of distinct orderings of the sorted config: 4!/prod(mult!)."""
    mult = Counter(config.j)
    denom = 1
    for count in mult.values():
        denom *= math.factorial(count)
    return 24 // denom


def config_prob(config: DegreeConfig, qhat: QHat | float) -> float:
    """Occurrence probability of one ordered config among non-terminating draws.

    prod_i C(9, j_i) * (qhat/2)^sum(j) * (1 - qhat/2)^(36 - sum(j)).
    Summed over all 495 sorted configs with their permutation counts this
    equals qhat itself (the fixed-point identity).
    """
    q = float(qhat)
    total = sum(config.j)
    coef = 1
    for j in config.j:
        coef *= binom(9, j)
    return coef * (0.5 * q) ** total * (1.0 - 0.5 * q) ** (36 - total)
