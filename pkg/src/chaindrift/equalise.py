"""Per-cell equalisation: equal active-pain weights under a unit budget.

For a grid weight p = m/M and four downstream branch counts (j1..j4), the
solver finds weights q1..q4 with

    W_lookup((1 - q_i)/j_i) / q_i  equal across i,   p + sum(q_i) = 1.

The common value is bisected on [0, 1e8]; each candidate value is inverted
per direction by an inner bisection on [0, 1].  Cells whose true common
value exceeds the upper bracket pin there and are flagged as sentinel
("unbounded pain" cells); they are kept, not raised, because the sweep
statistics deliberately include them.

The numerical work happens in the JIT kernels (`chaindrift.kernels`); this
module owns validation, result types, and the direction-weight computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from chaindrift import kernels
from chaindrift.core import (
    DegreeConfig,
    DomainError,
    SolverFailure,
    WTable,
    bisect_root,
)

__all__ = [
    "EqualisationResult",
    "DirectionWeights",
    "DegenerateSlopeError",
    "bisect_root",
    "equalise",
    "direction_weights",
]


class DegenerateSlopeError(RuntimeError):
    """A direction slope estimate came out nonnegative (should not happen:
    the per-direction value is strictly decreasing in its weight)."""


@dataclass(frozen=True)
class EqualisationResult:
    """Solution of one (p, config) cell.

    common_value is the shared per-direction value W((1-q_i)/j_i at grid)/q_i
    measured at the first direction's root; target_value is the final outer
    bisection midpoint (the two agree to within solver accuracy except at
    lookup jumps).  drift_increment = log(p * common_value) - log(W[p*M]).
    """

    p_index: int
    config: tuple[int, int, int, int]
    q: tuple[float, float, float, float]
    common_value: float
    target_value: float
    drift_increment: float
    budget_residual: float  # |p + sum(q) - 1| at exit
    sentinel: bool  # pinned at the outer bracket: unbounded-pain cell

    @property
    def converged(self) -> bool:
        return not self.sentinel


@dataclass(frozen=True)
class DirectionWeights:
    """Outgoing direction probabilities s_i, positive and summing to 1."""

    s: tuple[float, float, float, float]

    def __post_init__(self) -> None:
        if min(self.s) <= 0.0:
            raise DomainError(f"direction weights must be positive, got {self.s!r}")
        if sum(self.s) != 1.0:
            raise DomainError(f"direction weights must sum to exactly 1, got {self.s!r}")


def _normalise_config(config: DegreeConfig | Sequence[int]) -> tuple[int, int, int, int]:
    """Accept a DegreeConfig or any 4-sequence of counts in [1, 9].

    Plain sequences may be unsorted: the solver respects the given order
    (solving a permuted config permutes the solution identically), which the
    property suite exercises directly.
    """
    js = tuple(int(v) for v in config)
    if len(js) != 4 or any(not (1 <= v <= 9) for v in js):
        raise DomainError(f"config must be four branch counts in [1, 9], got {config!r}")
    return js  # type: ignore[return-value]


def equalise(p_index: int, config: DegreeConfig | Sequence[int], table: WTable,
             accuracy: float = 1e-11) -> EqualisationResult:
    """Solve one cell; see the module docstring for the contract.

    Raises SolverFailure (carrying the cell coordinates) only if the solver
    produced non-finite values — the tripwire for a corrupted table.  Cells
    pinned at the outer bracket come back flagged sentinel instead.
    """
    grid = table.grid
    if not (grid.min_index <= p_index <= grid.max_index):
        raise DomainError(
            f"p_index must lie in [{grid.min_index}, {grid.max_index}], got {p_index!r}")
    if not (1e-14 <= accuracy <= 1e-2):
        raise DomainError(f"accuracy must lie in [1e-14, 1e-2], got {accuracy!r}")
    js = _normalise_config(config)
    q1, q2, q3, q4, common, mid, drift, residual, status = kernels.solve_cell(
        table.values, p_index, js, accuracy)
    if status == kernels.STATUS_INVALID:
        raise SolverFailure(
            f"non-finite cell solution at p_index={p_index}, config={js}",
            p_index=p_index, config=js)
    return EqualisationResult(
        p_index=p_index,
        config=js,
        q=(q1, q2, q3, q4),
        common_value=common,
        target_value=mid,
        drift_increment=drift,
        budget_residual=residual,
        sentinel=(status == kernels.STATUS_SENTINEL),
    )


def direction_weights(result: EqualisationResult, config: DegreeConfig | Sequence[int],
                      table: WTable) -> DirectionWeights:
    """Direction probabilities s_i = t_i / sum(t) for one solved cell.

    t_i is the reciprocal of the negative slope of q -> log(W((1-q)/j_i)/q)
    at q_i, by central finite difference with step max(1e-7, 1e-4*q_i).  The
    slope is taken on the smooth form of the table's function (series times
    end damping): at default grid resolution a difference of the step table
    over this h is flat inside a row and degenerate across a boundary.  The
    table argument pins the grid context; its sampled values are not re-read.
    """
    del table  # scale/grid context only; the smooth form is differentiated
    if result.sentinel:
        raise DomainError(
            f"direction weights need a converged result; cell p_index="
            f"{result.p_index}, config={result.config} pinned at the bracket")
    js = _normalise_config(config)
    s1, s2, s3, s4, bad = kernels.direction_weights_raw(js, result.q)
    if bad:
        raise DegenerateSlopeError(
            f"nonnegative slope at p_index={result.p_index}, config={js}")
    return DirectionWeights(s=(s1, s2, s3, s4))
