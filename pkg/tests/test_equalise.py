"""Cell-level equalisation tests.

Oracles come first and stay independent of the solver under test:

* ``scan_oracle`` reproduces a cell by brute force — scan the first weight on
  a 1e-5 grid, derive the rest from the budget and symmetry, and keep the
  scan point with the smallest max pairwise deviation of the four values.
* ``geometric_oracle`` re-solves a cell with a log-scale outer bisection and
  a 200-step inner bisection — same defining equations, entirely different
  iteration, no shared code with the kernels.
* The defining-property checks (budget, value bracketing) evaluate the pure
  Python table lookup, not the JIT path.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from chaindrift.core import (
    DegreeConfig,
    DomainError,
    GridParams,
    SolverFailure,
    WTable,
    all_configs,
    build_wtable,
)
from chaindrift.equalise import (
    DirectionWeights,
    bisect_root,
    direction_weights,
    equalise,
)

ACC = 1e-11


@pytest.fixture(scope="module")
def table20k() -> WTable:
    return build_wtable(GridParams(20000))


@pytest.fixture(scope="module")
def table2k() -> WTable:
    return build_wtable(GridParams(2000))


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def pain_oracle(table: WTable, j: int, q: float) -> float:
    """Per-direction value via the pure Python lookup."""
    return table.lookup((1.0 - q) / j) / q


def scan_oracle_1999(table: WTable) -> tuple[float, float]:
    """Brute-force solution of the p = 0.5, config (1,9,9,9) cell.

    Scans q1 on a 1e-5 grid; the remaining three weights are forced by the
    budget and symmetry (q2 = q3 = q4 = (0.5 - q1)/3).  Returns the scan
    point minimising the max pairwise deviation of the four values, plus the
    deviation achieved there.
    """
    best_q1, best_dev = 0.0, math.inf
    for i in range(1, 50000):
        q1 = i * 1e-5
        rest = (0.5 - q1) / 3.0
        if rest <= 0.0:
            break
        v1 = pain_oracle(table, 1, q1)
        v2 = pain_oracle(table, 9, rest)
        dev = abs(v1 - v2)  # three directions coincide: one pairwise gap
        if dev < best_dev:
            best_q1, best_dev = q1, dev
    return best_q1, best_dev


def geometric_oracle(table: WTable, m: int, js: tuple[int, ...]) -> tuple[list[float], float]:
    """Independent re-solve: log-scale outer bisection, 200-step inner."""
    budget = 1.0 - m / table.grid.grid_size

    def root(j: int, c: float) -> float:
        lo, hi = 0.0, 1.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if pain_oracle(table, j, mid) >= c:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    lo, hi = 1e-6, 1e10
    for _ in range(200):
        c = math.sqrt(lo * hi)
        if sum(root(j, c) for j in js) > budget:
            lo = c
        else:
            hi = c
    c = math.sqrt(lo * hi)
    return [root(j, c) for j in js], c


def random_cells(n: int, grid_size: int, seed: int) -> list[tuple[int, DegreeConfig]]:
    rng = np.random.Generator(np.random.Philox(seed))
    configs = all_configs()
    return [(int(rng.integers(1, grid_size)),
             configs[int(rng.integers(len(configs)))])
            for _ in range(n)]


# ---------------------------------------------------------------------------
# example cells
# ---------------------------------------------------------------------------

def test_fixed_point_cell(table20k):
    res = equalise(4000, DegreeConfig((4, 4, 4, 4)), table20k)
    assert not res.sentinel
    for q in res.q:
        assert q == pytest.approx(0.2, abs=1e-6)
    assert res.common_value == pytest.approx(5.0, abs=1e-5)
    assert res.drift_increment == pytest.approx(0.0, abs=1e-5)
    assert res.budget_residual <= 5 * ACC


def test_symmetric_configs_share_the_budget(table20k):
    for j in (1, 2, 5, 9):
        for m in (4000, 10000, 15000):
            res = equalise(m, DegreeConfig((j, j, j, j)), table20k)
            expect = (1.0 - m / 20000) / 4.0
            assert len(set(res.q)) == 1
            assert res.q[0] == pytest.approx(expect, abs=1e-6)


def test_asymmetric_cell_matches_scan_oracle(table20k):
    best_q1, best_dev = scan_oracle_1999(table20k)
    res = equalise(10000, DegreeConfig((1, 9, 9, 9)), table20k)
    assert res.q[0] > res.q[1]
    assert res.q[1] == res.q[2] == res.q[3]
    assert res.q[0] == pytest.approx(best_q1, abs=2e-5)
    assert best_dev < 1e-2  # scan resolution bound, sanity only


def test_cells_match_geometric_oracle(table20k):
    # spot cells away from lookup jumps (oracle and solver may legitimately
    # disagree at jump-pinned roots, where a continuum of q gives the same
    # lookup row)
    for m, js in ((10000, (1, 9, 9, 9)), (4000, (4, 4, 4, 4)),
                  (8000, (2, 3, 5, 7)), (14000, (1, 1, 2, 2))):
        qs, c = geometric_oracle(table20k, m, js)
        res = equalise(m, js, table20k)
        for got, want in zip(res.q, qs):
            # both solvers quantise the same crossing; even at a lookup jump
            # they pin the same location to their accuracy
            assert got == pytest.approx(want, abs=1e-10)
        # the common value of a jump-pinned cell is only determined up to the
        # jump interval (~1e-3 relative), and the two solvers may pick
        # different points of it
        assert res.common_value == pytest.approx(c, rel=1e-3)


def test_sentinel_cell_near_full_weight(table20k):
    res = equalise(19999, DegreeConfig((1, 1, 1, 2)), table20k)
    assert res.sentinel
    assert not res.converged
    assert res.target_value > 0.99e8
    assert math.isfinite(res.drift_increment)


# ---------------------------------------------------------------------------
# invariants on random cells
# ---------------------------------------------------------------------------

def test_budget_invariant(table20k):
    # Accept-window exits satisfy |residual| < accuracy by construction.
    # When the outer bracket exhausts first, each of the four roots carries
    # up to one accuracy of quantisation from the inner bisection, so the
    # structural bound is 5 * accuracy; measured worst cases sit near
    # 2.4 * accuracy at both tested accuracies.
    for m, cfg in random_cells(150, 20000, seed=71):
        res10 = equalise(m, cfg, table20k, accuracy=1e-10)
        assert res10.budget_residual <= 5e-10
        res11 = equalise(m, cfg, table20k, accuracy=1e-11)
        assert res11.budget_residual <= 5e-11


def test_value_agreement_invariant(table20k):
    # Every root sits within 2*acc of the crossing of its direction's value
    # with the final outer target (verified two-sidedly via the pure Python
    # lookup).  When no direction is pinned at a lookup jump — all probe
    # points q_i -/+ 2*acc land in one table row — the four measured values
    # must also agree pairwise to 1e-6 relative; at a jump the value is only
    # determined up to the jump gap, so only the bracketing applies.
    grid = 20000
    for m, cfg in random_cells(200, grid, seed=72):
        res = equalise(m, cfg, table20k)
        if res.sentinel:
            continue
        target = res.target_value
        all_smooth = True
        pains = []
        for j, q in zip(cfg, res.q):
            lo, hi = q - 2 * ACC, q + 2 * ACC
            assert pain_oracle(table20k, j, lo) >= target * (1 - 1e-9)
            if hi < 1.0:
                assert pain_oracle(table20k, j, hi) <= target * (1 + 1e-9)
            if int(grid * (1 - lo) / j) != int(grid * (1 - hi) / j):
                all_smooth = False
            pains.append(pain_oracle(table20k, j, q))
        if all_smooth:
            spread = (max(pains) - min(pains)) / res.common_value
            assert spread < 1e-6


def test_degree_monotonicity(table20k):
    for m, cfg in random_cells(200, 20000, seed=73):
        res = equalise(m, cfg, table20k)
        for a, b in zip(res.q, res.q[1:]):
            assert a >= b  # sorted config: larger branch count, smaller weight


def test_permutation_equivariance(table20k):
    rng = np.random.Generator(np.random.Philox(74))
    for m, cfg in random_cells(60, 20000, seed=75):
        perm = rng.permutation(4)
        shuffled = tuple(cfg.j[i] for i in perm)
        base = equalise(m, cfg, table20k)
        other = equalise(m, shuffled, table20k)
        assert other.config == shuffled
        for k, i in enumerate(perm):
            # the budget total is summed in config order, so a permutation
            # can flip one outer accept at the tolerance boundary; roots
            # agree to solver accuracy, not bitwise
            assert other.q[k] == pytest.approx(base.q[i], abs=5 * ACC)


# ---------------------------------------------------------------------------
# argument validation and failure paths
# ---------------------------------------------------------------------------

def test_equalise_validates_arguments(table2k):
    with pytest.raises(DomainError):
        equalise(0, (1, 2, 3, 4), table2k)
    with pytest.raises(DomainError):
        equalise(2000, (1, 2, 3, 4), table2k)
    with pytest.raises(DomainError):
        equalise(100, (0, 2, 3, 4), table2k)
    with pytest.raises(DomainError):
        equalise(100, (1, 2, 3), table2k)
    with pytest.raises(DomainError):
        equalise(100, (1, 2, 3, 4), table2k, accuracy=1.0)


def test_corrupted_table_trips_solver_failure():
    table = build_wtable(GridParams(200))
    table.values[100] = np.nan  # simulate an index bug downstream
    with pytest.raises(SolverFailure) as exc:
        equalise(100, DegreeConfig((2, 3, 4, 5)), table)
    assert exc.value.p_index == 100
    assert exc.value.config == (2, 3, 4, 5)


# ---------------------------------------------------------------------------
# direction weights
# ---------------------------------------------------------------------------

def test_direction_weights_symmetric(table20k):
    res = equalise(4000, DegreeConfig((4, 4, 4, 4)), table20k)
    w = direction_weights(res, (4, 4, 4, 4), table20k)
    for s in w.s:
        assert s == pytest.approx(0.25, abs=1e-4)
    assert sum(w.s) == 1.0


def test_direction_weights_sum_exactly_one(table20k):
    for m, cfg in random_cells(200, 20000, seed=76):
        res = equalise(m, cfg, table20k)
        if res.sentinel:
            continue
        w = direction_weights(res, cfg, table20k)
        assert sum(w.s) == 1.0
        assert min(w.s) > 0.0


def test_direction_weights_match_stencil_oracle(table20k):
    from chaindrift.kernels import smooth_table_value

    def stencil_slope(j: int, q: float) -> float:
        h = 1e-5

        def g(x: float) -> float:
            return math.log(smooth_table_value((1.0 - x) / j)) - math.log(x)

        return (-g(q + 2 * h) + 8 * g(q + h) - 8 * g(q - h) + g(q - 2 * h)) / (12 * h)

    res = equalise(10000, DegreeConfig((1, 9, 9, 9)), table20k)
    t = [-1.0 / stencil_slope(j, q) for j, q in zip((1, 9, 9, 9), res.q)]
    expect = [v / sum(t) for v in t]
    w = direction_weights(res, (1, 9, 9, 9), table20k)
    for got, want in zip(w.s, expect):
        assert got == pytest.approx(want, rel=1e-3)


def test_direction_weights_reject_sentinel(table20k):
    res = equalise(19999, DegreeConfig((1, 1, 1, 2)), table20k)
    with pytest.raises(DomainError):
        direction_weights(res, (1, 1, 1, 2), table20k)


def test_direction_weights_type_validation():
    with pytest.raises(DomainError):
        DirectionWeights(s=(0.5, 0.5, 0.0, 0.0))
    with pytest.raises(DomainError):
        DirectionWeights(s=(0.3, 0.3, 0.3, 0.3))
    DirectionWeights(s=(0.25, 0.25, 0.25, 0.25))


def test_local_minimum_property(table20k):
    # the solved weights minimise the s-weighted log-value over the feasible
    # simplex: random feasible alternatives never beat them by more than the
    # stated slack
    rng = np.random.Generator(np.random.Philox(77))
    for m, cfg in random_cells(25, 20000, seed=78):
        res = equalise(m, cfg, table20k)
        if res.sentinel:
            continue
        w = direction_weights(res, cfg, table20k)
        budget = 1.0 - m / 20000
        at_solution = sum(
            s * math.log(pain_oracle(table20k, j, q))
            for s, j, q in zip(w.s, cfg, res.q))
        for _ in range(25):
            parts = rng.exponential(size=4)
            qstar = parts / parts.sum() * budget
            value = sum(
                s * math.log(pain_oracle(table20k, j, q))
                for s, j, q in zip(w.s, cfg, qstar))
            assert value >= at_solution - 1e-6


# ---------------------------------------------------------------------------
# bisect_root re-export behaves as documented
# ---------------------------------------------------------------------------

def test_bisect_root_reexport(table20k):
    got = bisect_root(lambda q: pain_oracle(table20k, 4, q), 5.0, 1e-12, 1.0, 1e-11)
    assert got == pytest.approx(0.2, abs=1e-6)
