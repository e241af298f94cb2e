"""JIT-compiled kernels shared by the equalisation solver, sweep, and Monte Carlo.

The scalar semantics here are the load-bearing part of the whole library and
are deliberately boring: clamped floor lookup, 37-iteration inner bisection
on [0, 1], outer bisection of the common value on [0, 1e8] with an asymmetric
accept window, and the drift increment log(m*t/M) - log(W[m]).  The Python
wrappers in `equalise` call straight into these kernels so there is exactly
one implementation of the solver.

Determinism: fastmath stays off everywhere (no FMA contraction, no
reassociation), parallel loops write disjoint rows, and all reductions happen
outside the kernels in fixed order.  Results are bit-identical across thread
counts and repeated runs.
"""

from __future__ import annotations

import math
import os

# Raise the numba thread ceiling before numba is first imported, so that
# set_num_threads(1/4/8) works even on boxes whose default ceiling is 1.
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(8, os.cpu_count() or 1)))

import numpy as np
from numba import njit, prange, set_num_threads  # noqa: E402

__all__ = [
    "set_num_threads",
    "solve_cell",
    "sweep_configs",
    "direction_weights_raw",
    "simulate_path_chunk",
]

# status codes returned by the cell solver
STATUS_OK = 0
STATUS_SENTINEL = 1  # pinned at the upper bracket: unbounded-pain cell
STATUS_INVALID = 2  # NaN escaped the table: index bug tripwire

_SENTINEL_LOOKUP = 1e10
_COMMON_CAP = 1e8

# series coefficients, duplicated from core.SeriesCoeffs for nopython use
_C1 = 5.0 / 3072.0
_C2 = 100.0 / (9.0 * 17.0 * 16.0 ** 5)
_C3 = 125.0 / 2.0 ** 42


@njit(cache=True, error_model='numpy')
def _lookup(values, x):
    """Clamped floor lookup; arguments >= 1 mean unbounded pain.

    int() truncation equals floor for the nonnegative arguments the solver
    produces; negative strays truncate upward but land below 1 either way
    and are clamped to row 1, identical to flooring.
    """
    if x >= 1.0:
        return _SENTINEL_LOOKUP
    n = values.shape[0]
    i = int(n * x)
    if i < 1:
        i = 1
    elif i > n - 1:
        i = n - 1
    return values[i]


@njit(cache=True, error_model='numpy')
def _pain(values, j, q):
    """Active pain in direction with branch count j at downstream weight q."""
    return _lookup(values, (1.0 - q) / j) / q


@njit(cache=True, error_model='numpy')
def _bisect_pain(values, j, target, acc):
    """Root of pain(q) = target on [0, 1]; ties move the lower bound.

    No float-resolution exit here: on [0, 1] the bracket width at any
    supported accuracy (>= 1e-13) stays far above ulp(1), so the width test
    always terminates the loop first.
    """
    lb = 0.0
    ub = 1.0
    while True:
        mid = 0.5 * (lb + ub)
        if _pain(values, j, mid) >= target:
            lb = mid
        else:
            ub = mid
        if ub - lb < acc:
            return mid


@njit(cache=True, error_model='numpy')
def _solve_cell(values, m, j1, j2, j3, j4, acc):
    """Equalise one (m, config) cell.

    Outer bisection of the common pain value on [0, 1e8]; per candidate value
    each direction's weight is solved by the inner bisection (directions with
    equal branch counts share one solve — identical values in identical
    order, just cheaper).  Exits on the asymmetric accept window, on bracket
    exhaustion, or when the midpoint degenerates at float resolution (which
    in practice happens only for cells pinned at the upper bracket).

    Returns (q1, q2, q3, q4, common, target_mid, drift, residual, status).
    """
    n = values.shape[0]
    p = m / n
    budget = 1.0 - p
    lb = 0.0
    ub = _COMMON_CAP
    q1 = 0.0
    q2 = 0.0
    q3 = 0.0
    q4 = 0.0
    mid = 0.0
    while True:
        new_mid = 0.5 * (lb + ub)
        if new_mid == lb or new_mid == ub:
            break  # bracket at binary64 resolution; keep previous roots
        mid = new_mid
        q1 = _bisect_pain(values, j1, mid, acc)
        if j2 == j1:
            q2 = q1
        else:
            q2 = _bisect_pain(values, j2, mid, acc)
        if j3 == j1:
            q3 = q1
        elif j3 == j2:
            q3 = q2
        else:
            q3 = _bisect_pain(values, j3, mid, acc)
        if j4 == j1:
            q4 = q1
        elif j4 == j2:
            q4 = q2
        elif j4 == j3:
            q4 = q3
        else:
            q4 = _bisect_pain(values, j4, mid, acc)
        total = q1 + q2 + q3 + q4
        if budget - total >= acc:
            ub = mid
        elif total - budget > acc:
            lb = mid
        else:
            break
        if ub - lb < acc:
            break
    total = q1 + q2 + q3 + q4
    common = _pain(values, j1, q1)
    drift = math.log(m * common / n) - math.log(values[m])
    residual = abs(total - budget)
    status = STATUS_OK
    if common != common or drift != drift:  # NaN tripwire
        status = STATUS_INVALID
    elif ub == _COMMON_CAP and residual > acc:
        status = STATUS_SENTINEL
    return q1, q2, q3, q4, common, mid, drift, residual, status


@njit(cache=True, error_model='numpy')
def _sweep_config(values, j1, j2, j3, j4, acc):
    """All grid rows for one sorted config; returns the five statistics.

    Bookkeeping is exactly the reference pattern: adjacent-difference pairs
    only between neighbouring sorted positions with j_k = j_l + 1; jump
    values q_k over all six position pairs with a strictly smaller j at the
    other position; the tail p + q3 + q4 gated on j2 > j1 > 1; the minimum
    over rows of the drift increment.  Sentinel-pinned rows participate like
    any other row (their tiny weights and large positive drift never move
    the extrema), mirroring the reference.
    """
    n = values.shape[0]
    max_adj = 0.0
    max_jump = 0.0
    min_tail = np.inf
    min_drift = np.inf
    min_q = np.inf
    for m in range(1, n):
        q1, q2, q3, q4, common, mid, drift, residual, status = _solve_cell(
            values, m, j1, j2, j3, j4, acc)
        if status == STATUS_INVALID:
            return max_adj, max_jump, min_tail, min_drift, min_q, m
        if j1 == j2 - 1:
            d = abs(q2 - q1)
            if d > max_adj:
                max_adj = d
        if j2 == j3 - 1:
            d = abs(q3 - q2)
            if d > max_adj:
                max_adj = d
        if j3 == j4 - 1:
            d = abs(q4 - q3)
            if d > max_adj:
                max_adj = d
        if j1 < j2 and q2 > max_jump:
            max_jump = q2
        if j1 < j3 and q3 > max_jump:
            max_jump = q3
        if j1 < j4 and q4 > max_jump:
            max_jump = q4
        if j2 < j3 and q3 > max_jump:
            max_jump = q3
        if j2 < j4 and q4 > max_jump:
            max_jump = q4
        if j3 < j4 and q4 > max_jump:
            max_jump = q4
        if j1 > 1 and j2 > j1:
            tail = m / n + q3 + q4
            if tail < min_tail:
                min_tail = tail
        if drift < min_drift:
            min_drift = drift
        qm = q1
        if q2 < qm:
            qm = q2
        if q3 < qm:
            qm = q3
        if q4 < qm:
            qm = q4
        if qm < min_q:
            min_q = qm
    return max_adj, max_jump, min_tail, min_drift, min_q, 0


@njit(parallel=True, cache=True, error_model='numpy')
def _sweep_all(values, configs, acc):
    """Parallel map over configs; each row of `out` is written by one task."""
    ncfg = configs.shape[0]
    out = np.empty((ncfg, 5), dtype=np.float64)
    fail_row = np.zeros(ncfg, dtype=np.int64)
    for c in prange(ncfg):
        a, b, t, d, q, bad = _sweep_config(
            values, configs[c, 0], configs[c, 1], configs[c, 2],
            configs[c, 3], acc)
        out[c, 0] = a
        out[c, 1] = b
        out[c, 2] = t
        out[c, 3] = d
        out[c, 4] = q
        fail_row[c] = bad
    return out, fail_row


@njit(cache=True, error_model='numpy')
def _wcont(p):
    """Continuous table value (series form times end damping) off the grid."""
    t = p - 0.2
    series = ((_C3 * t + _C2) * t + _C1) * t + 1.0
    v = ((1.0 + 5.0 * t) / (1.0 - 1.25 * t)
         * (16.0 + 5.0 * t) / (16.0 - 1.25 * t)
         * (256.0 + 5.0 * t) / (256.0 - 1.25 * t)
         * series)
    if p < 0.2:
        g = p - 0.2
        v *= math.exp((20.0 / 27.0) * g * g * g)
    elif p > 0.5:
        g = p - 0.5
        v *= math.exp(-0.25 * g * g * g)
    return v


@njit(cache=True, error_model='numpy')
def _direction_slope(j, q):
    """Central-difference slope of q -> log(W((1-q)/j)/q), smooth evaluation.

    Step h = max(1e-7, 1e-4*q), clamped so both sample points keep q in (0,1).
    The smooth form is required: at default grid resolution the step table is
    flat across a step this size, so a table difference would estimate only
    the -1/q term.
    """
    h = 1e-4 * q
    if h < 1e-7:
        h = 1e-7
    if h > 0.5 * q:
        h = 0.5 * q
    if h > 0.5 * (1.0 - q):
        h = 0.5 * (1.0 - q)
    up = math.log(_wcont((1.0 - (q + h)) / j)) - math.log(q + h)
    dn = math.log(_wcont((1.0 - (q - h)) / j)) - math.log(q - h)
    return (up - dn) / (2.0 * h)


@njit(cache=True, error_model='numpy')
def _direction_weights(j1, j2, j3, j4, q1, q2, q3, q4):
    """Normalised direction probabilities s_i = t_i / sum(t).

    t_i is the reciprocal of the negative per-direction slope.  One
    component is computed as one minus the others so that the plain
    left-to-right sum s1+s2+s3+s4 equals 1.0 exactly: the largest component
    absorbs the remainder when that already closes the sum, otherwise the
    last component does (for the last component exactness is guaranteed —
    the first three sum exactly as they will be re-summed, and x + fl(1-x)
    rounds to 1.0 for any x in (0,1)).  Returns status 1 on a nonnegative
    slope (degenerate) — never observed for genuine cell solutions.
    """
    g1 = _direction_slope(j1, q1)
    g2 = _direction_slope(j2, q2)
    g3 = _direction_slope(j3, q3)
    g4 = _direction_slope(j4, q4)
    if not (g1 < 0.0 and g2 < 0.0 and g3 < 0.0 and g4 < 0.0):
        return 0.25, 0.25, 0.25, 0.25, 1
    t1 = -1.0 / g1
    t2 = -1.0 / g2
    t3 = -1.0 / g3
    t4 = -1.0 / g4
    total = t1 + t2 + t3 + t4
    s1 = t1 / total
    s2 = t2 / total
    s3 = t3 / total
    s4 = t4 / total
    if t1 >= t2 and t1 >= t3 and t1 >= t4:
        c1 = 1.0 - (s2 + s3 + s4)
        if c1 + s2 + s3 + s4 == 1.0:
            return c1, s2, s3, s4, 0
    elif t2 >= t3 and t2 >= t4:
        c2 = 1.0 - (s1 + s3 + s4)
        if s1 + c2 + s3 + s4 == 1.0:
            return s1, c2, s3, s4, 0
    elif t3 >= t4:
        c3 = 1.0 - (s1 + s2 + s4)
        if s1 + s2 + c3 + s4 == 1.0:
            return s1, s2, c3, s4, 0
    s4 = 1.0 - (s1 + s2 + s3)
    return s1, s2, s3, s4, 0


@njit(cache=True, error_model='numpy')
def _sample_index(cdf, u):
    """Smallest i with cdf[i] > u (cdf increasing, ending at exactly 1.0)."""
    lo = 0
    hi = cdf.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(parallel=True, cache=True, error_model='numpy')
def _path_chunk(values, configs, cdf, u_config, u_dir, m_start, acc):
    """Simulate one chunk of independent walk paths.

    Per step: draw a sorted config, equalise the current cell, draw the
    outgoing direction i with probability s_i, record the cell's drift
    increment (phi-with-substitution) and the plain log(p) - log(q_i)
    increment, then move to floor(M * (1 - q_i) / j_i) clamped to the grid.
    Sentinel-pinned cells are flagged so the statistics layer can exclude
    their (finite but meaningless) increment; the walk itself continues.

    Returns (increments, phi_increments, sentinel_flags, final_rows).
    """
    npaths, nsteps = u_config.shape
    n = values.shape[0]
    incr = np.zeros((npaths, nsteps), dtype=np.float64)
    phi = np.zeros((npaths, nsteps), dtype=np.float64)
    sent = np.zeros((npaths, nsteps), dtype=np.uint8)
    final_rows = np.empty(npaths, dtype=np.int64)
    for path in prange(npaths):
        m = m_start
        for step in range(nsteps):
            idx = _sample_index(cdf, u_config[path, step])
            j1 = configs[idx, 0]
            j2 = configs[idx, 1]
            j3 = configs[idx, 2]
            j4 = configs[idx, 3]
            q1, q2, q3, q4, common, mid, drift, residual, status = _solve_cell(
                values, m, j1, j2, j3, j4, acc)
            incr[path, step] = drift
            if status != STATUS_OK:
                sent[path, step] = 1
            s1, s2, s3, s4, bad = _direction_weights(
                j1, j2, j3, j4, q1, q2, q3, q4)
            v = u_dir[path, step]
            if v < s1:
                ji = j1
                qi = q1
            elif v < s1 + s2:
                ji = j2
                qi = q2
            elif v < s1 + s2 + s3:
                ji = j3
                qi = q3
            else:
                ji = j4
                qi = q4
            phi[path, step] = math.log(m / n) - math.log(qi)
            nxt = int(n * ((1.0 - qi) / ji))
            if nxt < 1:
                nxt = 1
            elif nxt > n - 1:
                nxt = n - 1
            m = nxt
        final_rows[path] = m
    return incr, phi, sent, final_rows


# ---------------------------------------------------------------------------
# Thin python-facing wrappers (plain functions so signatures stay readable)
# ---------------------------------------------------------------------------

def solve_cell(values: np.ndarray, m: int, js, acc: float):
    """Solve one cell; js is any length-4 int sequence (order respected)."""
    j1, j2, j3, j4 = (int(v) for v in js)
    return _solve_cell(values, m, j1, j2, j3, j4, acc)


def sweep_configs(values: np.ndarray, configs: np.ndarray, acc: float):
    """Run the parallel sweep kernel over an (ncfg, 4) int64 config array."""
    return _sweep_all(values, configs, acc)


def direction_weights_raw(js, qs):
    """Direction probabilities for one solved cell (kernel passthrough)."""
    j1, j2, j3, j4 = (int(v) for v in js)
    q1, q2, q3, q4 = (float(v) for v in qs)
    return _direction_weights(j1, j2, j3, j4, q1, q2, q3, q4)


def simulate_path_chunk(values, configs, cdf, u_config, u_dir, m_start, acc):
    """Kernel passthrough for one chunk of walk paths."""
    return _path_chunk(values, configs, cdf, u_config, u_dir, int(m_start), acc)


def smooth_table_value(p: float) -> float:
    """Continuous table value at weight p (kernel passthrough)."""
    return float(_wcont(float(p)))
