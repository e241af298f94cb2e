"""Chain sampling and seeded Monte Carlo drift experiments.

Three groups of functionality:

* Degree trees — sample the branching structure of the chain process
  (each passive node draws degree-1 ~ Binomial(9, 1/2), each active node has
  four passive children), label terminating nodes bottom-up, and verify at
  desk scale that the terminating routing never crowds a receiving node.
* Depth-limited non-termination — the deterministic iterate
  q_{k+1} = (1 - (1 - q_k/2)^9)^4 from q_0 = 1, whose limit the tree
  frequencies approach as the horizon deepens.
* Drift Monte Carlo — two modes over the weight grid: "lower-bound" draws
  i.i.d. per-config minimum drift increments (whose mean is the certified
  rate), and "path" walks the actual process: equalise the current cell,
  move in a direction drawn from the direction weights, round the next
  weight down to the grid.

Determinism: every path has its own counter-based RNG stream keyed by
(seed, absolute path index), chunking is fixed at 256 paths regardless of
thread count, and reductions accumulate in path-index order, so results are
bit-identical across thread counts and repeated runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from chaindrift import kernels
from chaindrift.core import (
    DomainError,
    QHat,
    WTable,
    all_configs,
    config_prob,
    nontermination_map,
    noperm,
    solve_qhat,
)
from chaindrift.sweep import BoundCheck, Certificate, SweepReport

__all__ = [
    "DegreeTree",
    "TerminationLabels",
    "DriftStats",
    "sample_tree",
    "classify_terminating",
    "qhat_by_depth",
    "verify_terminating_zero_pain",
    "find_routing_violation",
    "simulate_drift",
    "check_linear_growth",
]

# two-sided 99% normal quantile, Phi^{-1}(0.995)
Z99 = 2.5758293035489004

_NO_LABEL = -1  # non-terminating within the horizon


# ---------------------------------------------------------------------------
# degree trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DegreeTree:
    """Alternating active/passive tree, stored level by level.

    The root (an active node, distance 0) has four passive children; a
    passive node of degree d has d - 1 active children, each again with four
    passive children.  ``degrees[k]`` holds the degrees of passive level k
    (distance 2k + 1); ``depth`` is the even horizon distance, so
    ``depth // 2`` passive levels are materialised.  Active nodes below the
    last passive level are outside the horizon and never labelled.
    """

    depth: int
    degrees: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if self.depth % 2 or not (2 <= self.depth <= 16):
            raise DomainError(f"depth must be even and in [2, 16], got {self.depth!r}")
        if len(self.degrees) != self.depth // 2:
            raise DomainError("one degree array per passive level is required")

    def active_children(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """(start, stop) slice bounds into active level ``level + 1`` for each
        passive node at ``level``."""
        counts = self.degrees[level] - 1
        stop = np.cumsum(counts)
        return stop - counts, stop


@dataclass(frozen=True, eq=False)
class TerminationLabels:
    """Bottom-up termination levels; -1 marks non-terminating within horizon.

    A passive node of degree 1 terminates at level 0.  An active node whose
    labelled children exist terminates at 1 + their minimum; a passive node
    of degree > 1 terminates at 1 + the maximum over its active children,
    but only once all of them are labelled.
    """

    passive: tuple[np.ndarray, ...]
    active: tuple[np.ndarray, ...]

    @property
    def root_label(self) -> int:
        return int(self.active[0][0])


def sample_tree(depth: int, rng: np.random.Generator) -> DegreeTree:
    """Sample a degree tree to the given even horizon depth (at most 16).

    Level sizes grow by a factor of 18 in expectation per passive level, so
    deep horizons get large; desk-scale experiments use depth 2-6.
    """
    if depth % 2 or not (2 <= depth <= 16):
        raise DomainError(f"depth must be even and in [2, 16], got {depth!r}")
    levels: list[np.ndarray] = []
    n_active = 1
    for _ in range(depth // 2):
        n_passive = 4 * n_active
        degrees = 1 + rng.binomial(9, 0.5, size=n_passive).astype(np.int64)
        levels.append(degrees)
        n_active = int(np.sum(degrees - 1))
    return DegreeTree(depth=depth, degrees=tuple(levels))


def classify_terminating(tree: DegreeTree) -> TerminationLabels:
    """Label every node bottom-up; see TerminationLabels for the rules."""
    nlev = tree.depth // 2
    passive: list[np.ndarray] = [None] * nlev  # type: ignore[list-item]
    active: list[np.ndarray] = [None] * nlev  # type: ignore[list-item]
    big = np.iinfo(np.int64).max // 2
    for k in range(nlev - 1, -1, -1):
        deg = tree.degrees[k]
        if k == nlev - 1:
            plab = np.where(deg == 1, 0, _NO_LABEL).astype(np.int64)
        else:
            child = active[k + 1]
            start, _ = tree.active_children(k)
            counts = deg - 1
            # segment reductions over each passive node's active children;
            # pad so the trailing segment is never truncated, and note that
            # reduceat yields a bogus single element for empty segments —
            # those are exactly the degree-1 rows overridden below
            pad_child = np.concatenate([child, [-big]])
            pad_lab = np.concatenate([(child >= 0).astype(np.int64), [0]])
            n_lab = np.add.reduceat(pad_lab, start)
            seg_max = np.maximum.reduceat(pad_child, start)
            plab = np.where(
                counts == 0, 0,
                np.where(n_lab == counts, 1 + seg_max, _NO_LABEL)).astype(np.int64)
        passive[k] = plab
        quads = plab.reshape(-1, 4)
        masked = np.where(quads >= 0, quads, big)
        best = masked.min(axis=1)
        active[k] = np.where(best < big, 1 + best, _NO_LABEL).astype(np.int64)
    return TerminationLabels(passive=tuple(passive), active=tuple(active))


def qhat_by_depth(d: int) -> float:
    """The non-termination iterate after d applications of the degree map."""
    if not (0 <= d <= 10 ** 4) or int(d) != d:
        raise DomainError(f"iteration count must be an integer in [0, 1e4], got {d!r}")
    q = 1.0
    for _ in range(int(d)):
        q = nontermination_map(q)
    return q


def find_routing_violation(tree: DegreeTree) -> tuple[int, int] | None:
    """Route weight toward terminating directions; find a crowded receiver.

    Every terminating active node sends its unit weight to its first child
    of minimal label; every non-terminating active node (adversarially)
    sends its weight back up to its passive parent.  The receiving child of
    a terminating active must then hold exactly its parent's unit — a second
    unit arriving there would create pain on the terminating route.  Returns
    (passive level, index) of the first crowded receiver, or None.

    Requires a root labelled terminating (raises DomainError otherwise).
    """
    labels = classify_terminating(tree)
    if labels.root_label < 0:
        raise DomainError("routing check needs a root labelled terminating")
    nlev = tree.depth // 2
    in_weight = [np.zeros(len(tree.degrees[k]), dtype=np.int64) for k in range(nlev)]
    chosen = [np.full(len(tree.degrees[k]), False) for k in range(nlev)]
    big = np.iinfo(np.int64).max // 2
    for k in range(nlev):
        alab = labels.active[k]
        plab = labels.passive[k]
        quads = plab.reshape(-1, 4)
        masked = np.where(quads >= 0, quads, big)
        pick = masked.argmin(axis=1)
        term = alab >= 0
        rows = np.nonzero(term)[0]
        receivers = rows * 4 + pick[rows]
        np.add.at(in_weight[k], receivers, 1)
        chosen[k][receivers] = True
        if k > 0:
            # non-terminating actives bounce their weight to the parent passive
            counts = tree.degrees[k - 1] - 1
            parent = np.repeat(np.arange(len(counts)), counts)
            nonterm = np.nonzero(alab < 0)[0]
            np.add.at(in_weight[k - 1], parent[nonterm], 1)
    for k in range(nlev):
        bad = np.nonzero(chosen[k] & (in_weight[k] > 1))[0]
        if bad.size:
            return (k, int(bad[0]))
    return None


def verify_terminating_zero_pain(tree: DegreeTree) -> bool:
    """True when the terminating routing of ``find_routing_violation`` leaves
    every receiving node uncrowded (zero pain along the terminating route)."""
    return find_routing_violation(tree) is None


# ---------------------------------------------------------------------------
# drift Monte Carlo
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DriftStats:
    """Summary of one drift experiment.

    mean/variance/ci cover the per-step increments (in path mode excluding
    the n_sentinel steps whose cell pinned at the solver's outer bracket —
    their large-but-finite increments still enter the running sums).
    threshold = (rate/2) * n_steps; fraction_exceeding is the fraction of
    paths whose running maximum reaches it, fraction_final_below the
    fraction whose final sum stays under it.  mean_phi_increment and
    telescope_residual compare the plain log(p) - log(q) increment with the
    substituted one (path mode only; None otherwise).  finals holds each
    path's final running sum; trajectories optionally holds the first
    (at most 100) running-sum rows.
    """

    mode: str
    n_paths: int
    n_steps: int
    seed: int
    start_index: int | None
    mean_increment: float
    variance: float
    std_error: float
    ci_low: float
    ci_high: float
    threshold: float
    fraction_exceeding: float
    fraction_final_below: float
    n_sentinel: int
    mean_phi_increment: float | None
    telescope_residual: float | None
    finals: np.ndarray = field(repr=False)
    trajectories: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not (self.ci_low <= self.mean_increment <= self.ci_high):
            raise DomainError("confidence interval must contain the mean")


def _config_distribution(qhat: QHat) -> tuple[np.ndarray, np.ndarray, float]:
    """(configs, sampling cdf, total weight) over sorted configs in order.

    The sampling weight of a sorted config is noperm * config_prob / qhat —
    the chance the chain continues through it, conditioned on continuing.
    The weights sum to exactly 1 only at the true fixed point, so the cdf is
    normalised to end at exactly 1.0 and the raw total is returned: scaling
    each sampled value by it keeps expectations against the raw weights
    exactly unbiased whatever qhat was supplied.
    """
    configs = all_configs()
    arr = np.empty((len(configs), 4), dtype=np.int64)
    weights = np.empty(len(configs), dtype=np.float64)
    for i, cfg in enumerate(configs):
        arr[i] = cfg.j
        weights[i] = noperm(cfg) * config_prob(cfg, qhat)
    weights /= qhat.value
    total = float(weights.sum())
    cdf = np.cumsum(weights)
    cdf /= total
    cdf[-1] = 1.0
    return arr, cdf, total


def _path_rng(seed: int, path: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, absolute path index)."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(path)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


_CHUNK_PATHS = 256  # fixed partitioning: results never depend on threads


def simulate_drift(mode: str, steps: int, n_paths: int, seed: int,
                   table: WTable | None = None,
                   sweep_report: SweepReport | None = None, *,
                   accuracy: float = 1e-11,
                   start_index: int | None = None,
                   config_override: tuple[int, int, int, int] | None = None,
                   collect_trajectories: bool = False) -> DriftStats:
    """Run a drift experiment; see the module docstring for the two modes.

    lower-bound mode requires sweep_report (it supplies the per-config
    minimum drift increments and the certified rate).  path mode requires
    table; the threshold rate comes from sweep_report when given, otherwise
    from the run's own mean.  config_override (path mode) forces every step
    through one config — a test hook for the fixed-point cell.
    """
    if mode not in ("lower-bound", "path"):
        raise DomainError(f"mode must be 'lower-bound' or 'path', got {mode!r}")
    steps = int(steps)
    n_paths = int(n_paths)
    if not (1 <= steps <= 10 ** 5):
        raise DomainError(f"steps must lie in [1, 1e5], got {steps!r}")
    if n_paths < 1:
        raise DomainError(f"n_paths must be >= 1, got {n_paths!r}")
    seed = int(seed)

    if mode == "lower-bound":
        if sweep_report is None:
            raise DomainError("lower-bound mode requires a sweep report")
        return _simulate_lower_bound(steps, n_paths, seed, sweep_report,
                                     collect_trajectories)
    if table is None:
        raise DomainError("path mode requires a weight table")
    return _simulate_path(steps, n_paths, seed, table, sweep_report, accuracy,
                          start_index, config_override, collect_trajectories)


def _simulate_lower_bound(steps: int, n_paths: int, seed: int,
                          report: SweepReport,
                          collect_trajectories: bool) -> DriftStats:
    if tuple(r.config for r in report.per_config) != tuple(
            c.j for c in all_configs()):
        raise DomainError("sweep report rows must cover all sorted configs "
                          "in canonical order")
    # scaling by the raw weight total makes the mean increment an exactly
    # unbiased estimate of the sweep rate (the weighted min-drift sum)
    _, cdf, total = _config_distribution(report.qhat)
    mindrift = np.array([r.min_drift for r in report.per_config]) * total
    rate = report.rate_s
    threshold = 0.5 * rate * steps

    total = 0.0
    total_sq = 0.0
    finals = np.empty(n_paths, dtype=np.float64)
    n_exceed = 0
    n_below = 0
    keep = min(n_paths, 100) if collect_trajectories else 0
    trajectories = np.empty((keep, steps), dtype=np.float64) if keep else None
    for path in range(n_paths):
        rng = _path_rng(seed, path)
        idx = np.searchsorted(cdf, rng.random(steps), side="right")
        inc = mindrift[idx]
        total += float(inc.sum())
        total_sq += float((inc * inc).sum())
        run = np.cumsum(inc)
        finals[path] = run[-1]
        n_exceed += bool(run.max() >= threshold)
        n_below += bool(run[-1] < threshold)
        if path < keep:
            trajectories[path] = run
    n = n_paths * steps
    mean = total / n
    variance = (total_sq - n * mean * mean) / (n - 1) if n > 1 else 0.0
    variance = max(variance, 0.0)
    se = math.sqrt(variance / n)
    return DriftStats(
        mode="lower-bound", n_paths=n_paths, n_steps=steps, seed=seed,
        start_index=None,
        mean_increment=mean, variance=variance, std_error=se,
        ci_low=mean - Z99 * se, ci_high=mean + Z99 * se,
        threshold=threshold,
        fraction_exceeding=n_exceed / n_paths,
        fraction_final_below=n_below / n_paths,
        n_sentinel=0, mean_phi_increment=None, telescope_residual=None,
        finals=finals, trajectories=trajectories)


def _simulate_path(steps: int, n_paths: int, seed: int, table: WTable,
                   report: SweepReport | None, accuracy: float,
                   start_index: int | None,
                   config_override: tuple[int, int, int, int] | None,
                   collect_trajectories: bool) -> DriftStats:
    grid_size = table.grid.grid_size
    if start_index is None:
        start_index = grid_size // 5
    if not (1 <= start_index <= grid_size - 1):
        raise DomainError(f"start_index must lie in [1, {grid_size - 1}], "
                          f"got {start_index!r}")
    if config_override is not None:
        cfg_arr = np.array([config_override], dtype=np.int64)
        if cfg_arr.shape != (1, 4) or cfg_arr.min() < 1 or cfg_arr.max() > 9:
            raise DomainError(f"invalid config override {config_override!r}")
        cdf = np.ones(1, dtype=np.float64)
    else:
        qhat = report.qhat if report is not None else solve_qhat()
        cfg_arr, cdf, _ = _config_distribution(qhat)

    total = 0.0
    total_sq = 0.0
    n_kept = 0
    n_sent = 0
    phi_total = 0.0
    telescope = 0.0
    finals = np.empty(n_paths, dtype=np.float64)
    keep = min(n_paths, 100) if collect_trajectories else 0
    trajectories = np.empty((keep, steps), dtype=np.float64) if keep else None
    log_w_start = math.log(table.values[start_index])
    all_runmax = np.empty(n_paths, dtype=np.float64)

    for chunk_start in range(0, n_paths, _CHUNK_PATHS):
        k = min(_CHUNK_PATHS, n_paths - chunk_start)
        u_cfg = np.empty((k, steps), dtype=np.float64)
        u_dir = np.empty((k, steps), dtype=np.float64)
        for i in range(k):
            rng = _path_rng(seed, chunk_start + i)
            u_cfg[i] = rng.random(steps)
            u_dir[i] = rng.random(steps)
        incr, phi, sent, final_rows = kernels.simulate_path_chunk(
            table.values, cfg_arr, cdf, u_cfg, u_dir, start_index, accuracy)
        ok = sent == 0
        n_kept += int(ok.sum())
        n_sent += int(sent.sum())
        total += float(incr[ok].sum())
        total_sq += float((incr[ok] ** 2).sum())
        phi_total += float(phi[ok].sum())
        run = np.cumsum(incr, axis=1)
        finals[chunk_start:chunk_start + k] = run[:, -1]
        all_runmax[chunk_start:chunk_start + k] = run.max(axis=1)
        log_w_final = np.log(table.values[final_rows])
        leak = (incr.sum(axis=1) - phi.sum(axis=1)) - (log_w_final - log_w_start)
        telescope += float(leak.sum())
        if chunk_start < keep:
            take = min(keep - chunk_start, k)
            trajectories[chunk_start:chunk_start + take] = run[:take]

    rate = report.rate_s if report is not None else (total / max(n_kept, 1))
    threshold = 0.5 * rate * steps

    mean = total / max(n_kept, 1)
    variance = ((total_sq - n_kept * mean * mean) / (n_kept - 1)
                if n_kept > 1 else 0.0)
    variance = max(variance, 0.0)
    se = math.sqrt(variance / max(n_kept, 1))
    return DriftStats(
        mode="path", n_paths=n_paths, n_steps=steps, seed=seed,
        start_index=start_index,
        mean_increment=mean, variance=variance, std_error=se,
        ci_low=mean - Z99 * se, ci_high=mean + Z99 * se,
        threshold=threshold,
        fraction_exceeding=float(np.mean(all_runmax >= threshold)),
        fraction_final_below=float(np.mean(finals < threshold)),
        n_sentinel=n_sent,
        mean_phi_increment=phi_total / max(n_kept, 1),
        telescope_residual=telescope / (n_paths * steps),
        finals=finals, trajectories=trajectories)


def check_linear_growth(stats: DriftStats, rate: float) -> Certificate:
    """Kolmogorov-style linear-growth certificate for lower-bound runs.

    The fraction of paths whose final running sum stays below (rate/2) * N
    must not exceed 4 * B / (N * rate^2) plus a three-sigma Monte Carlo
    slack, with B the measured per-step variance.
    """
    if stats.mode != "lower-bound":
        raise DomainError("linear-growth certificate needs lower-bound statistics")
    rate = float(rate)
    if rate <= 0.0:
        raise DomainError(f"rate must be positive, got {rate!r}")
    n = stats.n_steps
    threshold = 0.5 * rate * n
    fraction = float(np.mean(stats.finals < threshold))
    bound = 4.0 * stats.variance / (n * rate * rate)
    slack = 3.0 * math.sqrt(0.25 / stats.n_paths)
    check = BoundCheck(
        name="fraction-below-half-rate",
        measured=fraction,
        bound=bound + slack,
        relation="<=",
        margin=(bound + slack) - fraction,
        passed=fraction <= bound + slack,
    )
    return Certificate(
        name="linear-growth", passed=check.passed, checks=(check,),
        notes=(f"threshold {threshold:.6g} at {n} steps; per-step variance "
               f"{stats.variance:.6g}; Monte Carlo slack {slack:.6g}",))
