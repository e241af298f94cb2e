"""Command-line front end: orchestration, report persistence, summaries.

Every command prints a plain-text summary comparing measured values against
the published reference constants, and can persist a versioned JSON envelope
(``--out report.json``) that ``summarize`` later re-ingests to reproduce the
exact same summary.  Envelopes are strict: schema version "1", unknown
fields rejected, and sweep payloads carry a fingerprint that is re-verified
on load.

Exit codes: 0 — success and every certificate evaluated by the command
passed; 1 — computational failure, certificate failure, or unreadable
report file; 2 — usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, fields

from chaindrift.chainsim import check_linear_growth, qhat_by_depth, simulate_drift
from chaindrift.core import (
    DomainError,
    GridParams,
    QHat,
    SolverFailure,
    build_wtable,
    solve_qhat,
)
from chaindrift.sweep import (
    BoundCheck,
    Certificate,
    ConfigStats,
    SweepReport,
    check_drift_rate,
    check_lemma4,
    check_lemma5,
    check_lemma10_constant,
    run_sweep,
)

__all__ = [
    "REFERENCE_VALUES",
    "SCHEMA_VERSION",
    "EnvelopeError",
    "RunConfig",
    "build_envelope",
    "build_summary",
    "parse_envelope",
    "sweep_report_to_payload",
    "sweep_report_from_payload",
    "drift_stats_to_payload",
    "run",
    "main",
]

SCHEMA_VERSION = "1"

# published output constants, displayed side by side with measured values
REFERENCE_VALUES = {
    "qhat": 0.9916,
    "max_adjacent_diff": 0.22955,
    "max_jump_q": 0.32546,
    "min_tail": 0.23163,
    "rate_s": 0.0010956,
}

_COMMANDS = ("qhat", "sweep", "check-lemmas", "drift", "qhat-depth", "summarize")
_FORMATS = ("json", "csv", "text")
_MODES = ("lower-bound", "path")

# a sweep at this grid or larger is a production run: its drift-rate
# certificate is meaningful and single-threaded runs are refused sans --force
FULL_SCALE_GRID = 20000


class EnvelopeError(ValueError):
    """A report file failed schema validation or integrity checks."""


def _default_threads() -> int:
    return os.cpu_count() or 1


@dataclass(frozen=True)
class RunConfig:
    """Validated bundle of CLI options; one instance drives one command."""

    command: str
    grid_size: int = 20000
    accuracy: float = 1e-11
    threads: int = 1
    seed: int = 0
    steps: int = 10 ** 4
    paths: int = 10 ** 4
    out_path: str | None = None
    format: str = "json"
    mode: str = "lower-bound"
    step: float = 1e-4
    depth: int = 500
    report_path: str | None = None
    force: bool = False

    def __post_init__(self) -> None:
        if self.command not in _COMMANDS:
            raise DomainError(f"unknown command {self.command!r}")
        if self.grid_size < 100:
            raise DomainError(f"grid size must be >= 100, got {self.grid_size}")
        if not (1e-13 <= self.accuracy <= 1e-6):
            raise DomainError(
                f"accuracy must lie in [1e-13, 1e-6], got {self.accuracy!r}")
        if self.threads < 1:
            raise DomainError(f"threads must be >= 1, got {self.threads}")
        if self.format not in _FORMATS:
            raise DomainError(f"format must be one of {_FORMATS}, got {self.format!r}")
        if self.mode not in _MODES:
            raise DomainError(f"mode must be one of {_MODES}, got {self.mode!r}")

    def echo(self) -> dict:
        """The full option set, embedded in every envelope."""
        return {f.name: getattr(self, f.name) for f in fields(self)
                if f.name != "command"}


# ---------------------------------------------------------------------------
# payload serialisation (lossless: floats survive via shortest repr in JSON)
# ---------------------------------------------------------------------------

def _check_to_payload(check: BoundCheck) -> dict:
    return {
        "name": check.name,
        "measured": check.measured,
        "bound": check.bound,
        "relation": check.relation,
        "margin": check.margin,
        "passed": check.passed,
    }


def _certificate_to_payload(cert: Certificate) -> dict:
    return {
        "name": cert.name,
        "passed": cert.passed,
        "checks": [_check_to_payload(c) for c in cert.checks],
        "notes": list(cert.notes),
    }


def _check_from_payload(d: dict) -> BoundCheck:
    _require_keys(d, {"name", "measured", "bound", "relation", "margin",
                      "passed"}, "bound check")
    return BoundCheck(name=d["name"], measured=d["measured"], bound=d["bound"],
                      relation=d["relation"], margin=d["margin"],
                      passed=d["passed"])


def _certificate_from_payload(d: dict) -> Certificate:
    _require_keys(d, {"name", "passed", "checks", "notes"}, "certificate")
    return Certificate(name=d["name"], passed=d["passed"],
                       checks=tuple(_check_from_payload(c) for c in d["checks"]),
                       notes=tuple(d["notes"]))


def sweep_report_to_payload(report: SweepReport) -> dict:
    """Full sweep report as a JSON-ready dict, fingerprint included."""
    return {
        "qhat": report.qhat.value,
        "grid_size": report.grid_size,
        "accuracy": report.accuracy,
        "thread_count": report.thread_count,
        "wall_time_seconds": report.wall_time_seconds,
        "global_max_adjacent_diff": report.global_max_adjacent_diff,
        "global_max_jump_q": report.global_max_jump_q,
        "global_min_tail": report.global_min_tail,
        "global_min_drift": report.global_min_drift,
        "global_min_q": report.global_min_q,
        "rate_s": report.rate_s,
        "per_config": [
            [*row.config, row.max_adjacent_diff, row.max_jump_q,
             row.min_tail, row.min_drift, row.min_q]
            for row in report.per_config
        ],
        "fingerprint": report.fingerprint(),
    }


def sweep_report_from_payload(d: dict) -> SweepReport:
    """Rebuild a sweep report, re-verifying its content fingerprint."""
    _require_keys(d, {"qhat", "grid_size", "accuracy", "thread_count",
                      "wall_time_seconds", "global_max_adjacent_diff",
                      "global_max_jump_q", "global_min_tail",
                      "global_min_drift", "global_min_q", "rate_s",
                      "per_config", "fingerprint"}, "sweep report")
    rows = []
    for row in d["per_config"]:
        if len(row) != 9:
            raise EnvelopeError("per-config rows must have 9 entries")
        rows.append(ConfigStats(
            config=(int(row[0]), int(row[1]), int(row[2]), int(row[3])),
            max_adjacent_diff=row[4], max_jump_q=row[5], min_tail=row[6],
            min_drift=row[7], min_q=row[8]))
    report = SweepReport(
        qhat=QHat(value=d["qhat"]), grid_size=d["grid_size"],
        accuracy=d["accuracy"], thread_count=d["thread_count"],
        wall_time_seconds=d["wall_time_seconds"],
        global_max_adjacent_diff=d["global_max_adjacent_diff"],
        global_max_jump_q=d["global_max_jump_q"],
        global_min_tail=d["global_min_tail"],
        global_min_drift=d["global_min_drift"],
        global_min_q=d["global_min_q"], rate_s=d["rate_s"],
        per_config=tuple(rows))
    if report.fingerprint() != d["fingerprint"]:
        raise EnvelopeError("sweep report fingerprint mismatch: file contents "
                            "do not match the recorded fingerprint")
    return report


_DRIFT_SCALAR_FIELDS = (
    "mode", "n_paths", "n_steps", "seed", "start_index", "mean_increment",
    "variance", "std_error", "ci_low", "ci_high", "threshold",
    "fraction_exceeding", "fraction_final_below", "n_sentinel",
    "mean_phi_increment", "telescope_residual")


def drift_stats_to_payload(stats) -> dict:
    """Scalar drift statistics (arrays are CSV-bound, not envelope-bound)."""
    return {name: getattr(stats, name) for name in _DRIFT_SCALAR_FIELDS}


# ---------------------------------------------------------------------------
# envelopes
# ---------------------------------------------------------------------------

def _require_keys(d: dict, expected: set[str], what: str) -> None:
    if not isinstance(d, dict):
        raise EnvelopeError(f"{what} must be a JSON object")
    missing = expected - d.keys()
    unknown = d.keys() - expected
    if missing:
        raise EnvelopeError(f"{what} is missing fields: {sorted(missing)}")
    if unknown:
        raise EnvelopeError(f"{what} has unknown fields: {sorted(unknown)}")


def build_envelope(command: str, config: RunConfig, payload_kind: str,
                   payload: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "run_config": config.echo(),
        "payload_kind": payload_kind,
        "payload": payload,
        "reference_values": dict(REFERENCE_VALUES),
    }


def parse_envelope(data: dict) -> dict:
    """Validate an envelope dict strictly; returns it unchanged."""
    _require_keys(data, {"schema_version", "command", "created_utc",
                         "run_config", "payload_kind", "payload",
                         "reference_values"}, "envelope")
    if data["schema_version"] != SCHEMA_VERSION:
        raise EnvelopeError(
            f"unsupported schema version {data['schema_version']!r} "
            f"(expected {SCHEMA_VERSION!r})")
    _require_keys(data["reference_values"], set(REFERENCE_VALUES), "reference values")
    kind = data["payload_kind"]
    payload = data["payload"]
    if kind == "qhat":
        _require_keys(payload, {"value", "residual", "accuracy"}, "qhat payload")
    elif kind == "qhat_depth":
        _require_keys(payload, {"depth", "value"}, "depth payload")
    elif kind == "sweep_report":
        _require_keys(payload, {"report", "certificates"}, "sweep payload")
        sweep_report_from_payload(payload["report"])
        for cert in payload["certificates"]:
            _certificate_from_payload(cert)
    elif kind == "certificates":
        _require_keys(payload, {"grid_size", "accuracy", "step",
                                "certificates"}, "certificate payload")
        for cert in payload["certificates"]:
            _certificate_from_payload(cert)
    elif kind == "drift_stats":
        _require_keys(payload, {"stats", "certificates"}, "drift payload")
        _require_keys(payload["stats"], set(_DRIFT_SCALAR_FIELDS), "drift statistics")
        for cert in payload["certificates"]:
            _certificate_from_payload(cert)
    else:
        raise EnvelopeError(f"unknown payload kind {kind!r}")
    return data


# ---------------------------------------------------------------------------
# summaries (pure functions of the envelope: summarize is byte-identical)
# ---------------------------------------------------------------------------

def _g(x) -> str:
    """5 significant digits, matching the published printout precision."""
    return f"{x:.5g}"


def _certificate_lines(cert: dict) -> list[str]:
    lines = [f"certificate {cert['name']}: {'PASS' if cert['passed'] else 'FAIL'}"]
    for check in cert["checks"]:
        lines.append(
            f"  {check['name']}: {_g(check['measured'])} {check['relation']} "
            f"{_g(check['bound'])}  margin {_g(check['margin'])}")
    for note in cert["notes"]:
        lines.append(f"  note: {note}")
    return lines


def build_summary(env: dict) -> str:
    """Human-readable summary, derived from envelope contents alone."""
    ref = env["reference_values"]
    kind = env["payload_kind"]
    payload = env["payload"]
    lines: list[str] = []
    if kind == "qhat":
        lines.append("fixed point of the branching recursion")
        lines.append(f"  accuracy: {_g(payload['accuracy'])}")
        lines.append(f"  qhat: {payload['value']!r} (reference {_g(ref['qhat'])})")
        lines.append(f"  residual: {_g(payload['residual'])}")
    elif kind == "qhat_depth":
        lines.append("depth-limited non-termination")
        lines.append(f"  depth: {payload['depth']}")
        lines.append(f"  value: {payload['value']!r} (reference {_g(ref['qhat'])})")
    elif kind == "sweep_report":
        rep = payload["report"]
        lines.append("sweep report")
        lines.append(f"  grid: {rep['grid_size']}  accuracy: {_g(rep['accuracy'])}"
                     f"  threads: {rep['thread_count']}")
        lines.append(f"  wall time: {_g(rep['wall_time_seconds'])} s")
        lines.append(f"  qhat: {_g(rep['qhat'])} (reference {_g(ref['qhat'])})")
        lines.append(f"  max adjacent difference: {_g(rep['global_max_adjacent_diff'])}"
                     f" (reference {_g(ref['max_adjacent_diff'])})")
        lines.append(f"  max jump weight: {_g(rep['global_max_jump_q'])}"
                     f" (reference {_g(ref['max_jump_q'])})")
        lines.append(f"  min tail weight: {_g(rep['global_min_tail'])}"
                     f" (reference {_g(ref['min_tail'])})")
        lines.append(f"  drift rate: {_g(rep['rate_s'])}"
                     f" (reference {_g(ref['rate_s'])})")
        lines.append(f"  fingerprint: {rep['fingerprint']}")
        for cert in payload["certificates"]:
            lines.extend(_certificate_lines(cert))
    elif kind == "certificates":
        lines.append("lemma certificates")
        lines.append(f"  grid: {payload['grid_size']}  accuracy: "
                     f"{_g(payload['accuracy'])}  step: {_g(payload['step'])}")
        for cert in payload["certificates"]:
            lines.extend(_certificate_lines(cert))
    elif kind == "drift_stats":
        st = payload["stats"]
        lines.append(f"drift statistics ({st['mode']})")
        lines.append(f"  paths: {st['n_paths']}  steps: {st['n_steps']}"
                     f"  seed: {st['seed']}")
        if st["start_index"] is not None:
            lines.append(f"  start index: {st['start_index']}")
        lines.append(f"  mean increment: {_g(st['mean_increment'])}"
                     f" (reference {_g(ref['rate_s'])})")
        lines.append(f"  std error: {_g(st['std_error'])}  variance: "
                     f"{_g(st['variance'])}")
        lines.append(f"  99% ci: [{_g(st['ci_low'])}, {_g(st['ci_high'])}]")
        lines.append(f"  threshold: {_g(st['threshold'])}  fraction exceeding: "
                     f"{_g(st['fraction_exceeding'])}  fraction final below: "
                     f"{_g(st['fraction_final_below'])}")
        lines.append(f"  sentinel steps: {st['n_sentinel']}")
        if st["mean_phi_increment"] is not None:
            lines.append(f"  mean plain increment: {_g(st['mean_phi_increment'])}"
                         f"  telescope residual: {_g(st['telescope_residual'])}")
        for cert in payload["certificates"]:
            lines.extend(_certificate_lines(cert))
    else:  # pragma: no cover - parse_envelope rejects unknown kinds first
        raise EnvelopeError(f"unknown payload kind {kind!r}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# artifact writing
# ---------------------------------------------------------------------------

def _write_artifacts(env: dict, summary: str, config: RunConfig,
                     csv_rows: tuple[list[str], list[list]] | None) -> None:
    if config.out_path is None:
        return
    if config.format == "json":
        with open(config.out_path, "w", encoding="utf-8") as f:
            json.dump(env, f, indent=2)
            f.write("\n")
    elif config.format == "text":
        with open(config.out_path, "w", encoding="utf-8") as f:
            f.write(summary + "\n")
    elif config.format == "csv":
        if csv_rows is None:
            raise DomainError(
                f"command {config.command!r} has no CSV representation")
        header, rows = csv_rows
        with open(config.out_path, "w", encoding="utf-8") as f:
            f.write(",".join(header) + "\n")
            for row in rows:
                f.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                 for v in row) + "\n")


def _sweep_csv(report: SweepReport) -> tuple[list[str], list[list]]:
    header = ["j1", "j2", "j3", "j4", "max_adjacent_diff", "max_jump_q",
              "min_tail", "min_drift"]
    rows = [[*row.config, row.max_adjacent_diff, row.max_jump_q, row.min_tail,
             row.min_drift] for row in report.per_config]
    return header, rows


def _trajectory_csv(stats) -> tuple[list[str], list[list]]:
    header = ["path", "step", "running_sum"]
    rows = []
    if stats.trajectories is not None:
        for p, row in enumerate(stats.trajectories):
            for s, value in enumerate(row, start=1):
                rows.append([p, s, float(value)])
    return header, rows


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _finish(env: dict, config: RunConfig, certificates: list[dict],
            csv_rows=None) -> int:
    summary = build_summary(env)
    _write_artifacts(env, summary, config, csv_rows)
    print(summary)
    return 0 if all(c["passed"] for c in certificates) else 1


def _cmd_qhat(config: RunConfig) -> int:
    qhat = solve_qhat(accuracy=config.accuracy)
    payload = {"value": qhat.value, "residual": qhat.residual,
               "accuracy": config.accuracy}
    env = build_envelope("qhat", config, "qhat", payload)
    return _finish(env, config, [])


def _cmd_qhat_depth(config: RunConfig) -> int:
    value = qhat_by_depth(config.depth)
    payload = {"depth": config.depth, "value": value}
    env = build_envelope("qhat-depth", config, "qhat_depth", payload)
    return _finish(env, config, [])


def _available_threads() -> int:
    import numba

    return numba.config.NUMBA_NUM_THREADS


def _cmd_sweep(config: RunConfig) -> int:
    if (config.grid_size >= FULL_SCALE_GRID and config.threads < 2
            and not config.force):
        print("a full-scale sweep takes well over an hour on one thread; "
              "pass --threads >= 2 or --force to proceed", file=sys.stderr)
        return 2
    if config.threads > _available_threads():
        print(f"only {_available_threads()} worker threads are available",
              file=sys.stderr)
        return 2
    table = build_wtable(GridParams(grid_size=config.grid_size))
    report = run_sweep(table, accuracy=config.accuracy,
                       thread_count=config.threads)
    certificates = [_certificate_to_payload(check_lemma5(report))]
    if config.grid_size >= FULL_SCALE_GRID:
        # the rate constant is only meaningful at production resolution
        certificates.append(_certificate_to_payload(check_drift_rate(report)))
    payload = {"report": sweep_report_to_payload(report),
               "certificates": certificates}
    env = build_envelope("sweep", config, "sweep_report", payload)
    return _finish(env, config, certificates, _sweep_csv(report))


def _cmd_check_lemmas(config: RunConfig) -> int:
    table = build_wtable(GridParams(grid_size=config.grid_size))
    certs = [check_lemma4(table, step=config.step),
             check_lemma10_constant(solve_qhat(accuracy=config.accuracy))]
    certificates = [_certificate_to_payload(c) for c in certs]
    payload = {"grid_size": config.grid_size, "accuracy": config.accuracy,
               "step": config.step, "certificates": certificates}
    env = build_envelope("check-lemmas", config, "certificates", payload)
    return _finish(env, config, certificates)


def _load_envelope(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except OSError as exc:
        raise EnvelopeError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise EnvelopeError(f"{path} is not valid JSON: {exc}") from exc
    return parse_envelope(data)


def _cmd_drift(config: RunConfig) -> int:
    report = None
    if config.report_path is not None:
        env = _load_envelope(config.report_path)
        if env["payload_kind"] != "sweep_report":
            raise EnvelopeError(f"{config.report_path} does not hold a sweep "
                                f"report (kind {env['payload_kind']!r})")
        report = sweep_report_from_payload(env["payload"]["report"])
    if config.mode == "lower-bound" and report is None:
        print("lower-bound mode needs --report with a sweep report envelope",
              file=sys.stderr)
        return 2
    table = None
    if config.mode == "path":
        if config.threads > _available_threads():
            print(f"only {_available_threads()} worker threads are available",
                  file=sys.stderr)
            return 2
        import numba

        numba.set_num_threads(config.threads)
        table = build_wtable(GridParams(grid_size=config.grid_size))
    stats = simulate_drift(
        config.mode, steps=config.steps, n_paths=config.paths,
        seed=config.seed, table=table, sweep_report=report,
        accuracy=config.accuracy,
        collect_trajectories=(config.format == "csv"))
    certificates = []
    if config.mode == "lower-bound" and report.rate_s > 0.0:
        cert = check_linear_growth(stats, report.rate_s)
        certificates.append(_certificate_to_payload(cert))
    payload = {"stats": drift_stats_to_payload(stats),
               "certificates": certificates}
    env = build_envelope("drift", config, "drift_stats", payload)
    return _finish(env, config, certificates, _trajectory_csv(stats))


def _cmd_summarize(config: RunConfig) -> int:
    env = _load_envelope(config.report_path)
    print(build_summary(env))
    return 0


# ---------------------------------------------------------------------------
# argument parsing and entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chaindrift",
        description="certify the equalisation bounds and drift rate of the "
                    "paradoxical colouring rule")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, grid=True):
        p.add_argument("--accuracy", type=float, default=1e-11)
        if grid:
            p.add_argument("--grid", type=int, default=20000, dest="grid_size")
        p.add_argument("--out", dest="out_path", default=None)
        p.add_argument("--format", choices=_FORMATS, default="json")

    p = sub.add_parser("qhat", help="solve the non-termination fixed point")
    common(p, grid=False)

    p = sub.add_parser("sweep", help="equalise every cell; certify the bounds")
    common(p)
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--force", action="store_true",
                   help="allow a full-scale sweep on fewer than 2 threads")

    p = sub.add_parser("check-lemmas",
                       help="certify concavity/slope/convexity and contraction")
    common(p)
    p.add_argument("--step", type=float, default=1e-4)

    p = sub.add_parser("drift", help="Monte Carlo drift experiment")
    common(p)
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--mode", choices=_MODES, default="lower-bound")
    p.add_argument("--steps", type=int, default=10 ** 4)
    p.add_argument("--paths", type=int, default=10 ** 4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", dest="report_path", default=None,
                   help="sweep report envelope (required for lower-bound)")

    p = sub.add_parser("qhat-depth",
                       help="non-termination after finitely many levels")
    p.add_argument("depth", type=int)
    p.add_argument("--out", dest="out_path", default=None)
    p.add_argument("--format", choices=_FORMATS, default="json")

    p = sub.add_parser("summarize", help="re-print the summary of a report file")
    p.add_argument("report_path")
    return parser


_DISPATCH = {
    "qhat": _cmd_qhat,
    "sweep": _cmd_sweep,
    "check-lemmas": _cmd_check_lemmas,
    "drift": _cmd_drift,
    "qhat-depth": _cmd_qhat_depth,
    "summarize": _cmd_summarize,
}


def run(config: RunConfig) -> int:
    """Execute one validated command; returns the process exit code."""
    try:
        return _DISPATCH[config.command](config)
    except SolverFailure as exc:
        print(f"solver failure at weight row {exc.p_index}, config "
              f"{exc.config}: {exc}", file=sys.stderr)
        return 1
    except EnvelopeError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return 1
    except DomainError as exc:
        print(f"invalid parameter: {exc}", file=sys.stderr)
        return 2


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    kwargs = {k: v for k, v in vars(args).items() if v is not None}
    try:
        config = RunConfig(**kwargs)
    except DomainError as exc:
        parser.error(str(exc))  # exits 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
