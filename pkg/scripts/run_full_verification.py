#!/usr/bin/env python3
"""Full-resolution verification run: fixed point, full sweep, curvature
certificates, and both drift experiments, with every artifact written as a
JSON envelope under an output directory.

Expect roughly twenty minutes for the sweep on four threads.  Exits nonzero
as soon as any stage fails a certificate.
"""

from __future__ import annotations

import argparse
import pathlib
import sys

from chaindrift.cli import main as cli


def stage(name: str, argv: list[str]) -> None:
    print(f"\n=== {name}: chaindrift {' '.join(argv)} ===", flush=True)
    code = cli(argv)
    if code != 0:
        print(f"{name} failed with exit code {code}", file=sys.stderr)
        raise SystemExit(code)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="results", type=pathlib.Path)
    ap.add_argument("--grid", type=int, default=20000)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--accuracy", type=float, default=1e-11)
    args = ap.parse_args()
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    acc = repr(args.accuracy)

    stage("fixed point", ["qhat", "--accuracy", acc,
                          "--out", str(out / "qhat.json")])
    stage("full sweep", ["sweep", "--grid", str(args.grid),
                         "--threads", str(args.threads), "--accuracy", acc,
                         "--out", str(out / "sweep.json")])
    stage("curvature certificates", ["check-lemmas", "--grid", str(args.grid),
                                     "--accuracy", acc,
                                     "--out", str(out / "lemmas.json")])
    stage("drift lower bound", ["drift", "--mode", "lower-bound",
                                "--steps", "10000", "--paths", "100",
                                "--seed", "0",
                                "--report", str(out / "sweep.json"),
                                "--out", str(out / "drift_lower_bound.json")])
    stage("drift path walk", ["drift", "--mode", "path", "--grid",
                              str(args.grid), "--threads", str(args.threads),
                              "--steps", "1000", "--paths", "1000",
                              "--seed", "0", "--accuracy", acc,
                              "--report", str(out / "sweep.json"),
                              "--out", str(out / "drift_path.json")])
    print(f"\nAll stages passed; envelopes in {out}/")


if __name__ == "__main__":
    main()
