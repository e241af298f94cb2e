#!/usr/bin/env python3
"""Coarse-grid smoke run (about two minutes): the same pipeline as the full
verification at a tenth of the grid resolution.

The weight-bound certificates hold at this resolution and the headline
statistics land within a couple of percent of the full-resolution values, but
the drift-rate certificate is only evaluated at full resolution — coarse
grids legitimately measure a negative worst-case rate.
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
    ap.add_argument("--out-dir", default="results-smoke", type=pathlib.Path)
    ap.add_argument("--grid", type=int, default=2000)
    ap.add_argument("--threads", type=int, default=4)
    args = ap.parse_args()
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)

    stage("fixed point", ["qhat", "--out", str(out / "qhat.json")])
    stage("smoke sweep", ["sweep", "--grid", str(args.grid),
                          "--threads", str(args.threads),
                          "--out", str(out / "sweep.json")])
    stage("curvature certificates", ["check-lemmas", "--grid", str(args.grid),
                                     "--out", str(out / "lemmas.json")])
    stage("drift path walk", ["drift", "--mode", "path", "--grid",
                              str(args.grid), "--threads", str(args.threads),
                              "--steps", "200", "--paths", "200", "--seed", "0",
                              "--report", str(out / "sweep.json"),
                              "--out", str(out / "drift_path.json")])
    print(f"\nSmoke run passed; envelopes in {out}/")


if __name__ == "__main__":
    main()
