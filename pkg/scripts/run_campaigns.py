"""Run the shipped campaign configs through the CLI and collect their outputs.

    python scripts/run_campaigns.py --out results/ [--only rate_ar1 selfnorm]

Each config lands in its own subdirectory of --out. Exits nonzero if any run fails.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from finsysid.cli import run

ROOT = Path(__file__).resolve().parent.parent
CAMPAIGNS = [
    ("bounds", "bounds_golden"),
    ("riccati", "riccati_scalar"),
    ("simulate", "simulate_zero"),
    ("identify", "identify_arx"),
    ("rate", "rate_ar1"),
    ("tail", "tail_identity"),
    ("mc-coverage", "selfnorm"),
    ("mc-coverage", "sparse_ar20"),
    ("mc-coverage", "nonlinear_gains"),
    ("mc-coverage", "pe_arx"),
]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results", help="output root directory")
    ap.add_argument("--only", nargs="*", default=None, help="config names to run (default: all)")
    args = ap.parse_args(argv)
    failures = []
    for sub, name in CAMPAIGNS:
        if args.only and name not in args.only:
            continue
        print(f"== {sub} {name}", flush=True)
        code = run(sub, str(ROOT / "configs" / f"{name}.cfg"), str(Path(args.out) / name))
        if code:
            failures.append(name)
    if failures:
        print("failed: " + ", ".join(failures), file=sys.stderr)
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
