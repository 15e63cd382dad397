#!/usr/bin/env python3
"""Run the three shipped 1D studies back to back.

Each study writes report.json, timing.json, and its CSVs under
<out>/<study>/.  Exit status is nonzero if any study fails or errors;
--strict semantics come from the CLI itself.  Cheapest study first, so a
broken install fails within seconds.
"""

import argparse
import sys
from pathlib import Path

from ghwave.cli import main as cli_main

STUDIES = (
    ("estimates", "estimates_1d.cfg"),
    ("stability", "stability_1d.cfg"),
    ("continuity", "continuity_1d.cfg"),
)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out", help="output root (default: ./out)")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument(
        "--configs", default=None, help="config directory (default: repo configs/)"
    )
    args = ap.parse_args()
    cfg_dir = (
        Path(args.configs)
        if args.configs
        else Path(__file__).resolve().parents[1] / "configs"
    )
    worst = 0
    for study, cfg_name in STUDIES:
        rc = cli_main(
            [
                study,
                "--config", str(cfg_dir / cfg_name),
                "--out", str(Path(args.out) / study),
                "--threads", str(args.threads),
                "--strict",
            ]
        )
        worst = max(worst, rc)
    return worst


if __name__ == "__main__":
    sys.exit(main())
