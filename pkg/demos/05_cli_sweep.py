"""
Sweeps, summaries and plots from the command line
=================================================

The ``ponderbench`` command runs single experiments or grids of them. Each run
writes ``config.json``, ``metrics.jsonl`` and ``report.json``; a sweep also
writes ``summary.csv``, and ``plot`` draws accuracy curves. This script drives
the same entry point in-process on a short 8-bit parity grid.

Shell equivalent::

    ponderbench sweep --task parity --parity-size 8 --wrapper repeat --rho 1,2,3 \\
        --optimizer adam --lr 3e-3 --budget 5000 --eval-interval 500 --eval-batches 5 --out demos/out/sweep
    ponderbench report demos/out/sweep
    ponderbench plot demos/out/sweep --title "8-bit parity"
"""

import sys
from pathlib import Path

from ponderbench.harness import run_cli

out = Path(__file__).resolve().parent / "out" / "sweep"
common = ["--task", "parity", "--parity-size", "8", "--optimizer", "adam", "--lr", "3e-3",
          "--budget", "5000", "--eval-interval", "500", "--eval-batches", "5"]

code = run_cli(["sweep", *common, "--wrapper", "repeat", "--rho", "1,2,3", "--out", str(out)])
print("sweep exit code:", code)

print((out / "summary.csv").read_text())

run_cli(["plot", str(out), "--title", "8-bit parity, fixed repetition", "--out", str(out / "curves.svg")])

# Configuration errors exit with status 1 and a usage line.
code = run_cli(["run", "--wrapper", "repeat"])
print("missing rho exit code:", code, file=sys.stderr)
