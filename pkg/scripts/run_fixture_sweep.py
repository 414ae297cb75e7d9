#!/usr/bin/env python3
"""Regenerate the planted fixture and run the full 12-cell (S, J) sweep.

Usage: python scripts/run_fixture_sweep.py [workdir]
"""

import sys
import tempfile
from pathlib import Path

from keygrasp import pipeline


def main():
    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="sweep_"))
    manifest = pipeline.synth_command(workdir / "fixture", seed=0)
    report = pipeline.sweep_command(
        manifest, [2, 3, 4], [2, 3, 4, 5], pipeline.RunConfig(), workdir / "sweep"
    )
    print((workdir / "sweep/sweep_report.txt").read_text())
    print(f"best cell: {report['best']}")
    print(f"artifacts in {workdir}")


if __name__ == "__main__":
    main()
