#!/usr/bin/env python3
"""End-to-end demo: synthesize a fixture, train, infer, and score it.

Usage: python scripts/train_eval_demo.py [workdir]
"""

import sys
import tempfile
from pathlib import Path

from keygrasp import pipeline


def main():
    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="demo_"))
    manifest = pipeline.synth_command(workdir / "fixture", seed=0)
    config = pipeline.RunConfig()
    trained = pipeline.train_command(manifest, config, workdir / "run")
    final = trained.result.history[-1]
    print(f"loss {trained.result.initial_loss.total:.4f} -> {final.total:.4f}")
    predictions = workdir / "run/predictions.json"
    pipeline.infer_command(manifest, trained.checkpoint_path, "press", predictions)
    pipeline.eval_command(predictions, manifest, workdir / "run", sigma=config.sigma)
    print((workdir / "run/eval_report.txt").read_text())
    print(f"artifacts in {workdir}")


if __name__ == "__main__":
    main()
