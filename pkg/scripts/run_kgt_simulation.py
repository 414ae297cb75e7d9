#!/usr/bin/env python3
"""Randomized round-trip check of the grasp pose solver at desk scale.

Usage: python scripts/run_kgt_simulation.py [trials] [seed]
"""

import sys

from keygrasp import pipeline


def main():
    trials = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    report = pipeline.simulate_kgt(trials, seed, pipeline.DEFAULT_HAND_MODEL)
    print(f"trials:                {report.trials}")
    print(f"degenerate redraws:    {report.retries}")
    print(f"max contact error [m]: {report.max_contact_error_m:.3e}")
    print(f"max |R^T R - I|_F:     {report.max_rotation_orthonormality_error:.3e}")
    print(f"max |det R - 1|:       {report.max_det_deviation:.3e}")
    print(f"elapsed [s]:           {report.elapsed_s:.2f}")


if __name__ == "__main__":
    main()
