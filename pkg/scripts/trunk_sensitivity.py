"""Sensitivity of ROT to which objectives update the shared trunk.

    python scripts/trunk_sensitivity.py --out runs/trunk --seeds 5 6 7 8 9

Runs ROT once per routing in rot.agent.TRUNK_GRADIENTS and prints a final-success summary.
"""

import argparse

import numpy as np

from rot.agent import TRUNK_GRADIENTS
from rot.experiments import StudyConfig, format_table, run_grid, summarize


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/trunk")
    p.add_argument("--seeds", type=int, nargs="+", default=[5, 6, 7, 8, 9])
    p.add_argument("--steps", type=int, default=50_000)
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    rows = []
    for routing in TRUNK_GRADIENTS:
        study = StudyConfig(seeds=tuple(args.seeds), total_env_steps=args.steps, workers=args.workers,
                            overrides={"trunk_gradients": routing})
        grid = run_grid(f"{args.out}/{routing}", ("rot",), study,
                        progress=lambda d: print("finished", d, flush=True))
        summary = summarize(grid, study)
        print(routing)
        print(format_table(summary, study))
        final = [s["final"] for s in summary["rot"].values()]
        rows.append((routing, np.mean(final), np.std(final)))
    print(f"{'trunk_gradients':<20}{'mean final':>12}{'std':>8}")
    for routing, mean, std in rows:
        print(f"{routing:<20}{mean:>12.3f}{std:>8.3f}")


if __name__ == "__main__":
    main()
