"""BC, BC+OT, ROT and OT-from-scratch on maze2d with one demonstration.

    python scripts/fig2_study.py --out runs/fig2 --seeds 0 1 2 3 4 --steps 50000
"""

import argparse
import json

from rot.experiments import STUDY_METHODS, StudyConfig, fig2_checks, format_table, run_grid, summarize


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/fig2")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--steps", type=int, default=50_000)
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    study = StudyConfig(seeds=tuple(args.seeds), total_env_steps=args.steps, workers=args.workers)
    grid = run_grid(args.out, STUDY_METHODS, study, progress=lambda d: print("finished", d, flush=True))
    summary = summarize(grid, study)
    print(format_table(summary, study))
    for name, (ok, detail) in fig2_checks(summary, study).items():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    with open(f"{args.out}/summary.json", "w") as fh:
        json.dump({m: {str(s): v for s, v in r.items()} for m, r in summary.items()}, fh, indent=1)


if __name__ == "__main__":
    main()
