"""Lambda-source ablation on maze2d: soft Q-filter vs fixed weight vs fixed schedule.

    python scripts/ablation.py --out runs/fig2 --seeds 0 1 2 3 4 --steps 50000

Pointing --out at the comparison study's directory reuses its ROT runs.
"""

import argparse

from rot.experiments import ABLATION_METHODS, StudyConfig, ablation_checks, format_table, run_grid, summarize


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/fig2")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--steps", type=int, default=50_000)
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    study = StudyConfig(seeds=tuple(args.seeds), total_env_steps=args.steps, workers=args.workers)
    grid = run_grid(args.out, ABLATION_METHODS, study, progress=lambda d: print("finished", d, flush=True))
    summary = summarize(grid, study)
    print(format_table(summary, study))
    for name, (ok, detail) in ablation_checks(summary, study).items():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")


if __name__ == "__main__":
    main()
