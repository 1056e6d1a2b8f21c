"""Multi-seed studies on maze2d: the BC / BC+OT / ROT / OT comparison and the
lambda-source ablation. Runs are cached on disk by config so studies can share them.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rot.envs import generate_demos, load_demos, write_demos
from rot.harness import RunConfig, read_metrics, run, threshold_step

STUDY_METHODS = ("bc", "bc_ot", "rot", "ot")
ABLATION_METHODS = ("rot", "fixed_weight", "fixed_schedule")
TRAINING_MODULES = ("agent.py", "approximator.py", "bc_trainer.py", "envs.py", "harness.py",
                    "ot_reward.py", "replay.py")


@dataclass
class StudyConfig:
    seeds: tuple = (0, 1, 2, 3, 4)
    total_env_steps: int = 50_000
    demo_count: int = 1
    demo_seed: int = 0
    threshold: float = 0.9
    final_window: int = 3  # final success = mean of the last this-many evaluations
    workers: int = 1
    overrides: dict = field(default_factory=dict)


def code_fingerprint() -> str:
    """Hash of the sources a training run depends on; cached runs are reused only on a match."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for name in TRAINING_MODULES:
        h.update((root / name).read_bytes())
    return h.hexdigest()


def _run_one(args):
    cfg_dict, out_dir, demo_path = args
    out = Path(out_dir)
    marker = out / "done.json"
    stamp = {"config": cfg_dict, "code": code_fingerprint()}
    if marker.exists() and json.loads(marker.read_text()) == stamp:
        return str(out)
    run(RunConfig.from_dict(cfg_dict), out, demos_path=demo_path)
    marker.write_text(json.dumps(stamp, sort_keys=True))
    return str(out)


def ensure_demos(root, study: StudyConfig):
    path = Path(root) / f"demos_maze2d_{study.demo_count}_{study.demo_seed}.jsonl"
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        write_demos(generate_demos("maze2d", study.demo_count, study.demo_seed), path)
    load_demos(path)
    return path


def run_grid(root, methods, study: StudyConfig, progress=None):
    """Run (or reuse) every method x seed; returns {method: {seed: run_dir}}."""
    root = Path(root)
    demo_path = ensure_demos(root, study)
    jobs, index = [], {}
    for method in methods:
        for seed in study.seeds:
            cfg = dict(study.overrides, env="maze2d", method=method, seed=int(seed),
                       total_env_steps=study.total_env_steps)
            out = root / method / f"seed{seed}"
            jobs.append((cfg, str(out), str(demo_path)))
            index[(method, seed)] = out
    if study.workers > 1:
        with ProcessPoolExecutor(study.workers) as pool:
            for done in pool.map(_run_one, jobs):
                if progress:
                    progress(done)
    else:
        for job in jobs:
            done = _run_one(job)
            if progress:
                progress(done)
    return {m: {s: index[(m, s)] for s in study.seeds} for m in methods}


def summarize_run(run_dir, study: StudyConfig):
    rows = read_metrics(run_dir)
    steps = np.array([r["env_step"] for r in rows])
    success = np.array([r["success_rate"] for r in rows])
    return {
        "steps": steps.tolist(),
        "success": success.tolist(),
        "initial": float(success[0]),
        "final": float(success[-study.final_window:].mean()),
        "threshold_step": threshold_step(steps, success, study.threshold),
    }


def summarize(grid, study: StudyConfig):
    return {m: {s: summarize_run(d, study) for s, d in runs.items()} for m, runs in grid.items()}


def crossing_key(step):
    return np.inf if step is None else step


def fig2_checks(summary, study: StudyConfig):
    """Evaluate the four comparison properties; returns {name: (passed, detail)}."""
    seeds = list(study.seeds)
    bc = np.array([summary["bc"][s]["initial"] for s in seeds])
    bc_ot = np.array([summary["bc_ot"][s]["final"] for s in seeds])
    rot = np.array([summary["rot"][s]["final"] for s in seeds])
    rot_cross = [summary["rot"][s]["threshold_step"] for s in seeds]
    ot_cross = [summary["ot"][s]["threshold_step"] for s in seeds]
    faster = sum(r is not None and crossing_key(r) < crossing_key(o)
                 for r, o in zip(rot_cross, ot_cross))
    return {
        "bc_success_at_most_half": (bc.mean() <= 0.5, f"BC success {bc.mean():.3f} per seed {bc.tolist()}"),
        "bc_ot_no_real_gain": (bc_ot.mean() <= bc.mean() + 0.15,
                               f"BC+OT final {bc_ot.mean():.3f} vs BC {bc.mean():.3f} + 0.15"),
        "rot_final_success": (rot.mean() >= 0.9, f"ROT final {rot.mean():.3f} per seed {rot.tolist()}"),
        "rot_faster_than_ot": (faster >= len(seeds) - 1,
                               f"ROT first on {faster}/{len(seeds)} seeds; ROT {rot_cross} OT {ot_cross}"),
    }


def ablation_checks(summary, study: StudyConfig):
    seeds = list(study.seeds)
    final = {m: np.array([summary[m][s]["final"] for s in seeds]) for m in ABLATION_METHODS}

    def mean_crossing(method):
        steps = [summary[method][s]["threshold_step"] for s in seeds]
        if any(x is None for x in steps):
            return np.inf
        return float(np.mean(steps))

    rot_std, sched_std = final["rot"].std(), final["fixed_schedule"].std()
    rot_cross = mean_crossing("rot")
    best = min(mean_crossing("fixed_weight"), mean_crossing("fixed_schedule"))
    return {
        "rot_std_at_most_fixed_schedule": (rot_std <= sched_std + 1e-12,
                                           f"std ROT {rot_std:.3f} vs fixed_schedule {sched_std:.3f}"),
        "rot_crossing_within_125pct": (rot_cross <= 1.25 * best,
                                       f"mean crossing ROT {rot_cross} vs best hand-tuned {best}"),
    }


def format_table(summary, study: StudyConfig):
    lines = [f"{'method':<16}{'seed':>5}{'initial':>9}{'final':>8}{'crossing':>10}"]
    for method, per_seed in summary.items():
        for seed, s in per_seed.items():
            cross = "-" if s["threshold_step"] is None else str(s["threshold_step"])
            lines.append(f"{method:<16}{seed:>5}{s['initial']:>9.2f}{s['final']:>8.2f}{cross:>10}")
    return "\n".join(lines)
