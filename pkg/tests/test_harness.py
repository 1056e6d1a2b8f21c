import json
import math

import numpy as np
import pytest

from rot.envs import MAZE2D, generate_demos, scripted_expert
from rot.harness import (METHODS, METRICS_HEADER, ConfigError, MissingInputError, RunConfig,
                         compare_runs, evaluate, load_config, read_metrics, run, smoothed,
                         speedup, threshold_step, write_csv)

# tiny budget so a run takes a second or two
SMALL = dict(total_env_steps=600, eval_every=200, eval_episodes=4, seed_frames=200, batch_size=16,
             hidden_dim=16, feature_dim=8, pretrain_steps=50, replay_buffer_size=2000,
             target_feature_processor_update_frequency=250)


@pytest.fixture(scope="module")
def demos():
    return generate_demos("maze2d", count=1, seed=0)


@pytest.fixture(scope="module")
def demo_file(tmp_path_factory, demos):
    path = tmp_path_factory.mktemp("demos") / "maze.jsonl"
    generate_demos("maze2d", count=1, seed=0, out=path)
    return path


# ---------------------------------------------------------------- config

def test_desk_scale_defaults():
    cfg = RunConfig()
    assert (cfg.total_env_steps, cfg.eval_every, cfg.eval_episodes, cfg.seed_frames) == (50000, 2000, 20, 1000)
    assert cfg.reward_scale_factor == 10.0 and cfg.discount == 0.99 and cfg.nstep == 3
    assert cfg.critic_soft_update_rate == 0.01
    r = cfg.resolved()
    assert r.fixed_weight_alpha == 0.03 and r.lambda_mode == "soft_q_filter"


@pytest.mark.parametrize("method", METHODS)
def test_every_method_resolves(method):
    cfg = RunConfig(method=method).resolved()
    assert cfg.lambda_mode is not None and cfg.exploration_schedule is not None


def test_ot_method_reduction_settings():
    cfg = RunConfig(method="ot").resolved()
    assert not cfg.pretrain and not cfg.init_from_bc
    assert cfg.lambda_mode == "none" and cfg.fixed_weight_alpha == 0.0
    assert cfg.exploration_schedule.startswith("linear(")


def test_config_file_roundtrip_and_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"batch_size": 128, "seed": 3}))
    cfg = load_config(path, method="bc", seed=9)
    assert cfg.batch_size == 128 and cfg.seed == 9 and cfg.method == "bc"
    assert load_config(None).to_dict() == RunConfig().to_dict()


def test_unknown_key_is_config_error(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"batchsize": 128}))
    with pytest.raises(ConfigError, match="batchsize"):
        load_config(path)


@pytest.mark.parametrize("data,field", [({"method": "dqn"}, "method"), ({"env": "pong"}, "env"),
                                        ({"batch_size": 0}, "batch_size"),
                                        ({"total_env_steps": -1}, "total_env_steps")])
def test_invalid_values_name_the_field(data, field):
    with pytest.raises(ConfigError, match=field):
        RunConfig.from_dict(data).resolved()


def test_bad_config_files(tmp_path):
    with pytest.raises(MissingInputError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_soft_q_without_pretraining_is_rejected():
    with pytest.raises(ConfigError):
        RunConfig(method="rot", pretrain=False).resolved()


# ---------------------------------------------------------------- evaluation

def test_expert_controller_always_succeeds():
    policy = lambda obs: np.array([scripted_expert(MAZE2D, o) for o in obs])  # noqa: E731
    assert evaluate(policy, "maze2d", episodes=20)[0] == 1.0


def test_zero_policy_never_succeeds():
    sr, ret = evaluate(lambda obs: np.zeros((len(obs), 2)), "maze2d", episodes=5)
    assert sr == 0.0 and math.isnan(ret)


def test_evaluation_starts_depend_only_on_seed():
    starts = []

    def record(obs):
        if not starts:
            starts.append(obs.copy())
        return np.zeros_like(obs)

    evaluate(record, "maze2d", episodes=6, seed=3)
    first = starts.pop()
    evaluate(record, "maze2d", episodes=6, seed=3)
    assert np.array_equal(first, starts.pop())


def test_evaluate_needs_episodes():
    with pytest.raises(ValueError):
        evaluate(lambda o: o, "maze2d", episodes=0)


# ---------------------------------------------------------------- runs

def test_bc_method_has_no_online_steps(tmp_path, demos):
    res = run(RunConfig(method="bc", **SMALL), tmp_path, demos=demos)
    assert [m[0] for m in res["metrics"]] == [0]
    assert res["episodes"] == []
    assert (tmp_path / "checkpoints" / "bc.bin").exists()


def test_run_writes_metrics_with_exact_header(tmp_path, demos):
    res = run(RunConfig(**SMALL), tmp_path, demos=demos)
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == ",".join(METRICS_HEADER)
    assert lines[0] == "env_step,episode,return,success_rate,lambda,ot_reward_mean,critic_loss,wall_clock_s"
    rows = read_metrics(tmp_path)
    steps = [r["env_step"] for r in rows]
    assert steps == [0, 200, 400, 600] and len(rows) == len(res["metrics"])
    assert all(len(line.split(",")) == len(METRICS_HEADER) for line in lines)
    assert all(0 <= r["lambda"] <= 1 for r in rows[2:])
    for name in ("episodes.csv", "config.json", "timing.json", "checkpoints/final.bin"):
        assert (tmp_path / name).exists()


def test_same_seed_gives_identical_metrics(tmp_path, demo_file):
    for d in ("a", "b"):
        run(RunConfig(seed=4, **SMALL), tmp_path / d, demos_path=demo_file)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "episodes.csv").read_bytes() == (tmp_path / "b" / "episodes.csv").read_bytes()


def test_rot_without_regularisation_equals_ot(tmp_path, demos):
    common = dict(SMALL, seed=2, exploration_steps=100, exploration_schedule="linear(1,0.1,25000)")
    run(RunConfig(method="ot", **common), tmp_path / "ot", demos=demos)
    run(RunConfig(method="rot", lambda_mode="none", fixed_weight_alpha=0.0, pretrain=False, **common),
        tmp_path / "rot", demos=demos)
    assert (tmp_path / "ot" / "metrics.csv").read_bytes() == (tmp_path / "rot" / "metrics.csv").read_bytes()


def test_missing_demo_file(tmp_path):
    with pytest.raises(MissingInputError):
        run(RunConfig(**SMALL), tmp_path, demos_path=tmp_path / "none.jsonl")
    with pytest.raises(MissingInputError):
        run(RunConfig(**SMALL), tmp_path)


def test_demo_env_mismatch(demos):
    with pytest.raises(ConfigError):
        run(RunConfig(env="point_reach", **SMALL), demos=demos)


# ---------------------------------------------------------------- comparison

def fake_run(path, env, steps, success):
    path.mkdir(parents=True)
    (path / "config.json").write_text(json.dumps({"env": env}))
    rows = [(s, 0, 0.0, sr, 0.0, 0.0, 0.0, 0.0) for s, sr in zip(steps, success)]
    write_csv(path / "metrics.csv", METRICS_HEADER, rows)
    return path


def test_speedup_example(tmp_path):
    steps = [0, 10000, 20000, 30000, 40000]
    a = fake_run(tmp_path / "a", "maze2d", steps, [1.0] * 5)
    b = fake_run(tmp_path / "b", "maze2d", steps, [0.0, 0.0, 1.0, 1.0, 1.0])
    # smoothed crossing: a at step 0; use window=1 for the literal 10k/30k example
    c = fake_run(tmp_path / "c", "maze2d", steps, [0.0, 1.0, 1.0, 1.0, 1.0])
    d = fake_run(tmp_path / "d", "maze2d", steps, [0.0, 0.0, 0.0, 1.0, 1.0])
    table = compare_runs([d, c], window=1)
    assert [r["threshold_step"] for r in table] == [30000, 10000]
    assert table[1]["speedup"] == 3.0
    assert compare_runs([a, b])[1]["threshold_step"] == 40000


def test_never_reaching_has_no_ratio(tmp_path):
    steps = [0, 2000, 4000]
    a = fake_run(tmp_path / "a", "maze2d", steps, [0.0, 1.0, 1.0])
    b = fake_run(tmp_path / "b", "maze2d", steps, [0.0, 0.2, 0.3])
    table = compare_runs([a, b], window=1)
    assert table[1]["threshold_step"] is None and table[1]["speedup"] is None
    assert speedup(None, 10) is None and speedup(30000, 10000) == 3.0


def test_compare_errors(tmp_path):
    a = fake_run(tmp_path / "a", "maze2d", [0], [1.0])
    b = fake_run(tmp_path / "b", "point_reach", [0], [1.0])
    with pytest.raises(ConfigError):
        compare_runs([a, b])
    with pytest.raises(ValueError):
        compare_runs([a])
    with pytest.raises(MissingInputError):
        compare_runs([a, tmp_path / "nowhere"])


def test_smoothing_and_threshold():
    np.testing.assert_allclose(smoothed([0.0, 0.9, 0.9, 0.9]), [0.0, 0.45, 0.6, 0.9])
    assert threshold_step(np.array([0, 1, 2, 3]), [0.0, 0.9, 0.9, 0.9]) == 3
    assert threshold_step(np.array([0, 1]), [0.0, 0.5]) is None
