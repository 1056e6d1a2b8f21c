import json

import pytest

from rot.cli import main

SMALL = dict(total_env_steps=400, eval_every=200, eval_episodes=3, seed_frames=100, batch_size=16,
             hidden_dim=16, feature_dim=8, pretrain_steps=30)


@pytest.fixture
def files(tmp_path):
    demos = tmp_path / "demos.jsonl"
    assert main(["gen-demos", "--env", "maze2d", "--count", "1", "--seed", "0", "--out", str(demos)]) == 0
    config = tmp_path / "config.json"
    config.write_text(json.dumps(SMALL))
    return tmp_path, demos, config


def test_train_eval_compare(files, capsys):
    tmp, demos, config = files
    for seed in ("0", "1"):
        out = tmp / f"run{seed}"
        assert main(["train", "--method", "rot", "--demos", str(demos), "--config", str(config),
                     "--seed", seed, "--out", str(out), "--quiet"]) == 0
        assert (out / "metrics.csv").exists()
    capsys.readouterr()
    ckpt = tmp / "run0" / "checkpoints" / "final.bin"
    assert main(["eval", "--checkpoint", str(ckpt), "--env", "maze2d", "--episodes", "3"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert 0.0 <= report["success_rate"] <= 1.0
    assert main(["compare", "--runs", str(tmp / "run0"), str(tmp / "run1")]) == 0


def test_train_is_repeatable(files):
    tmp, demos, config = files
    for d in ("a", "b"):
        main(["train", "--method", "fixed_schedule", "--demos", str(demos), "--config", str(config),
              "--seed", "3", "--out", str(tmp / d), "--quiet"])
    assert (tmp / "a" / "metrics.csv").read_bytes() == (tmp / "b" / "metrics.csv").read_bytes()


def test_pretrain_command(files):
    tmp, demos, config = files
    assert main(["pretrain", "--demos", str(demos), "--config", str(config), "--out", str(tmp / "bc")]) == 0
    assert (tmp / "bc" / "checkpoints" / "bc.bin").exists()


def test_config_error_exit_code(files):
    tmp, demos, _ = files
    bad = tmp / "bad.json"
    bad.write_text(json.dumps({"not_a_key": 1}))
    assert main(["train", "--method", "rot", "--demos", str(demos), "--config", str(bad),
                 "--out", str(tmp / "x")]) == 2


def test_missing_input_exit_code(files):
    tmp, _, config = files
    assert main(["train", "--method", "rot", "--demos", str(tmp / "none.jsonl"),
                 "--config", str(config), "--out", str(tmp / "x")]) == 3
    assert main(["eval", "--checkpoint", str(tmp / "none.bin"), "--env", "maze2d"]) == 3


def test_eval_dimension_mismatch(files):
    tmp, demos, config = files
    main(["pretrain", "--demos", str(demos), "--config", str(config), "--out", str(tmp / "bc")])
    assert main(["eval", "--checkpoint", str(tmp / "bc" / "checkpoints" / "bc.bin"),
                 "--env", "point_reach"]) == 2


def test_unknown_method_rejected_by_parser(files):
    tmp, demos, _ = files
    with pytest.raises(SystemExit) as exc:
        main(["train", "--method", "ppo", "--demos", str(demos), "--out", str(tmp / "x")])
    assert exc.value.code == 2
