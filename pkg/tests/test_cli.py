import json

import pytest

from swarmcomm import gradtape as gt
from swarmcomm.cli import build_parser, main
from swarmcomm.harness.metrics import read_metrics

TINY = """
[run]
eval_every = 1
eval_episodes = 2
checkpoint_every = 0
[task]
num_agents = 2
[comm]
hidden = 8
key_dim = 8
hops = 1
heads = 2
[ppo]
n_envs = 2
rollout_len = 8
minibatches = 2
epochs = 1
[curriculum]
stages = 2, 3
stage_budget = 1
"""


@pytest.fixture
def conf(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY)
    return p


@pytest.fixture(autouse=True)
def restore_row_stable():
    yield
    gt.set_row_stable(False)


def test_parser_has_all_subcommands():
    p = build_parser()
    for cmd in ("train", "eval", "curriculum", "zeroshot", "render"):
        args = p.parse_args([cmd] + (["x"] if cmd in ("eval", "zeroshot", "render") else []))
        assert args.command == cmd


def test_train_eval_zeroshot_render(tmp_path, conf, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(conf), "--out", str(out), "--iterations", "1", "--deterministic"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["iterations"] == 1 and summary["last_eval"]["agents"] == 2
    assert len(read_metrics(out / "metrics.csv")) == 1

    ck = str(out / "checkpoints" / "final.ckpt")
    traj = tmp_path / "traj.csv"
    assert main(["eval", ck, "--agents", "3", "--episodes", "2", "--trajectory", str(traj)]) == 0
    assert json.loads(capsys.readouterr().out)["agents"] == 3

    assert main(["zeroshot", ck, "--deltas=-1,0,1", "--episodes", "2", "--out", str(tmp_path / "zs")]) == 0
    table = capsys.readouterr().out.splitlines()
    assert len(table) == 4 and (tmp_path / "zs" / "zeroshot.csv").exists()

    assert main(["render", str(traj), "--out", str(tmp_path / "svg"), "--half-width", "2"]) == 0
    assert len(capsys.readouterr().out.split()) == 2


def test_curriculum_command(tmp_path, conf, capsys):
    code = main(["curriculum", "--config", str(conf), "--out", str(tmp_path / "cur"), "--seed", "3"])
    lines = capsys.readouterr().out.splitlines()
    # the tiny budget cannot reach the default threshold, so the run stops after the first stage
    assert code == 1 and lines == ["M=2: updates=1 reached=False"]
    assert "seed = 3" in (tmp_path / "cur" / "config.ini").read_text()


def test_errors_exit_with_code_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[task]\nnope = 1\n")
    assert main(["train", "--config", str(bad)]) == 2
    assert "unknown key task.nope" in capsys.readouterr().err
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"hello")
    assert main(["eval", str(junk)]) == 2
    assert "error" in capsys.readouterr().err
