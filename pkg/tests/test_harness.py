import csv

import numpy as np
import pytest

from swarmcomm import gradtape as gt
from swarmcomm.harness import checkpoint as ckpt
from swarmcomm.harness import runner
from swarmcomm.harness.config import ConfigError, RunConfig, from_ini_text, load_config, to_ini_text
from swarmcomm.harness.metrics import COLUMNS, read_metrics
from swarmcomm.harness.render import cmd_render, to_viewport


def tiny(**task):
    cfg = RunConfig()
    return cfg.replace(
        run={"eval_every": 2, "eval_episodes": 4, "checkpoint_every": 0, "stop_at_threshold": False},
        comm={"hidden": 8, "key_dim": 8, "hops": 1, "heads": 2},
        ppo={"n_envs": 2, "rollout_len": 8, "minibatches": 2, "epochs": 1},
        curriculum={"stages": [2, 3], "stage_budget": 1},
        task={"num_agents": 2, **task},
    )


# -- config -----------------------------------------------------------------


def test_config_round_trip():
    cfg = tiny(kind="formation")
    again = from_ini_text(to_ini_text(cfg))
    assert to_ini_text(again) == to_ini_text(cfg)
    assert again.task.kind == "formation" and again.curriculum.stages == [2, 3]


def test_config_defaults():
    cfg = load_config(None)
    assert cfg.task.arena_half_width == 2.0 and cfg.comm.heads == 4 and cfg.comm.hops == 3
    assert cfg.ppo.lr == 1e-4 and cfg.run.max_iterations == 2500


@pytest.mark.parametrize(
    "text, msg",
    [
        ("[task]\nbogus = 1\n", "unknown key task.bogus"),
        ("[nope]\n", "unknown section"),
        ("[task]\nkind = swarm\n", "swarm"),
        ("[curriculum]\nstages = 5, 3\n", "strictly increasing"),
        ("[comm]\nmode = sometimes\n", "comm.mode"),
        ("[ppo]\nlr = fast\n", "ppo.lr"),
    ],
)
def test_config_rejects_bad_input(text, msg):
    with pytest.raises(ConfigError, match=msg):
        from_ini_text(text)


# -- checkpoint -------------------------------------------------------------


def inputs(M=3, B=2, seed=0):
    r = np.random.default_rng(seed)
    return r.uniform(-1, 1, (B, M, 4)), r.uniform(-1, 1, (B, M, M, 2)), np.ones((B, M, M), bool)


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    cfg = RunConfig()
    net = runner.build_net(cfg)
    opt = gt.AdamState()
    path = ckpt.save_checkpoint(tmp_path / "a.ckpt", ckpt.Checkpoint.capture(to_ini_text(cfg), net.params, opt, 7, {"s": b"{}"}))
    net2, cfg2, ck = runner.net_from_checkpoint(path)
    x = inputs()
    a, b = net.forward(*x), net2.forward(*x)
    assert np.array_equal(a.logits.data, b.logits.data) and np.array_equal(a.values.data, b.values.data)
    assert ck.iteration == 7 and ck.rng_states == {"s": b"{}"}
    assert to_ini_text(cfg2) == to_ini_text(cfg)


def test_checkpoint_preserves_adam_state(tmp_path):
    cfg = tiny()
    net = runner.build_net(cfg)
    opt = gt.AdamState()
    for p in net.params:
        p.grad = np.ones_like(p.data)
    gt.adam_step(net.params, opt, 1e-3)
    raw = ckpt.to_bytes(ckpt.Checkpoint.capture(to_ini_text(cfg), net.params, opt))
    back = ckpt.from_bytes(raw)
    opt2 = gt.AdamState()
    back.restore(runner.build_net(cfg).params, opt2)
    assert opt2.t == 1
    for k in opt.m:
        np.testing.assert_array_equal(opt2.m[k], opt.m[k])
        np.testing.assert_array_equal(opt2.v[k], opt.v[k])


def test_truncated_checkpoint_is_rejected(tmp_path):
    cfg = tiny()
    raw = ckpt.to_bytes(ckpt.Checkpoint.capture(to_ini_text(cfg), runner.build_net(cfg).params))
    with pytest.raises(ckpt.CheckpointError, match="truncated"):
        ckpt.from_bytes(raw[: len(raw) // 2])
    with pytest.raises(ckpt.CheckpointError, match="magic"):
        ckpt.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_checkpoint(tmp_path / "missing.ckpt")


def test_architecture_mismatch_names_tensor():
    mha = runner.build_net(tiny())
    exp_cfg = tiny().replace(comm={"variant": "exp"})
    ck = ckpt.Checkpoint.capture(to_ini_text(exp_cfg), runner.build_net(exp_cfg).params)
    with pytest.raises(ValueError, match="comm.hop0"):
        ck.restore(mha.params)


# -- training runs ----------------------------------------------------------


def test_zero_iterations_writes_header_and_initial_checkpoint(tmp_path):
    res = runner.cmd_train(tiny(), tmp_path, max_iterations=0)
    assert res.iterations == 0
    with open(tmp_path / "metrics.csv") as fh:
        assert list(csv.reader(fh)) == [list(COLUMNS)]
    assert (tmp_path / "checkpoints" / "initial.ckpt").exists()
    assert (tmp_path / "config.ini").exists()


def drop_wall(rows):
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in rows]


def test_training_is_deterministic(tmp_path):
    cfg = tiny().replace(comm={"dropout": True})
    runner.cmd_train(cfg, tmp_path / "a", max_iterations=2)
    runner.cmd_train(cfg, tmp_path / "b", max_iterations=2)
    a, b = read_metrics(tmp_path / "a" / "metrics.csv"), read_metrics(tmp_path / "b" / "metrics.csv")
    assert len(a) == 2 and drop_wall(a) == drop_wall(b)
    assert a[1]["eval_success"] is not None and a[0]["eval_success"] is None
    ha = ckpt.tensor_hashes(ckpt.load_checkpoint(tmp_path / "a" / "checkpoints" / "final.ckpt").tensors)
    hb = ckpt.tensor_hashes(ckpt.load_checkpoint(tmp_path / "b" / "checkpoints" / "final.ckpt").tensors)
    assert ha == hb


def test_seed_changes_run(tmp_path):
    runner.cmd_train(tiny(), tmp_path / "a", max_iterations=1)
    runner.cmd_train(tiny().replace(run={"seed": 1}), tmp_path / "b", max_iterations=1)
    a, b = read_metrics(tmp_path / "a" / "metrics.csv"), read_metrics(tmp_path / "b" / "metrics.csv")
    assert drop_wall(a) != drop_wall(b)


def test_curriculum_carries_parameters(tmp_path):
    cfg = tiny().replace(run={"success_threshold": 0.0, "eval_every": 1})
    res = runner.cmd_curriculum(cfg, tmp_path)
    assert [s.num_agents for s in res.stages] == [2, 3]
    assert res.transfer_hashes_equal == [True] and res.completed
    stage0 = ckpt.load_checkpoint(tmp_path / "checkpoints" / "stage0_M2.ckpt")
    assert stage0.tensors.keys() == ckpt.load_checkpoint(tmp_path / "checkpoints" / "final.ckpt").tensors.keys()
    rows = list(csv.DictReader(open(tmp_path / "curriculum.csv")))
    assert [r["agents"] for r in rows] == ["2", "3"]
    assert {r["stage_agents"] for r in read_metrics(tmp_path / "metrics.csv")} == {2, 3}


def test_curriculum_stops_when_stage_fails(tmp_path):
    cfg = tiny().replace(run={"success_threshold": 1.0, "eval_every": 1})
    res = runner.cmd_curriculum(cfg, tmp_path)
    assert not res.completed and len(res.stages) == 1


def test_zeroshot_rows(tmp_path):
    cfg = tiny().replace(task={"num_agents": 3})
    runner.cmd_train(cfg, tmp_path, max_iterations=0)
    out = tmp_path / "zs.csv"
    rows = runner.cmd_zeroshot(tmp_path / "checkpoints" / "initial.ckpt", (-2, -1, 0, 1, 2), episodes=2, out_path=out)
    assert [r["agents"] for r in rows] == [1, 2, 3, 4, 5]
    assert len(list(csv.DictReader(open(out)))) == 5
    skipped = runner.cmd_zeroshot(tmp_path / "checkpoints" / "initial.ckpt", (-3, 0), episodes=2)
    assert [r["delta"] for r in skipped] == [0]


def test_evaluation_does_not_touch_parameters():
    cfg = tiny()
    net = runner.build_net(cfg)
    before = ckpt.tensor_hashes(net.params.state_dict())
    runner.evaluate(net, cfg, episodes=3)
    assert ckpt.tensor_hashes(net.params.state_dict()) == before


def test_untrained_policy_rarely_succeeds():
    cfg = RunConfig().replace(comm={"hidden": 16, "key_dim": 16})
    ev = runner.evaluate(runner.build_net(cfg), cfg, episodes=30)
    assert ev.success_rate <= 5.0 and ev.mean_time == pytest.approx(50.0, abs=3)


def test_scripted_baseline_can_succeed():
    cfg = RunConfig().replace(task={"arena_half_width": 0.5})
    ev = runner.evaluate(None, cfg, episodes=30, policy_fn=runner.scripted_coverage_policy)
    assert ev.success_rate > 0
    assert ev.avg_distance is not None


# -- render -----------------------------------------------------------------


def test_viewport_corners():
    assert to_viewport(-2, 2, 2.0) == (20.0, 20.0)
    assert to_viewport(2, -2, 2.0) == (460.0, 460.0)
    assert to_viewport(0, 0, 2.0) == (240.0, 240.0)


def test_render_empty_trajectory(tmp_path):
    traj = tmp_path / "t.csv"
    traj.write_text("episode,step,kind,index,x,y,vx,vy,action,reward\n")
    (svg,) = cmd_render(traj, tmp_path / "svg")
    text = svg.read_text()
    assert 'class="arena"' in text and 'class="agent"' not in text


def test_render_from_eval_export(tmp_path):
    cfg = tiny()
    runner.cmd_train(cfg, tmp_path, max_iterations=0)
    traj = tmp_path / "traj.csv"
    runner.cmd_eval(tmp_path / "checkpoints" / "initial.ckpt", episodes=2, trajectory_path=traj)
    files = cmd_render(traj, tmp_path / "svg")
    assert [f.name for f in files] == ["episode_0.svg", "episode_1.svg"]
    text = files[0].read_text()
    assert text.count('class="agent"') == 2 and text.count('class="landmark"') == 2
