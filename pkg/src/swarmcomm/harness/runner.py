"""Training, evaluation, curriculum and zero-shot drivers."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import comm_graph, seeding
from .. import gradtape as gt
from ..env import TrajectoryWriter, VecEnv, world_config_for
from ..policy import PolicyNet, greedy_actions, sample_actions
from ..ppo import RewardScaler, Rollout, train_iteration
from ..tasks import TaskKind, avg_min_distance, make_task
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint, tensor_hashes
from .config import RunConfig, from_ini_text, to_ini_text
from .metrics import MetricsWriter

log = logging.getLogger(__name__)


def build_net(cfg: RunConfig) -> PolicyNet:
    return PolicyNet(cfg.net_config(), rng=seeding.stream(cfg.run.seed, "net.init"))


def world_for(cfg: RunConfig, num_agents: int):
    task = make_task(cfg.task_config())
    wc = world_config_for(
        task,
        num_agents,
        cfg.task.arena_half_width,
        dt=cfg.task.dt,
        damping=cfg.task.damping,
        horizon=cfg.task.horizon,
        seed=cfg.run.seed,
    )
    return task, wc


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalSummary:
    num_agents: int
    episodes: int
    success_rate: float  # percent
    mean_time: float  # failures count as the horizon
    mean_final_reward: float
    avg_distance: float | None = None  # coverage only
    per_episode: list[dict] = field(default_factory=list, repr=False)

    def row(self) -> dict:
        return {
            "agents": self.num_agents,
            "episodes": self.episodes,
            "success_rate": self.success_rate,
            "mean_time": self.mean_time,
            "mean_final_reward": self.mean_final_reward,
            "avg_distance": self.avg_distance,
        }


def evaluate(
    net: PolicyNet,
    cfg: RunConfig,
    num_agents: int | None = None,
    episodes: int | None = None,
    greedy: bool = True,
    round_index: int = 0,
    trajectory: TrajectoryWriter | None = None,
    policy_fn=None,
) -> EvalSummary:
    """Run ``episodes`` fresh episodes in parallel and summarise them.

    Environments come from the "eval.init" stream, disjoint from training.
    ``policy_fn(own, rel, mask, states) -> actions`` replaces the network
    when given (scripted baselines). Parameters are never modified.
    """
    M = num_agents or cfg.task.num_agents
    episodes = episodes or cfg.run.eval_episodes
    task, wc = world_for(cfg, M)
    venv = VecEnv(wc, task, episodes, purpose="eval.init", auto_reset=False, stream_prefix=(round_index,))
    own, rel = venv.reset()
    mode = cfg.comm_mode()
    act_rng = seeding.stream(cfg.run.seed, "eval.actions", round_index)
    dropout = None
    if cfg.comm.dropout and cfg.comm.dropout_in_eval:
        dropout = [
            comm_graph.DropoutSchedule(seeding.stream(cfg.run.seed, "eval.dropout", round_index, k), cfg.comm.drop_fraction, cfg.comm.resample_period)
            for k in range(episodes)
        ]
    if trajectory is not None:
        for k, e in enumerate(venv.envs):
            trajectory.landmarks(k, e.state.landmarks)
            trajectory.agents(k, e.state, None, None)
    results: list[dict | None] = [None] * episodes
    active = list(range(episodes))
    while active:
        a_own, a_rel = own[active], rel[active]
        mask = comm_graph.batch_adjacency(a_own[..., :2], mode)
        if dropout is not None:
            for j, k in enumerate(active):
                mask[j] = comm_graph.apply_dropout(mask[j], dropout[k], venv.envs[k].state.step)
        if policy_fn is not None:
            actions = policy_fn(a_own, a_rel, mask, [venv.envs[k].state for k in active])
        else:
            logits = net.forward(a_own, a_rel, mask).logits.data
            actions = greedy_actions(logits) if greedy else sample_actions(logits, act_rng)
        still = []
        for j, k in enumerate(active):
            env = venv.envs[k]
            st, r = env.step(actions[j])
            if trajectory is not None:
                trajectory.agents(k, st, actions[j], r)
            if st.done:
                res = {"success": st.success, "steps": st.step, "final_reward": r}
                if task.kind == TaskKind.COVERAGE:
                    res["avg_min_distance"] = avg_min_distance(st)
                results[k] = res
            else:
                still.append(k)
                own[k], rel[k] = env.observe()
        active = still
    succ = np.array([r["success"] for r in results])
    steps = np.array([r["steps"] if r["success"] else wc.horizon for r in results])
    return EvalSummary(
        num_agents=M,
        episodes=episodes,
        success_rate=100.0 * float(succ.mean()),
        mean_time=float(steps.mean()),
        mean_final_reward=float(np.mean([r["final_reward"] for r in results])),
        avg_distance=float(np.mean([r["avg_min_distance"] for r in results])) if task.kind == TaskKind.COVERAGE else None,
        per_episode=results,
    )


def scripted_coverage_policy(own, rel, mask, states):
    """Bang-bang controller toward the landmark assigned by minimum matching.

    Uses global state (all positions), so it is only a harness sanity
    baseline, not a decentralized policy.
    """
    from ..tasks import distance_matrix, hungarian

    actions = np.zeros(own.shape[:2], dtype=np.int64)
    for b, st in enumerate(states):
        match = hungarian(distance_matrix(st.positions, st.landmarks))
        for lm, agent in enumerate(match.perm):
            err = st.landmarks[lm] - st.positions[agent]
            # brake on an axis once the remaining distance fits the damped stopping distance
            v = st.velocities[agent]
            ax = int(np.argmax(np.abs(err - 0.1 * v)))
            d = err[ax] - 0.1 * v[ax]
            if abs(d) < 0.02:
                actions[b, agent] = 0
            elif ax == 0:
                actions[b, agent] = 1 if d > 0 else 2
            else:
                actions[b, agent] = 3 if d > 0 else 4
    return actions


# ---------------------------------------------------------------------------
# training


@dataclass
class StageResult:
    num_agents: int
    iterations: int  # updates run in this stage
    reached: bool
    updates_to_threshold: int | None
    last_eval: EvalSummary | None
    end_iteration: int


class Trainer:
    """Holds the network, optimizer and output locations across stages."""

    def __init__(self, cfg: RunConfig, out_dir: str | Path | None = None, net: PolicyNet | None = None):
        self.cfg = cfg
        self.out = Path(out_dir or cfg.run.out_dir)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
            (self.out / "checkpoints").mkdir(exist_ok=True)
        except OSError as exc:
            raise OSError(f"output directory {self.out} is not writable: {exc}") from exc
        self.net = net or build_net(cfg)
        self.opt = gt.AdamState()
        # shared across curriculum stages, like the optimizer state
        self.reward_scaler = RewardScaler(cfg.ppo.gamma) if cfg.ppo.scale_rewards else None
        self.iteration = 0
        self.t0 = time.time()
        self.shuffle_rng = seeding.stream(cfg.run.seed, "train.shuffle")
        self.action_rng = seeding.stream(cfg.run.seed, "train.actions")
        (self.out / "config.ini").write_text(to_ini_text(cfg))
        self.metrics = MetricsWriter(self.out / "metrics.csv")

    def rng_states(self) -> dict[str, bytes]:
        return {"train.shuffle": seeding.rng_state_bytes(self.shuffle_rng), "train.actions": seeding.rng_state_bytes(self.action_rng)}

    def checkpoint(self, name: str) -> Path:
        ck = Checkpoint.capture(to_ini_text(self.cfg), self.net.params, self.opt, self.iteration, self.rng_states())
        return save_checkpoint(self.out / "checkpoints" / name, ck)

    def run_stage(self, num_agents: int, budget: int, stage_index: int = 0) -> StageResult:
        cfg = self.cfg
        task, wc = world_for(cfg, num_agents)
        venv = VecEnv(wc, task, cfg.ppo.n_envs, purpose="train.env", stream_prefix=(stage_index,))
        dropout = None
        if cfg.comm.dropout:
            dropout = [
                comm_graph.DropoutSchedule(
                    seeding.stream(cfg.run.seed, "train.dropout", stage_index, k), cfg.comm.drop_fraction, cfg.comm.resample_period
                )
                for k in range(cfg.ppo.n_envs)
            ]
        rollout = Rollout(
            venv, self.net, cfg.comm_mode(), self.action_rng, dropout, cfg.ppo.bootstrap_timeouts, self.reward_scaler
        )
        target = 100.0 * cfg.run.success_threshold
        last_eval = None
        reached_at = None
        for i in range(1, budget + 1):
            stats = train_iteration(rollout, self.net, self.opt, cfg.ppo, self.shuffle_rng)
            self.iteration += 1
            row = {
                "stage_agents": num_agents,
                "iteration": self.iteration,
                "wall_time": round(time.time() - self.t0, 3),
                "timesteps": stats.timesteps,
                "mean_reward": stats.mean_reward,
                "train_success": stats.success_rate,
                "train_length": stats.mean_length,
                "policy_loss": stats.policy_loss,
                "value_loss": stats.value_loss,
                "entropy": stats.entropy,
                "clip_fraction": stats.clip_fraction,
                "approx_kl": stats.approx_kl,
                "grad_norm": stats.grad_norm,
            }
            if i % cfg.run.eval_every == 0:
                last_eval = evaluate(self.net, cfg, num_agents, round_index=self.iteration)
                row.update(
                    eval_success=last_eval.success_rate,
                    eval_time=last_eval.mean_time,
                    eval_avg_distance=last_eval.avg_distance,
                    eval_reward=last_eval.mean_final_reward,
                )
                log.info(
                    "M=%d iter %d: eval success %.1f%% time %.2f reward %.3f",
                    num_agents, self.iteration, last_eval.success_rate, last_eval.mean_time, last_eval.mean_final_reward,
                )
            self.metrics.write(row)
            if cfg.run.checkpoint_every and self.iteration % cfg.run.checkpoint_every == 0:
                self.checkpoint(f"iter_{self.iteration:06d}.ckpt")
            if last_eval is not None and i % cfg.run.eval_every == 0 and last_eval.success_rate >= target:
                reached_at = i
                if cfg.run.stop_at_threshold:
                    break
        return StageResult(num_agents, i if budget else 0, reached_at is not None, reached_at, last_eval, self.iteration)

    def close(self) -> None:
        self.metrics.close()


def cmd_train(cfg: RunConfig, out_dir: str | Path | None = None, max_iterations: int | None = None) -> StageResult:
    budget = cfg.run.max_iterations if max_iterations is None else max_iterations
    tr = Trainer(cfg, out_dir)
    try:
        tr.checkpoint("initial.ckpt")
        res = tr.run_stage(cfg.task.num_agents, budget)
        tr.checkpoint("final.ckpt")
    finally:
        tr.close()
    return res


@dataclass
class CurriculumResult:
    stages: list[StageResult]
    transfer_hashes_equal: list[bool]
    completed: bool


def cmd_curriculum(cfg: RunConfig, out_dir: str | Path | None = None, stage_budget: int | None = None) -> CurriculumResult:
    """Train on increasing team sizes, carrying the same parameters forward."""
    budget = cfg.curriculum.stage_budget if stage_budget is None else stage_budget
    tr = Trainer(cfg, out_dir)
    results: list[StageResult] = []
    equal: list[bool] = []
    completed = True
    try:
        tr.checkpoint("initial.ckpt")
        before = None
        for s, M in enumerate(cfg.curriculum.stages):
            if before is not None:
                # new envs with a bigger team; parameters must carry over untouched
                after = tensor_hashes(tr.net.params.state_dict())
                equal.append(after == before)
            res = tr.run_stage(M, budget, stage_index=s)
            results.append(res)
            tr.checkpoint(f"stage{s}_M{M}.ckpt")
            before = tensor_hashes(tr.net.params.state_dict())
            if not res.reached:
                log.warning("stage M=%d did not reach the success threshold within %d updates; stopping", M, budget)
                completed = False
                break
        tr.checkpoint("final.ckpt")
    finally:
        tr.close()
    with open(tr.out / "curriculum.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "agents", "updates", "reached", "updates_to_threshold", "final_eval_success"])
        for s, r in enumerate(results):
            w.writerow([s, r.num_agents, r.iterations, r.reached, "" if r.updates_to_threshold is None else r.updates_to_threshold,
                        "" if r.last_eval is None else r.last_eval.success_rate])
    return CurriculumResult(results, equal, completed)


def net_from_checkpoint(path: str | Path, cfg: RunConfig | None = None) -> tuple[PolicyNet, RunConfig, Checkpoint]:
    ck = load_checkpoint(path)
    ck_cfg = from_ini_text(ck.config_text)
    cfg = cfg or ck_cfg
    net = PolicyNet(cfg.net_config(), rng=np.random.default_rng(0))
    ck.restore(net.params)
    return net, cfg, ck


def cmd_eval(checkpoint: str | Path, cfg: RunConfig | None = None, num_agents: int | None = None, episodes: int | None = None,
             greedy: bool = True, trajectory_path: str | Path | None = None, round_index: int = 0) -> EvalSummary:
    net, cfg, _ = net_from_checkpoint(checkpoint, cfg)
    if trajectory_path is None:
        return evaluate(net, cfg, num_agents, episodes, greedy, round_index=round_index)
    Path(trajectory_path).parent.mkdir(parents=True, exist_ok=True)
    with open(trajectory_path, "w", newline="") as fh:
        return evaluate(net, cfg, num_agents, episodes, greedy, round_index=round_index, trajectory=TrajectoryWriter(fh))


def cmd_zeroshot(checkpoint: str | Path, deltas=(-2, -1, 0, 1, 2), cfg: RunConfig | None = None, episodes: int | None = None,
                 out_path: str | Path | None = None, round_index: int = 0) -> list[dict]:
    """Evaluate a trained policy on team sizes M + delta without any updates."""
    net, cfg, _ = net_from_checkpoint(checkpoint, cfg)
    base = cfg.task.num_agents
    rows = []
    for d in deltas:
        M = base + d
        if M < 1:
            log.warning("skipping delta %+d: team size %d < 1", d, M)
            continue
        summary = evaluate(net, cfg, M, episodes, greedy=True, round_index=round_index)
        rows.append({"delta": d, **summary.row()})
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["delta", "agents", "episodes", "success_rate", "mean_time", "mean_final_reward", "avg_distance"])
            w.writeheader()
            for r in rows:
                w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    return rows
