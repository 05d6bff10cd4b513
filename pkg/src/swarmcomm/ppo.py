"""Multi-agent PPO with GAE over a shared parameter set.

Every agent contributes its own (observation, action, advantage) samples;
the loss averages over all (timestep, env, agent) samples in a minibatch so
team size does not change the effective learning rate.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from . import comm_graph
from . import gradtape as gt
from .env import VecEnv
from .policy import PolicyNet, sample_actions

logger = logging.getLogger(__name__)


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    epochs: int = 4
    lr: float = 1e-4
    n_envs: int = 32
    rollout_len: int = 128
    minibatches: int = 4
    grad_clip: float = 0.5
    normalize_advantages: bool = True
    # episodes cut by the horizon bootstrap from V(final state) instead of 0
    bootstrap_timeouts: bool = True
    # divide training rewards by a running std of the discounted return
    scale_rewards: bool = True

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise ValueError("lambda must lie in [0, 1]")
        if not self.clip_eps > 0:
            raise ValueError("clip_eps must be positive")
        if self.minibatches < 1 or (self.n_envs * self.rollout_len) % self.minibatches:
            raise ValueError("minibatches must divide n_envs * rollout_len")

    @property
    def batch_steps(self) -> int:
        return self.n_envs * self.rollout_len

    def set_coefs(self, value_coef: float | None = None, entropy_coef: float | None = None) -> None:
        """Hook for changing loss coefficients between iterations."""
        if value_coef is not None:
            self.value_coef = float(value_coef)
        if entropy_coef is not None:
            self.entropy_coef = float(entropy_coef)


@dataclass
class RolloutBuffer:
    """Arrays indexed [t, env, agent, ...]; ``rewards`` and ``dones`` are [t, env]."""

    own: np.ndarray  # (T, N, M, 4)
    rel: np.ndarray  # (T, N, M, L, 2)
    masks: np.ndarray  # (T, N, M, M)
    actions: np.ndarray  # (T, N, M)
    log_probs: np.ndarray  # (T, N, M)
    values: np.ndarray  # (T, N, M)
    rewards: np.ndarray  # (T, N)
    dones: np.ndarray  # (T, N) episode ended with this transition
    bootstrap_values: np.ndarray  # (N, M) V(s_T)
    # V(final state) where an episode hit the horizon without success, else 0
    timeout_values: np.ndarray | None = None  # (T, N, M)
    raw_rewards: np.ndarray | None = None  # (T, N) environment rewards before any scaling

    @classmethod
    def empty(cls, T: int, N: int, M: int, L: int) -> "RolloutBuffer":
        return cls(
            own=np.zeros((T, N, M, 4)),
            rel=np.zeros((T, N, M, L, 2)),
            masks=np.zeros((T, N, M, M), dtype=bool),
            actions=np.zeros((T, N, M), dtype=np.int64),
            log_probs=np.zeros((T, N, M)),
            values=np.zeros((T, N, M)),
            rewards=np.zeros((T, N)),
            dones=np.zeros((T, N), dtype=bool),
            bootstrap_values=np.zeros((N, M)),
            timeout_values=np.zeros((T, N, M)),
            raw_rewards=np.zeros((T, N)),
        )


class RewardScaler:
    """Running standard deviation of the per-env discounted return.

    Rewards used for learning are divided by it, which keeps value targets
    near unit scale whatever the horizon and reward magnitude. Metrics keep
    the raw rewards.
    """

    def __init__(self, gamma: float, clip: float = 10.0, eps: float = 1e-8):
        self.gamma = gamma
        self.clip = clip
        self.eps = eps
        self.count = 0
        self.mean = 0.0
        self.var = 1.0
        self._ret: np.ndarray | None = None

    def _update(self, x: np.ndarray) -> None:
        # parallel-variance merge of the batch into the running moments
        n = x.size
        bm, bv = float(x.mean()), float(x.var())
        tot = self.count + n
        delta = bm - self.mean
        m2 = self.var * self.count + bv * n + delta * delta * self.count * n / tot
        self.mean += delta * n / tot
        self.var = m2 / tot
        self.count = tot

    def __call__(self, rewards: np.ndarray, dones: np.ndarray) -> np.ndarray:
        if self._ret is None or self._ret.shape != rewards.shape:
            self._ret = np.zeros_like(rewards, dtype=np.float64)
        self._ret = self._ret * self.gamma + rewards
        self._update(self._ret)
        self._ret[dones] = 0.0
        return np.clip(rewards / np.sqrt(self.var + self.eps), -self.clip, self.clip)


@dataclass
class GaeOutput:
    advantages: np.ndarray  # (T, N, M)
    returns: np.ndarray  # (T, N, M)


def compute_gae(rewards, values, dones, bootstrap_values, gamma: float, lam: float, timeout_values=None) -> GaeOutput:
    """Backward recursion ``A_t = delta_t + gamma*lam*(1 - done_t)*A_{t+1}``.

    ``rewards`` and ``dones`` are (T, ...) and broadcast against ``values``
    (T, ...); ``bootstrap_values`` is V(s_T) for the state after the last
    step. A terminal step gets ``delta_t = r_t - V(s_t)``, plus
    ``gamma * timeout_values[t]`` when given (nonzero only where the episode
    was cut by the time limit rather than finished).
    """
    values = np.asarray(values, dtype=np.float64)
    T = values.shape[0]
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    extra = values.ndim - rewards.ndim
    rewards = rewards.reshape(rewards.shape + (1,) * extra)
    live = (~dones).reshape(dones.shape + (1,) * extra).astype(np.float64)
    adv = np.zeros_like(values)
    next_adv = np.zeros_like(values[0])
    next_value = np.asarray(bootstrap_values, dtype=np.float64)
    cut = np.zeros_like(values) if timeout_values is None else np.asarray(timeout_values, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * (next_value * live[t] + cut[t]) - values[t]
        next_adv = delta + gamma * lam * live[t] * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return GaeOutput(adv, adv + values)


def gae_for_buffer(buf: RolloutBuffer, gamma: float, lam: float) -> GaeOutput:
    return compute_gae(buf.rewards, buf.values, buf.dones, buf.bootstrap_values, gamma, lam, buf.timeout_values)


def normalize(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


@dataclass
class LossParts:
    total: gt.Tensor
    policy: float
    value: float
    entropy: float
    clip_fraction: float
    approx_kl: float


def ppo_loss(net: PolicyNet, batch: dict[str, np.ndarray], cfg: PpoConfig) -> LossParts:
    """Clipped surrogate + value MSE - entropy bonus, to be minimised.

    ``batch`` holds arrays with a leading sample axis B (one entry per
    env-timestep, all M agents together): own, rel, masks, actions,
    log_probs, advantages, returns.
    """
    logp, ent, values = net.evaluate_actions(batch["own"], batch["rel"], batch["masks"], batch["actions"])
    dtype = logp.data.dtype
    old = gt.tensor(batch["log_probs"], dtype=dtype)
    adv = gt.tensor(batch["advantages"], dtype=dtype)
    ret = gt.tensor(batch["returns"], dtype=dtype)
    ratio = gt.exp(gt.sub(logp, old))
    bad = ~np.isfinite(ratio.data)
    if bad.any():
        raise FloatingPointError(f"non-finite probability ratio at sample {tuple(int(i) for i in np.argwhere(bad)[0])}")
    surr1 = gt.mul(ratio, adv)
    surr2 = gt.mul(gt.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), adv)
    policy_loss = -gt.mean(gt.minimum(surr1, surr2))
    value_loss = gt.mean(gt.square(gt.sub(values, ret)))
    entropy = gt.mean(ent)
    total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    r = ratio.data
    return LossParts(
        total=total,
        policy=float(policy_loss.data),
        value=float(value_loss.data),
        entropy=float(entropy.data),
        clip_fraction=float(np.mean(np.abs(r - 1.0) > cfg.clip_eps)),
        approx_kl=float(np.mean(batch["log_probs"] - logp.data)),
    )


class Rollout:
    """Runs the current policy in a VecEnv and fills a RolloutBuffer.

    Owns the per-environment communication schedules so dropout resamples
    follow each episode's own step counter.
    """

    def __init__(
        self,
        venv: VecEnv,
        net: PolicyNet,
        comm_mode: comm_graph.CommMode,
        rng: np.random.Generator,
        dropout: list[comm_graph.DropoutSchedule] | None = None,
        bootstrap_timeouts: bool = True,
        reward_scaler: RewardScaler | None = None,
    ):
        self.venv = venv
        self.bootstrap_timeouts = bootstrap_timeouts
        self.reward_scaler = reward_scaler
        self.net = net
        self.comm_mode = comm_mode
        self.rng = rng
        self.dropout = dropout
        self.own, self.rel = venv.reset()
        self.episode_returns = np.zeros(len(venv))
        self.finished: list[dict] = []

    def masks(self) -> np.ndarray:
        mask = comm_graph.batch_adjacency(self.own[..., :2], self.comm_mode)
        if self.dropout is not None:
            for k, sched in enumerate(self.dropout):
                mask[k] = comm_graph.apply_dropout(mask[k], sched, self.venv.envs[k].state.step)
        return mask

    def collect(self, T: int) -> RolloutBuffer:
        N = len(self.venv)
        M, L = self.own.shape[1], self.rel.shape[2]
        buf = RolloutBuffer.empty(T, N, M, L)
        for t in range(T):
            mask = self.masks()
            out = self.net.forward(self.own, self.rel, mask)
            logits = out.logits.data.astype(np.float64)
            actions = sample_actions(logits, self.rng)
            logp_all = logits - logits.max(axis=-1, keepdims=True)
            logp_all = logp_all - np.log(np.exp(logp_all).sum(axis=-1, keepdims=True))
            buf.own[t], buf.rel[t], buf.masks[t] = self.own, self.rel, mask
            buf.actions[t] = actions
            buf.log_probs[t] = np.take_along_axis(logp_all, actions[..., None], axis=-1)[..., 0]
            buf.values[t] = out.values.data
            res = self.venv.step(actions)
            buf.raw_rewards[t] = res.rewards
            buf.rewards[t] = res.rewards if self.reward_scaler is None else self.reward_scaler(res.rewards, res.dones)
            buf.dones[t] = res.dones
            self.episode_returns += res.rewards
            if self.bootstrap_timeouts:
                buf.timeout_values[t] = self._timeout_values(res)
            for k in np.nonzero(res.dones)[0]:
                st = res.final_states[k]
                self.finished.append({"return": float(self.episode_returns[k]), "length": int(st.step), "success": bool(st.success)})
                self.episode_returns[k] = 0.0
                if self.dropout is not None:
                    self.dropout[k].reset()
            self.own, self.rel = res.own, res.rel
        buf.bootstrap_values = self.net.forward(self.own, self.rel, self.masks()).values.data.astype(np.float64)
        return buf

    def _timeout_values(self, res) -> np.ndarray:
        """V(final state) for envs whose episode just hit the horizon without success."""
        N, M = res.own.shape[:2]
        out = np.zeros((N, M))
        cut = [k for k in np.nonzero(res.dones)[0] if not res.final_states[k].success]
        if not cut:
            return out
        finals = [res.final_states[k] for k in cut]
        own = np.stack([np.concatenate([st.positions, st.velocities], axis=1) for st in finals])
        rel = np.stack([st.landmarks[None, :, :] - st.positions[:, None, :] for st in finals])
        mask = comm_graph.batch_adjacency(own[..., :2], self.comm_mode)
        if self.dropout is not None:
            for i, (k, st) in enumerate(zip(cut, finals)):
                mask[i] = comm_graph.apply_dropout(mask[i], self.dropout[k], st.step)
        out[cut] = self.net.forward(own, rel, mask).values.data
        return out

    def pop_finished(self) -> list[dict]:
        out, self.finished = self.finished, []
        return out


@dataclass
class IterationStats:
    mean_reward: float
    episodes: int
    success_rate: float
    mean_length: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    first_clip_fraction: float
    approx_kl: float
    grad_norm: float
    timesteps: int


def update(net: PolicyNet, opt: gt.AdamState, buf: RolloutBuffer, cfg: PpoConfig, rng: np.random.Generator) -> dict:
    """K epochs of shuffled minibatch updates over one rollout."""
    gae = gae_for_buffer(buf, cfg.gamma, cfg.lam)
    T, N = buf.rewards.shape
    flat = {
        "own": buf.own.reshape(T * N, *buf.own.shape[2:]),
        "rel": buf.rel.reshape(T * N, *buf.rel.shape[2:]),
        "masks": buf.masks.reshape(T * N, *buf.masks.shape[2:]),
        "actions": buf.actions.reshape(T * N, -1),
        "log_probs": buf.log_probs.reshape(T * N, -1),
        "advantages": gae.advantages.reshape(T * N, -1),
        "returns": gae.returns.reshape(T * N, -1),
    }
    n = T * N
    size = n // cfg.minibatches
    hist = {"policy": [], "value": [], "entropy": [], "clip_fraction": [], "approx_kl": [], "grad_norm": []}
    first_clip = None
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for b in range(cfg.minibatches):
            idx = order[b * size:(b + 1) * size]
            batch = {k: v[idx] for k, v in flat.items()}
            if cfg.normalize_advantages:
                batch["advantages"] = normalize(batch["advantages"])
            net.params.zero_grad()
            parts = ppo_loss(net, batch, cfg)
            gt.backward(parts.total)
            params = list(net.params)
            grads = [p.grad for p in params]
            norm = gt.global_norm(grads)
            for p, g in zip(params, gt.clip_global_norm(grads, cfg.grad_clip)):
                p.grad = g
            gt.adam_step(params, opt, cfg.lr)
            if first_clip is None:
                first_clip = parts.clip_fraction
            for key in ("policy", "value", "entropy", "clip_fraction", "approx_kl"):
                hist[key].append(getattr(parts, key))
            hist["grad_norm"].append(norm)
    out = {k: float(np.mean(v)) for k, v in hist.items()}
    out["first_clip_fraction"] = float(first_clip)
    return out


def train_iteration(rollout: Rollout, net: PolicyNet, opt: gt.AdamState, cfg: PpoConfig, rng: np.random.Generator) -> IterationStats:
    """Collect N x T steps with the current policy, then run the PPO update."""
    buf = rollout.collect(cfg.rollout_len)
    upd = update(net, opt, buf, cfg, rng)
    eps = rollout.pop_finished()
    return IterationStats(
        mean_reward=float(buf.raw_rewards.mean()),
        episodes=len(eps),
        success_rate=100.0 * float(np.mean([e["success"] for e in eps])) if eps else 0.0,
        mean_length=float(np.mean([e["length"] for e in eps])) if eps else float("nan"),
        policy_loss=upd["policy"],
        value_loss=upd["value"],
        entropy=upd["entropy"],
        clip_fraction=upd["clip_fraction"],
        first_clip_fraction=upd["first_clip_fraction"],
        approx_kl=upd["approx_kl"],
        grad_norm=upd["grad_norm"],
        timesteps=buf.rewards.size,
    )


def config_dict(cfg: PpoConfig) -> dict:
    return dataclasses.asdict(cfg)
