"""2-D particle world with damped double-integrator agents and static landmarks."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from . import seeding
from .tasks import Task, make_task

# no-op, +x, -x, +y, -y
ACTION_ACCEL = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
NUM_ACTIONS = len(ACTION_ACCEL)


class EpisodeFinished(RuntimeError):
    """``step`` was called on an episode that is already done."""


@dataclass(frozen=True)
class WorldConfig:
    num_agents: int = 3
    num_landmarks: int = 3
    arena_half_width: float = 2.0
    dt: float = 0.1
    damping: float = 0.5
    horizon: int = 50
    seed: int = 0
    # landmarks are drawn from [-extent, extent]^2; None means the whole arena
    landmark_extent: float | None = None

    def __post_init__(self):
        if self.num_agents < 1 or self.num_landmarks < 1:
            raise ValueError("need at least one agent and one landmark")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must lie in [0, 1)")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.arena_half_width <= 0:
            raise ValueError("arena_half_width must be positive")

    @property
    def max_speed(self) -> float:
        """Terminal speed per axis under constant unit acceleration."""
        return self.dt / (1.0 - self.damping)


@dataclass
class EnvState:
    positions: np.ndarray  # (M, 2)
    velocities: np.ndarray  # (M, 2)
    landmarks: np.ndarray  # (L, 2)
    step: int = 0
    done: bool = False
    success: bool = False

    def copy(self) -> "EnvState":
        return dataclasses.replace(
            self, positions=self.positions.copy(), velocities=self.velocities.copy(), landmarks=self.landmarks.copy()
        )


@dataclass
class Observation:
    own_state: np.ndarray  # (4,) position then velocity
    relative_entities: np.ndarray  # (L, 2) landmark minus own position


def decode_actions(actions) -> np.ndarray:
    idx = np.asarray(actions, dtype=np.int64)
    if np.any((idx < 0) | (idx >= NUM_ACTIONS)):
        raise ValueError(f"action indices must be in 0..{NUM_ACTIONS - 1}")
    return ACTION_ACCEL[idx]


def reset(config: WorldConfig, rng: np.random.Generator) -> EnvState:
    hw = config.arena_half_width
    ext = hw if config.landmark_extent is None else config.landmark_extent
    positions = rng.uniform(-hw, hw, size=(config.num_agents, 2))
    landmarks = rng.uniform(-ext, ext, size=(config.num_landmarks, 2))
    return EnvState(positions=positions, velocities=np.zeros((config.num_agents, 2)), landmarks=landmarks)


def integrate(state: EnvState, actions, config: WorldConfig) -> EnvState:
    """Advance the dynamics one tick (velocity first, then position with the new velocity)."""
    accel = decode_actions(actions)
    if accel.shape != state.positions.shape:
        raise ValueError(f"expected {len(state.positions)} actions, got {accel.shape[0]}")
    vel = config.damping * state.velocities + accel * config.dt
    pos = state.positions + vel * config.dt
    return dataclasses.replace(state, positions=pos, velocities=vel, step=state.step + 1)


def step(state: EnvState, actions, config: WorldConfig, task: Task | None = None) -> EnvState:
    if state.done:
        raise EpisodeFinished("episode already finished; call reset")
    nxt = integrate(state, actions, config)
    nxt.success = bool(task.success(nxt)) if task is not None else False
    nxt.done = nxt.success or nxt.step >= config.horizon
    return nxt


def observe(state: EnvState) -> tuple[np.ndarray, np.ndarray]:
    """Per-agent local observations as arrays: own (M, 4) and relative landmarks (M, L, 2)."""
    own = np.concatenate([state.positions, state.velocities], axis=1)
    rel = state.landmarks[None, :, :] - state.positions[:, None, :]
    return own, rel


def observations(state: EnvState) -> list[Observation]:
    own, rel = observe(state)
    return [Observation(own[i], rel[i]) for i in range(len(own))]


class Env:
    """One environment instance bound to a task and its own random stream."""

    def __init__(self, config: WorldConfig, task: Task | str, rng: np.random.Generator | None = None):
        self.task = make_task(task) if isinstance(task, str) else task
        self.config = config
        self.rng = rng if rng is not None else seeding.stream(config.seed, "env.init", 0)
        self.state: EnvState | None = None

    def reset(self) -> EnvState:
        self.state = reset(self.config, self.rng)
        return self.state

    def step(self, actions) -> tuple[EnvState, float]:
        self.state = step(self.state, actions, self.config, self.task)
        return self.state, self.task.reward(self.state)

    def observe(self):
        return observe(self.state)


def world_config_for(task: Task, num_agents: int, arena_half_width: float, **kw) -> WorldConfig:
    return WorldConfig(
        num_agents=num_agents,
        num_landmarks=task.num_landmarks(num_agents),
        arena_half_width=arena_half_width,
        landmark_extent=task.landmark_extent(arena_half_width),
        **kw,
    )


@dataclass
class StepResult:
    own: np.ndarray  # (N, M, 4) observations after the step (after auto-reset if any)
    rel: np.ndarray  # (N, M, L, 2)
    rewards: np.ndarray  # (N,)
    dones: np.ndarray  # (N,) bool
    successes: np.ndarray  # (N,) bool
    lengths: np.ndarray  # (N,) step counter at the end of this transition
    final_states: list[EnvState | None] = field(default_factory=list)


class VecEnv:
    """N independent instances; env k draws from stream (seed, purpose, *stream_prefix, k)."""

    def __init__(
        self,
        config: WorldConfig,
        task: Task,
        n_envs: int,
        purpose: str = "env.init",
        auto_reset: bool = True,
        stream_prefix: tuple[int, ...] = (),
    ):
        self.config = config
        self.task = task
        self.auto_reset = auto_reset
        self.envs = [Env(config, task, seeding.stream(config.seed, purpose, *stream_prefix, k)) for k in range(n_envs)]

    def __len__(self) -> int:
        return len(self.envs)

    @property
    def states(self) -> list[EnvState]:
        return [e.state for e in self.envs]

    def reset(self) -> tuple[np.ndarray, np.ndarray]:
        for e in self.envs:
            e.reset()
        return self.observe()

    def observe(self) -> tuple[np.ndarray, np.ndarray]:
        obs = [e.observe() for e in self.envs]
        return np.stack([o[0] for o in obs]), np.stack([o[1] for o in obs])

    def step(self, actions: np.ndarray) -> StepResult:
        n = len(self.envs)
        rewards = np.zeros(n)
        dones = np.zeros(n, dtype=bool)
        succ = np.zeros(n, dtype=bool)
        lengths = np.zeros(n, dtype=np.int64)
        finals: list[EnvState | None] = [None] * n
        for k, e in enumerate(self.envs):
            st, r = e.step(actions[k])
            rewards[k], dones[k], succ[k], lengths[k] = r, st.done, st.success, st.step
            if st.done:
                finals[k] = st
                if self.auto_reset:
                    e.reset()
        own, rel = self.observe()
        return StepResult(own, rel, rewards, dones, succ, lengths, finals)


# ---------------------------------------------------------------------------
# trajectory export

TRAJECTORY_FIELDS = ("episode", "step", "kind", "index", "x", "y", "vx", "vy", "action", "reward")


class TrajectoryWriter:
    """CSV rows, one per (episode, step, agent); landmarks are written once per
    episode at step 0 with ``kind=landmark``."""

    def __init__(self, fh: IO[str]):
        self._w = csv.writer(fh)
        self._w.writerow(TRAJECTORY_FIELDS)

    def landmarks(self, episode: int, landmarks: np.ndarray) -> None:
        for i, (x, y) in enumerate(landmarks):
            self._w.writerow([episode, 0, "landmark", i, repr(float(x)), repr(float(y)), 0.0, 0.0, "", ""])

    def agents(self, episode: int, state: EnvState, actions: Sequence[int] | None, reward: float | None) -> None:
        for i in range(len(state.positions)):
            x, y = state.positions[i]
            vx, vy = state.velocities[i]
            a = "" if actions is None else int(actions[i])
            r = "" if reward is None else repr(float(reward))
            self._w.writerow([episode, state.step, "agent", i, repr(float(x)), repr(float(y)), repr(float(vx)), repr(float(vy)), a, r])


def read_trajectory(rows: Iterable[dict]) -> dict[int, dict]:
    """Group parsed CSV rows into ``{episode: {"landmarks": {i: (x, y)}, "agents": {i: [(step, x, y)]}}}``."""
    episodes: dict[int, dict] = {}
    for n, row in enumerate(rows, start=2):
        try:
            ep = int(row["episode"])
            kind = row["kind"]
            idx = int(row["index"])
            x, y = float(row["x"]), float(row["y"])
            st = int(row["step"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed trajectory row {n}: {exc}") from exc
        if not (np.isfinite(x) and np.isfinite(y)):
            raise ValueError(f"malformed trajectory row {n}: non-finite coordinate")
        ep_data = episodes.setdefault(ep, {"landmarks": {}, "agents": {}})
        if kind == "landmark":
            ep_data["landmarks"][idx] = (x, y)
        elif kind == "agent":
            ep_data["agents"].setdefault(idx, []).append((st, x, y))
        else:
            raise ValueError(f"malformed trajectory row {n}: unknown kind {kind!r}")
    for ep_data in episodes.values():
        for trail in ep_data["agents"].values():
            trail.sort()
    return episodes
