"""Coverage, formation and line-control tasks.

Each task supplies a shared team reward, a goal predicate, and how many
landmarks it needs. Rewards are always <= 0 and reach 0 exactly at the
task's ideal configuration.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .env import EnvState

TWO_PI = 2.0 * math.pi


class TaskKind(str, enum.Enum):
    COVERAGE = "coverage"
    FORMATION = "formation"
    LINE = "line"


@dataclass(frozen=True)
class TaskConfig:
    kind: TaskKind = TaskKind.COVERAGE
    cover_threshold: float = 0.1
    formation_radius: float = 0.5
    radial_tolerance: float = 0.05
    angular_tolerance: float = 0.1
    distance_clip: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        for name in ("cover_threshold", "formation_radius", "radial_tolerance", "angular_tolerance", "distance_clip"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class Assignment:
    perm: tuple[int, ...]  # perm[landmark] = agent
    total_cost: float


@dataclass
class EpisodeMetrics:
    success: bool
    steps: int
    final_reward: float
    avg_min_distance: float | None = None


# ---------------------------------------------------------------------------
# linear sum assignment


def hungarian(cost) -> Assignment:
    """Minimum-cost perfect matching of a square cost matrix.

    Rows are agents and columns are landmarks; the result maps each landmark
    (column) to its agent (row). Shortest augmenting path with row/column
    potentials, O(n^3).
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"hungarian needs a square matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("hungarian: cost matrix has non-finite entries")
    n = c.shape[0]
    if n == 0:
        return Assignment((), 0.0)
    a = c.tolist()
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row matched to column j (1-based, 0 = free)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = a[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    perm = tuple(p[j] - 1 for j in range(1, n + 1))
    # correctly rounded, so the total does not depend on summation order
    total = math.fsum(a[r][col] for col, r in enumerate(perm))
    return Assignment(perm, total)


# ---------------------------------------------------------------------------
# helpers


def distance_matrix(points_a: np.ndarray, points_b: np.ndarray) -> np.ndarray:
    """``d[i, j] = ||a_i - b_j||``."""
    diff = points_a[:, None, :] - points_b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def matched_clipped_mean(agents: np.ndarray, targets: np.ndarray, clip_at: float) -> float:
    d = distance_matrix(agents, targets)
    match = hungarian(d)
    return float(np.mean([min(d[match.perm[l], l], clip_at) for l in range(len(targets))]))


def polar_gaps(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Consecutive circular angle gaps of ``points`` sorted by polar angle about ``center``.

    The gaps always sum to 2*pi; a single point yields one gap of 2*pi.
    """
    rel = points - center
    ang = np.sort(np.arctan2(rel[:, 1], rel[:, 0]))
    gaps = np.diff(ang)
    wrap = TWO_PI - (ang[-1] - ang[0])
    return np.append(gaps, wrap)


def line_targets(endpoints: np.ndarray, count: int) -> np.ndarray:
    """``count`` equally spaced points from ``endpoints[0]`` to ``endpoints[1]`` inclusive.

    With a single agent the target is the midpoint.
    """
    a, b = endpoints[0], endpoints[1]
    if count == 1:
        return ((a + b) / 2.0)[None, :]
    frac = np.arange(count) / (count - 1)
    return a[None, :] + frac[:, None] * (b - a)[None, :]


# ---------------------------------------------------------------------------
# tasks


class Task:
    kind: TaskKind

    def __init__(self, config: TaskConfig | None = None):
        self.config = config or TaskConfig(kind=self.kind)

    def num_landmarks(self, num_agents: int) -> int:
        raise NotImplementedError

    def landmark_extent(self, arena_half_width: float) -> float:
        """Half-width of the square landmarks are sampled from."""
        return arena_half_width

    def reward(self, state: "EnvState") -> float:
        raise NotImplementedError

    def success(self, state: "EnvState") -> bool:
        raise NotImplementedError

    def rewards(self, state: "EnvState") -> np.ndarray:
        """The shared reward repeated for every agent."""
        return np.full(len(state.positions), self.reward(state))


class CoverageTask(Task):
    kind = TaskKind.COVERAGE

    def num_landmarks(self, num_agents):
        return num_agents

    def reward(self, state):
        return -matched_clipped_mean(state.positions, state.landmarks, self.config.distance_clip)

    def success(self, state):
        d = distance_matrix(state.positions, state.landmarks)
        return bool(np.all(d.min(axis=0) <= self.config.cover_threshold))


class FormationTask(Task):
    kind = TaskKind.FORMATION

    def num_landmarks(self, num_agents):
        return 1

    def landmark_extent(self, arena_half_width):
        # keep the target circle inside the arena
        return arena_half_width / 2.0

    def reward(self, state):
        cfg = self.config
        center = state.landmarks[0]
        radii = np.linalg.norm(state.positions - center, axis=1)
        radial = np.minimum(np.abs(radii - cfg.formation_radius), cfg.distance_clip).mean()
        target = TWO_PI / len(state.positions)
        angular = np.abs(polar_gaps(state.positions, center) - target).mean()
        return float(-radial - angular / math.pi)

    def success(self, state):
        cfg = self.config
        center = state.landmarks[0]
        radii = np.linalg.norm(state.positions - center, axis=1)
        if np.any(np.abs(radii - cfg.formation_radius) > cfg.radial_tolerance):
            return False
        target = TWO_PI / len(state.positions)
        return bool(np.all(np.abs(polar_gaps(state.positions, center) - target) <= cfg.angular_tolerance))


class LineTask(Task):
    """Spread agents evenly on the segment between two landmarks.

    Reward mirrors coverage: agents are matched to the equally spaced target
    points and the clipped mean matched distance is penalised.
    """

    kind = TaskKind.LINE

    def num_landmarks(self, num_agents):
        return 2

    def targets(self, state) -> np.ndarray:
        return line_targets(state.landmarks, len(state.positions))

    def reward(self, state):
        return -matched_clipped_mean(state.positions, self.targets(state), self.config.distance_clip)

    def success(self, state):
        d = distance_matrix(state.positions, self.targets(state))
        return bool(np.all(d.min(axis=0) <= self.config.cover_threshold))


_TASKS = {TaskKind.COVERAGE: CoverageTask, TaskKind.FORMATION: FormationTask, TaskKind.LINE: LineTask}


def make_task(config: TaskConfig | str) -> Task:
    if not isinstance(config, TaskConfig):
        config = TaskConfig(kind=TaskKind(config))
    return _TASKS[config.kind](config)


def avg_min_distance(state: "EnvState") -> float:
    """Mean over landmarks of the distance to the nearest agent (no matching, no clip)."""
    return float(distance_matrix(state.positions, state.landmarks).min(axis=0).mean())


def coverage_reward(state: "EnvState", config: TaskConfig | None = None) -> float:
    return CoverageTask(config).reward(state)


def coverage_success(state: "EnvState", config: TaskConfig | None = None) -> bool:
    return CoverageTask(config).success(state)


def formation_reward(state: "EnvState", config: TaskConfig | None = None) -> float:
    return FormationTask(config).reward(state)


def formation_success(state: "EnvState", config: TaskConfig | None = None) -> bool:
    return FormationTask(config).success(state)


def line_reward(state: "EnvState", config: TaskConfig | None = None) -> float:
    return LineTask(config).reward(state)


def line_success(state: "EnvState", config: TaskConfig | None = None) -> bool:
    return LineTask(config).success(state)

