"""Agent-agent connectivity masks and the dropout-communication schedule.

Agent-entity edges always exist and are not represented here; masks only
govern which agents attend to which other agents. A mask is a symmetric
boolean (M, M) array with a true diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CommMode:
    """Unrestricted (``radius is None``) or restricted to ``radius`` units."""

    radius: float | None = None

    def __post_init__(self):
        if self.radius is not None and not self.radius > 0:
            raise ValueError("communication radius must be positive")

    @property
    def restricted(self) -> bool:
        return self.radius is not None


UNRESTRICTED = CommMode()


def build_adjacency(positions: np.ndarray, mode: CommMode = UNRESTRICTED) -> np.ndarray:
    """Connectivity for one team; distance exactly ``radius`` counts as connected."""
    m = len(positions)
    if not mode.restricted:
        return np.ones((m, m), dtype=bool)
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    mask = dist <= mode.radius
    np.fill_diagonal(mask, True)
    return mask


def batch_adjacency(positions: np.ndarray, mode: CommMode = UNRESTRICTED) -> np.ndarray:
    """``build_adjacency`` over a leading batch axis: (N, M, 2) -> (N, M, M)."""
    n, m, _ = positions.shape
    if not mode.restricted:
        return np.ones((n, m, m), dtype=bool)
    diff = positions[:, :, None, :] - positions[:, None, :, :]
    mask = np.sqrt((diff * diff).sum(axis=-1)) <= mode.radius
    mask[:, np.arange(m), np.arange(m)] = True
    return mask


def undirected_edges(mask: np.ndarray) -> np.ndarray:
    """Connected off-diagonal pairs ``(i, j)`` with ``i < j``, shape (E, 2)."""
    i, j = np.nonzero(np.triu(mask, k=1))
    return np.stack([i, j], axis=1)


@dataclass
class DropoutSchedule:
    """Drops a fraction of agent-agent edges, redrawing the set every
    ``resample_period`` steps of the episode.

    The dropped set is stored as sampled fractions rather than concrete edge
    ids, so the same draw applies when the underlying connectivity changes
    between resamples (restricted mode): at every step ``floor(p * E)`` of the
    currently connected edges are removed, chosen by their rank under a
    random priority fixed at the last resample.
    """

    rng: np.random.Generator
    drop_fraction: float = 0.5
    resample_period: int = 10
    _priority: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 <= self.drop_fraction < 1:
            raise ValueError("drop_fraction must lie in [0, 1)")
        if self.resample_period < 1:
            raise ValueError("resample_period must be >= 1")

    def reset(self) -> None:
        self._priority = None

    def _resample(self, m: int) -> None:
        # one random priority per unordered pair; lower priority drops first
        self._priority = self.rng.permutation(m * m).reshape(m, m).astype(np.int64)

    def dropped_edges(self, mask: np.ndarray, step: int) -> np.ndarray:
        m = mask.shape[0]
        if self._priority is None or step % self.resample_period == 0 or self._priority.shape[0] != m:
            self._resample(m)
        edges = undirected_edges(mask)
        k = int(np.floor(self.drop_fraction * len(edges)))
        if k == 0:
            return edges[:0]
        prio = self._priority[edges[:, 0], edges[:, 1]]
        return edges[np.argsort(prio, kind="stable")[:k]]


def apply_dropout(mask: np.ndarray, schedule: DropoutSchedule, step: int) -> np.ndarray:
    out = mask.copy()
    drop = schedule.dropped_edges(mask, step)
    out[drop[:, 0], drop[:, 1]] = False
    out[drop[:, 1], drop[:, 0]] = False
    return out


def connected_components(mask: np.ndarray) -> list[list[int]]:
    """Partition of agents into components, each sorted, ordered by smallest member."""
    m = mask.shape[0]
    parent = list(range(m))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in zip(*np.nonzero(mask)):
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for a in range(m):
        groups.setdefault(find(a), []).append(a)
    return sorted(groups.values(), key=lambda g: g[0])


def graph_distances(mask: np.ndarray) -> np.ndarray:
    """All-pairs hop counts by BFS; unreachable pairs get -1."""
    m = mask.shape[0]
    out = np.full((m, m), -1, dtype=np.int64)
    for s in range(m):
        out[s, s] = 0
        frontier = [s]
        while frontier:
            nxt = []
            for a in frontier:
                for b in np.nonzero(mask[a])[0]:
                    if out[s, b] < 0:
                        out[s, b] = out[s, a] + 1
                        nxt.append(int(b))
            frontier = nxt
    return out
