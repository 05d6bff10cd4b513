"""Independent reference implementations used to check the package.

Nothing here imports the code under test except for the tensor types
needed to feed the finite-difference checker.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


_PERMS: dict[int, np.ndarray] = {}


def brute_force_assignment(cost: np.ndarray) -> tuple[float, tuple[int, ...]]:
    """Minimum total over all permutations; returns (cost, perm) with perm[row] = col.

    Totals are screened with a vectorised float sum, then every near-minimal
    candidate is re-summed with ``math.fsum`` so the result is correctly rounded.
    """
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    if n not in _PERMS:
        _PERMS[n] = np.array(list(itertools.permutations(range(n))), dtype=np.int64).reshape(-1, n)
    perms = _PERMS[n]
    rough = cost[np.arange(n), perms].sum(axis=1)
    near = np.nonzero(rough <= rough.min() + 1e-9 * (1.0 + abs(rough.min())))[0]
    best, best_perm = math.inf, None
    for k in near:
        total = math.fsum(cost[r, perms[k, r]] for r in range(n))
        if total < best:
            best, best_perm = total, tuple(int(c) for c in perms[k])
    return best, best_perm


def perm_cost(cost: np.ndarray, perm) -> float:
    return math.fsum(cost[r, perm[r]] for r in range(len(perm)))


def gae_double_sum(rewards, values, gamma, lam, bootstrap=0.0):
    """A_t = sum_l (gamma*lam)^l delta_{t+l} over one episode, evaluated term by term.

    ``values`` has one entry per step; ``bootstrap`` is V(s_T) (0 when the
    episode terminated).
    """
    T = len(rewards)
    v = list(values) + [bootstrap]
    deltas = [rewards[t] + gamma * v[t + 1] - v[t] for t in range(T)]
    adv = []
    for t in range(T):
        adv.append(sum((gamma * lam) ** l * deltas[t + l] for l in range(T - t)))
    return np.array(adv)


def central_difference(f, arrays, h=1e-5):
    """Numerical gradient of scalar ``f()`` with respect to each array, perturbed in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f()
            a[i] = old - h
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def softmax(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


# -- reachability ceilings ---------------------------------------------------
#
# With one-axis unit thrust per step, the L1 speed s = |vx| + |vy| obeys
# s' <= damping * s + dt, so the L1 distance covered in H steps is at most the
# sum of that bound sequence times dt. Constant thrust along one axis attains it.


def l1_reach(horizon: int, dt: float, damping: float) -> float:
    s = total = 0.0
    for _ in range(horizon):
        s = damping * s + dt
        total += s * dt
    return total


def coverage_ceiling(num_agents, half_width, reach, threshold=0.1, samples=100_000, seed=0):
    """Monte Carlo upper bound on coverage success for any policy.

    An episode is counted feasible when some agent-to-landmark matching has every
    start within L1 distance reach + threshold*sqrt(2) of its landmark, or when two
    landmarks lie close enough (2 * threshold) that one agent could cover both.
    Returns (rate, standard error).
    """
    rng = np.random.default_rng(seed)
    m = num_agents
    agents = rng.uniform(-half_width, half_width, (samples, m, 2))
    marks = rng.uniform(-half_width, half_width, (samples, m, 2))
    l1 = np.abs(agents[:, :, None, :] - marks[:, None, :, :]).sum(-1)
    ok = l1 <= reach + threshold * math.sqrt(2)
    feasible = np.zeros(samples, bool)
    rows = np.arange(m)
    for perm in itertools.permutations(range(m)):
        feasible |= ok[:, rows, list(perm)].all(axis=1)
    gaps = np.linalg.norm(marks[:, :, None, :] - marks[:, None, :, :], axis=-1)
    gaps[:, rows, rows] = np.inf
    feasible |= (gaps <= 2 * threshold).any(axis=(1, 2))
    p = float(feasible.mean())
    return p, math.sqrt(max(p * (1 - p), 1.0 / samples) / samples)


def formation_ceiling(num_agents, half_width, reach, radius=0.5, tolerance=0.05, samples=100_000, seed=0):
    """Upper bound on formation success: every agent must reach the ring around the centre."""
    rng = np.random.default_rng(seed)
    agents = rng.uniform(-half_width, half_width, (samples, num_agents, 2))
    centre = rng.uniform(-half_width / 2, half_width / 2, (samples, 1, 2))
    d = np.linalg.norm(agents - centre, axis=-1)
    # L2 displacement is bounded by the L1 reach
    feasible = (np.abs(d - radius) <= reach + tolerance).all(axis=1)
    p = float(feasible.mean())
    return p, math.sqrt(max(p * (1 - p), 1.0 / samples) / samples)


def min_distance_floor(num_agents, half_width, reach, samples=100_000, seed=0):
    """Lower bound on the expected mean (over landmarks) nearest-agent distance at episode end."""
    rng = np.random.default_rng(seed)
    agents = rng.uniform(-half_width, half_width, (samples, num_agents, 2))
    marks = rng.uniform(-half_width, half_width, (samples, num_agents, 2))
    d = np.linalg.norm(agents[:, :, None, :] - marks[:, None, :, :], axis=-1).min(axis=1)
    return float(np.maximum(d - reach, 0.0).mean())
