"""Autonomous packet drop at the transport ingress.

Before video packets are packaged into TCP segments, the sender estimates how
many bytes the client can still receive before its playback buffer (plus a
guard interval) runs out. If the queued video exceeds that, the cheapest set of
packets by importance that frees enough bytes is dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NO_DROP_LAMBDA = math.inf
FRONT_WIDTH = 4      # partial solutions kept per bucket in the coarse DP


@dataclass(frozen=True)
class ApdConfig:
    smoothing: float = 0.8         # weight of the latest rate sample
    history_window: int = 10       # rate samples averaged
    guard_time: float = 0.5        # seconds
    sample_ttis: int = 100         # TTIs aggregated into one rate sample
    cadence_s: float = 0.25        # periodic re-evaluation interval
    bucket_bytes: int = 64         # knapsack byte granularity

    def __post_init__(self):
        if not 0.0 < self.smoothing < 1.0:
            raise ValueError("smoothing must be in (0, 1)")
        if self.history_window < 1:
            raise ValueError("history_window must be >= 1")
        if self.guard_time < 0:
            raise ValueError("guard_time must be >= 0")
        if self.bucket_bytes < 1:
            raise ValueError("bucket_bytes must be >= 1")


@dataclass(frozen=True)
class QueueSnapshot:
    s_mac: float      # bytes waiting at MAC
    s_send: float     # bytes in the TCP send buffer, not yet handed to MAC
    s_vq: float       # bytes in the video queue (still droppable)
    t_k: float        # seconds of playable video already fully received
    recent_rates: tuple = ()

    def __post_init__(self):
        if min(self.s_mac, self.s_send, self.s_vq) < 0 or self.t_k < 0:
            raise ValueError("queue sizes and buffered time must be non-negative")


@dataclass(frozen=True)
class DropPlan:
    drop_flags: tuple
    dropped_bytes: int
    dropped_importance: float
    lam: float

    @property
    def n_dropped(self) -> int:
        return sum(self.drop_flags)

    @classmethod
    def none(cls, n: int, lam: float = NO_DROP_LAMBDA) -> "DropPlan":
        return cls((0,) * n, 0, 0.0, lam)


def estimate_rate(recent_rates, last_rate: float, cfg: ApdConfig = ApdConfig()) -> float:
    """Blend of the latest rate sample and the mean of the recent window (bytes/s)."""
    recent = list(recent_rates)[-cfg.history_window:]
    mean = sum(recent) / len(recent) if recent else last_rate
    return cfg.smoothing * last_rate + (1.0 - cfg.smoothing) * mean


def drop_budget(rate: float, snap: QueueSnapshot, cfg: ApdConfig = ApdConfig(),
                guard_time: float | None = None) -> tuple[float, float]:
    """Return (lambda, bytes to drop) for one client.

    lambda >= 1 (or an empty video queue) means everything queued can be carried
    in time and nothing is dropped.
    """
    g = cfg.guard_time if guard_time is None else guard_time
    if snap.s_vq <= 0:
        return NO_DROP_LAMBDA, 0.0
    affordable = rate * (snap.t_k + g)
    lam = (affordable - snap.s_mac - snap.s_send) / snap.s_vq
    if lam >= 1.0:
        return lam, 0.0
    return lam, max(0.0, (1.0 - lam) * snap.s_vq)


def _cover_dp(costs: np.ndarray, weights: np.ndarray, need: int) -> list[int] | None:
    """Min-cost subset with sum(weights) >= need.

    Suffix DP over items; ties prefer fewer items, then the earliest indices.
    Returns chosen indices or None when infeasible.
    """
    n = costs.size
    if need <= 0:
        return []
    if int(weights.sum()) < need:
        return None
    INF = math.inf
    best = np.full(need + 1, INF)
    cnt = np.zeros(need + 1, dtype=np.int64)
    best[0] = 0.0
    take = np.zeros((n, need + 1), dtype=bool)
    idx = np.arange(need + 1)
    for i in range(n - 1, -1, -1):
        w = int(weights[i])
        src = np.maximum(idx - w, 0)
        t_cost = best[src] + costs[i]
        t_cnt = cnt[src] + 1
        tol = np.where(np.isfinite(best), 1e-9 * np.maximum(1.0, np.abs(best)), 0.0)
        with np.errstate(invalid="ignore"):
            better = (t_cost < best - tol) | ((np.abs(t_cost - best) <= tol) & (t_cnt <= cnt))
        better &= np.isfinite(t_cost)
        take[i] = better
        best = np.where(better, t_cost, best)
        cnt = np.where(better, t_cnt, cnt)
    chosen = []
    c = need
    for i in range(n):
        if c <= 0:
            break
        if take[i, c]:
            chosen.append(i)
            c = max(0, c - int(weights[i]))
    return chosen if c <= 0 else None


def _cover_front(costs: np.ndarray, sizes: np.ndarray, need: int, bucket: int, width: int) -> list[int] | None:
    """Min-cost cover on a ``bucket``-byte grid that still tracks exact byte counts.

    Each grid cell keeps up to ``width`` non-dominated (cost, bytes) partial
    solutions, cheapest first; the last cell is capped at ``need`` so only cost
    matters there. Feasibility is judged on exact bytes, so the result always
    covers ``need``. With width 1 this is the plain bucketed DP.
    """
    top = need // bucket + 1
    # greedy cover by cost per byte: an upper bound used to prune hopeless states
    bound = 0.0
    got = 0
    for i in np.argsort(costs / sizes, kind="stable"):
        if got >= need:
            break
        bound += costs[i]
        got += sizes[i]
    bound += 1e-9 * max(1.0, bound)
    left = np.concatenate([np.cumsum(sizes[::-1])[::-1], [0]])   # bytes from item i on
    cost = np.zeros(1)
    nb = np.zeros(1, dtype=np.int64)
    layers = []
    for i in range(costs.size):
        c = np.concatenate([cost, cost + costs[i]])
        b = np.concatenate([nb, nb + sizes[i]])
        took = np.concatenate([np.zeros(cost.size, dtype=bool), np.ones(cost.size, dtype=bool)])
        parent = np.concatenate([np.arange(cost.size), np.arange(cost.size)])
        alive = (c <= bound) & (b + left[i + 1] >= need)
        c, b, took, parent = c[alive], b[alive], took[alive], parent[alive]
        if c.size == 0:
            # the width cap threw away every state that could still reach need
            return None
        cell = np.minimum(b // bucket, top)
        key = np.minimum(b, need)
        order = np.lexsort((took, -key, c, cell))
        cell_o = cell[order]
        first = np.ones(order.size, dtype=bool)
        first[1:] = cell_o[1:] != cell_o[:-1]
        gid = np.cumsum(first) - 1
        # keep an entry only if it beats every cheaper entry of its cell on bytes
        shifted = key[order] + gid * (need + 1)
        best_before = np.empty_like(shifted)
        best_before[0] = -1
        best_before[1:] = np.maximum.accumulate(shifted)[:-1]
        best_before[first] = -1
        keep = shifted > best_before
        kept = order[keep]
        g = gid[keep]
        rank = np.arange(kept.size) - np.searchsorted(g, g)
        kept = kept[rank < width]
        cost, nb = c[kept], b[kept]
        layers.append((parent[kept], took[kept]))
    feasible = np.flatnonzero(nb >= need)
    if feasible.size == 0:
        return None
    s = feasible[np.lexsort((-nb[feasible], cost[feasible]))[0]]
    chosen = []
    for i in range(costs.size - 1, -1, -1):
        parent, took = layers[i]
        if took[s]:
            chosen.append(i)
        s = parent[s]
    return sorted(chosen)


def _keep_dp(values: np.ndarray, weights: np.ndarray, cap: int) -> list[int]:
    """Max-value subset with sum(weights) <= cap (plain 0/1 knapsack); ties keep more items."""
    n = values.size
    best = np.zeros(cap + 1)
    cnt = np.zeros(cap + 1, dtype=np.int64)
    take = np.zeros((n, cap + 1), dtype=bool)
    for i in range(n - 1, -1, -1):
        w = int(weights[i])
        if w > cap:
            continue
        t_val = np.full(cap + 1, -np.inf)
        t_val[w:] = best[:cap + 1 - w] + values[i]
        t_cnt = np.zeros(cap + 1, dtype=np.int64)
        t_cnt[w:] = cnt[:cap + 1 - w] + 1
        tol = 1e-9 * np.maximum(1.0, np.abs(best))
        better = (t_val > best + tol) | ((np.abs(t_val - best) <= tol) & (t_cnt > cnt))
        take[i] = better
        best = np.where(better, t_val, best)
        cnt = np.where(better, t_cnt, cnt)
    kept, c = [], cap
    for i in range(n):
        if take[i, c]:
            kept.append(i)
            c -= int(weights[i])
    return kept


def select_drop_set(packets, s_drop: float, bucket: int = 64, lam: float = NO_DROP_LAMBDA) -> DropPlan:
    """Choose packets to drop: minimum total importance covering ``s_drop`` bytes.

    ``packets`` is a sequence of (importance, size) pairs. With ``bucket > 1``
    the DP table is indexed in ``bucket``-byte steps while candidate sets keep
    exact sizes, so any returned set still covers ``s_drop``. If no candidate
    survives the pruning, the complementary problem (keep the most importance
    within the bytes that may remain, kept sizes rounded up) is solved instead,
    which always covers.
    """
    pk = [(float(u), int(r)) for u, r in packets]
    n = len(pk)
    if n == 0 or s_drop <= 0:
        return DropPlan.none(n, lam)
    costs = np.array([u for u, _ in pk])
    sizes = np.array([r for _, r in pk], dtype=np.int64)
    total = int(sizes.sum())
    need_bytes = min(math.ceil(s_drop - 1e-9), total)
    if need_bytes >= total:
        chosen = list(range(n))
    elif bucket <= 1:
        chosen = _cover_dp(costs, sizes, need_bytes)
    else:
        chosen = _cover_front(costs, sizes, need_bytes, bucket, FRONT_WIDTH)
        if chosen is None:
            kept = set(_keep_dp(costs, -(-sizes // bucket), (total - need_bytes) // bucket))
            chosen = [i for i in range(n) if i not in kept]
    flags = [0] * n
    for i in chosen:
        flags[i] = 1
    return DropPlan(tuple(flags), int(sizes[chosen].sum()) if chosen else 0,
                    float(costs[chosen].sum()) if chosen else 0.0, lam)


def apply_apd(queue, snap: QueueSnapshot, rate: float, cfg: ApdConfig = ApdConfig(),
              guard_time: float | None = None):
    """Run one drop decision over the video queue.

    Returns (survivors in original order, DropPlan). Only packets still in the
    video queue are eligible; anything already packaged into TCP is out of reach.
    """
    queue = list(queue)
    lam, s_drop = drop_budget(rate, snap, cfg, guard_time)
    if s_drop <= 0:
        return queue, DropPlan.none(len(queue), lam)
    plan = select_drop_set([(p.importance, p.size) for p in queue], s_drop, cfg.bucket_bytes, lam)
    survivors = [p for p, f in zip(queue, plan.drop_flags) if not f]
    return survivors, plan
