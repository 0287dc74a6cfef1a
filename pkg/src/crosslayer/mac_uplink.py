"""ACK-urgency and congestion-aware uplink RB allocation.

Uplink traffic is TCP ACKs, sent FIFO per client. Each ACK gets a priority
from how close its TCP packet is to the sender's RTO and from the sender's
congestion state; an RB goes to the client whose newly unlocked ACK prefix adds
the most priority.
"""

from __future__ import annotations

import bisect
from itertools import accumulate
from dataclasses import dataclass

import numpy as np

from .allocation import Allocation, build_allocation
from .channel import CQI_TO_MCS, RB_BYTES

EPS_TIME = 1e-6     # s, floor for the time left before RTO
EPS_BYTES = 1.0     # B, floor for the cwnd/ssthresh gap


@dataclass(frozen=True)
class PendingAck:
    client: int
    index: int
    size: int
    ts: float           # send time of the TCP packet this ACK answers
    priority: float = 0.0

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("ACK size must be positive")


@dataclass(frozen=True)
class UplinkConfig:
    delta: float = 1e6     # urgent-deadline branch
    beta_c: float = 1e3    # slow-start branch
    gamma: float = 1e-4    # congestion-avoidance branch

    def __post_init__(self):
        if not self.delta > self.beta_c > self.gamma > 0:
            raise ValueError("priority constants need delta > beta_c > gamma > 0")


def ack_deadline(rto: float, now: float, ts: float) -> float:
    """Seconds left before the RTO of the corresponding TCP packet fires (may be <= 0)."""
    return rto - (now - ts)


def ack_priority(d: float, th: float, cwnd: float, ssthresh: float, cfg: UplinkConfig = UplinkConfig()) -> float:
    if d < th:
        return cfg.delta / max(d, EPS_TIME)
    if cwnd < ssthresh:
        return cfg.beta_c / max(ssthresh - cwnd, EPS_BYTES)
    return cfg.gamma / max(cwnd - ssthresh, EPS_BYTES)


def playback_weight(rebuffer_events, k: int) -> float:
    """Laplace-smoothed share of rebuffering events, always inside (0, 1)."""
    events = list(rebuffer_events)
    return (events[k] + 1.0) / (sum(events) + len(events))


def scheduled_count(sizes, capacity: float) -> tuple[int, tuple]:
    """Longest FIFO prefix of ACK sizes fitting in ``capacity`` bytes and its tau flags."""
    total = 0
    z = 0
    for s in sizes:
        if total + s > capacity:
            break
        total += s
        z += 1
    return z, tuple(1 if i < z else 0 for i in range(len(sizes)))


class _AckQueue:
    """Prefix sums for one client's FIFO so utilities are O(log n)."""

    def __init__(self, sizes, priorities):
        self.size_cum = list(accumulate(float(s) for s in sizes))
        self.prio_cum = [0.0] + list(accumulate(float(p) for p in priorities))
        self.total = self.size_cum[-1] if self.size_cum else 0.0
        self.priorities = list(priorities)

    def served(self, capacity: float) -> int:
        return bisect.bisect_right(self.size_cum, capacity + 1e-9)

    def value(self, capacity: float) -> float:
        return self.prio_cum[self.served(capacity)]


def rb_utility(cqi_row, held_rbs, n: int, sizes, priorities) -> float:
    """Priority gained by adding RB ``n`` to a client's current RB set.

    Returns -inf when the extra RB would lower the client's capacity (a weaker
    RB forces a lower shared MCS), so such a grant is never chosen.
    """
    q = _AckQueue(sizes, priorities)
    held = list(held_rbs)
    before = _capacity([cqi_row[m] for m in held])
    after = _capacity([cqi_row[m] for m in held] + [cqi_row[n]])
    if after < before:
        return -np.inf
    return q.value(after) - q.value(before)


def _capacity(cqis) -> int:
    if not cqis:
        return 0
    return len(cqis) * RB_BYTES[CQI_TO_MCS[min(cqis)]]


def tu_allocate(grid, ack_sizes, ack_priorities) -> Allocation:
    """Greedy per-RB uplink allocation by utility.

    ``ack_sizes[k]`` / ``ack_priorities[k]`` list client k's pending ACKs in FIFO
    order. RBs are visited in index order and each goes to the active client
    with the largest utility. Zero-utility ties are broken toward the client
    whose next unserved ACK has the highest priority, then the lowest index. A
    client leaves the active set once its capacity covers all its pending ACK
    bytes.
    """
    values = np.asarray(getattr(grid, "values", grid))
    K, N = values.shape
    queues = [_AckQueue(s, p) for s, p in zip(ack_sizes, ack_priorities)]
    active = [k for k in range(K) if queues[k].total > 0]
    cqi = values.tolist()
    owner = [-1] * N
    count = [0] * K
    worst = [16] * K
    cap = [0] * K
    for n in range(N):
        if not active:
            break
        best = None
        for k in active:
            c = cqi[k][n]
            w = c if c < worst[k] else worst[k]
            new_cap = (count[k] + 1) * RB_BYTES[CQI_TO_MCS[w]]
            if new_cap < cap[k]:
                continue
            q = queues[k]
            util = q.value(new_cap) - q.value(cap[k])
            served = q.served(cap[k])
            head = q.priorities[served] if served < len(q.priorities) else 0.0
            key = (util, head, -k)
            if best is None or key > best[0]:
                best = (key, k, w, new_cap)
        if best is None:
            continue
        _, k, w, new_cap = best
        owner[n] = k
        count[k] += 1
        worst[k] = w
        cap[k] = new_cap
        if cap[k] >= queues[k].total:
            active.remove(k)
    return build_allocation(owner, values)
