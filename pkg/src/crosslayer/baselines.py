"""Reference schedulers: round robin, max C/I, proportional fair, M-LWDF.

They see only whether a queue is non-empty (plus throughput history or
head-of-line delay), never TCP state. Each client's MCS is still the one its
weakest assigned RB supports, so aggressive RB grabbing can cost capacity.
The same functions serve the uplink with ACK-byte queues.
"""

from __future__ import annotations

import math

import numpy as np

from .allocation import Allocation, build_allocation
from .channel import CQI_RB_BYTES

_RB_RATE = np.asarray(CQI_RB_BYTES, dtype=float)  # bytes per RB, indexed by CQI

PF_HORIZON_TTIS = 1000
EMA_FLOOR = 1.0                      # B/s
MLWDF_DELAY_TARGET = 0.5             # s
MLWDF_VIOLATION_PROB = 0.05


def _grid(grid) -> np.ndarray:
    return np.asarray(getattr(grid, "values", grid))


def _backlogged(queues) -> list[int]:
    return [k for k, q in enumerate(queues) if q > 0]


class RoundRobin:
    """Deals RBs one by one in cyclic client order; the cursor survives across TTIs."""

    def __init__(self):
        self.cursor = 0

    def allocate(self, grid, queues) -> Allocation:
        values = _grid(grid)
        K, N = values.shape
        ready = set(_backlogged(queues))
        owner = [-1] * N
        if not ready:
            return build_allocation(owner, values)
        k = self.cursor % K
        for n in range(N):
            while k not in ready:
                k = (k + 1) % K
            owner[n] = k
            k = (k + 1) % K
        self.cursor = k
        return build_allocation(owner, values)


def rr_allocate(grid, queues, state: RoundRobin | None = None) -> Allocation:
    return (state or RoundRobin()).allocate(grid, queues)


def maxci_allocate(grid, queues) -> Allocation:
    values = _grid(grid)
    K, N = values.shape
    ready = _backlogged(queues)
    owner = [-1] * N
    if ready:
        sub = values[ready]
        # argmax returns the first maximum, i.e. the lowest client index
        owner = [ready[i] for i in np.argmax(sub, axis=0)]
    return build_allocation(owner, values)


def _argmax_metric(values, queues, metric) -> Allocation:
    K, N = values.shape
    ready = _backlogged(queues)
    owner = [-1] * N
    if ready:
        m = metric[ready]
        fallback = np.argmax(values[ready], axis=0)
        best = np.argmax(m, axis=0)
        zero = m.max(axis=0) <= 0
        pick = np.where(zero, fallback, best)
        owner = [ready[i] for i in pick]
    return build_allocation(owner, values)


class ProportionalFair:
    """Per-RB argmax of instantaneous rate over EMA throughput."""

    def __init__(self, n_clients: int, tti: float = 1e-3, horizon: int = PF_HORIZON_TTIS):
        self.tti = tti
        self.horizon = horizon
        self.ema = np.full(n_clients, EMA_FLOOR)

    def allocate(self, grid, queues) -> Allocation:
        values = _grid(grid)
        rate = _RB_RATE[values] / self.tti
        return _argmax_metric(values, queues, rate / self.ema[:, None])

    def update(self, delivered_bytes) -> None:
        """Fold the bytes each client actually got this TTI into the EMA."""
        inst = np.asarray(delivered_bytes, dtype=float) / self.tti
        w = 1.0 / self.horizon
        self.ema = np.maximum((1 - w) * self.ema + w * inst, EMA_FLOOR)


def pf_allocate(grid, queues, ema_throughputs, tti: float = 1e-3) -> Allocation:
    values = _grid(grid)
    ema = np.maximum(np.asarray(ema_throughputs, dtype=float), EMA_FLOOR)
    rate = _RB_RATE[values] / tti
    return _argmax_metric(values, queues, rate / ema[:, None])


def mlwdf_weight(delay_target: float = MLWDF_DELAY_TARGET, prob: float = MLWDF_VIOLATION_PROB) -> float:
    return -math.log(prob) / delay_target


def mlwdf_allocate(grid, queues, hol_delays, ema_throughputs, tti: float = 1e-3) -> Allocation:
    values = _grid(grid)
    a = mlwdf_weight()
    ema = np.maximum(np.asarray(ema_throughputs, dtype=float), EMA_FLOOR)
    hol = np.asarray(hol_delays, dtype=float)
    rate = _RB_RATE[values] / tti
    prio = (a * hol / ema)[:, None] * rate
    return _argmax_metric(values, queues, prio)


class Mlwdf(ProportionalFair):
    def allocate(self, grid, queues, hol_delays=None) -> Allocation:
        if hol_delays is None:
            hol_delays = np.zeros(len(self.ema))
        return mlwdf_allocate(grid, queues, hol_delays, self.ema, self.tti)
