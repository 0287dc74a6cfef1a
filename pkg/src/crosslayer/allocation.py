"""One TTI's RB -> client assignment, shared by every scheduler."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import CQI_TO_MCS, NUM_MCS, RB_BYTES


@dataclass(frozen=True)
class Allocation:
    owner: np.ndarray      # (N,) client index per RB, -1 when unassigned
    mcs: np.ndarray        # (K,) shared MCS per client, 0 when it holds no RB
    capacity: np.ndarray   # (K,) bytes deliverable this TTI
    satisfied: frozenset = frozenset()

    @property
    def n_clients(self) -> int:
        return int(self.mcs.size)

    @property
    def n_rbs(self) -> int:
        return int(self.owner.size)

    def rbs_of(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.owner == k)

    def rb_counts(self) -> np.ndarray:
        counts = np.zeros(self.n_clients, dtype=np.int64)
        held = self.owner[self.owner >= 0]
        np.add.at(counts, held, 1)
        return counts

    def assignment_matrix(self) -> np.ndarray:
        """Binary a[k, n]."""
        a = np.zeros((self.n_clients, self.n_rbs), dtype=np.int8)
        for n, k in enumerate(self.owner):
            if k >= 0:
                a[k, n] = 1
        return a

    def mcs_matrix(self) -> np.ndarray:
        """One-hot b[k, j-1]; all-zero rows for clients without RBs."""
        b = np.zeros((self.n_clients, NUM_MCS), dtype=np.int8)
        for k, j in enumerate(self.mcs):
            if j > 0:
                b[k, j - 1] = 1
        return b

    @property
    def total_capacity(self) -> int:
        return int(self.capacity.sum())


def build_allocation(owner, grid_values, satisfied=()) -> Allocation:
    """Derive per-client MCS and capacity from an RB ownership vector."""
    K = grid_values.shape[0]
    own = owner.tolist() if isinstance(owner, np.ndarray) else list(owner)
    rows = grid_values.tolist() if isinstance(grid_values, np.ndarray) else grid_values
    worst = [16] * K
    counts = [0] * K
    for n, k in enumerate(own):
        if k >= 0:
            counts[k] += 1
            c = rows[k][n]
            if c < worst[k]:
                worst[k] = c
    mcs = [CQI_TO_MCS[worst[k]] if counts[k] else 0 for k in range(K)]
    cap = [counts[k] * RB_BYTES[mcs[k]] for k in range(K)]
    owner = np.array(own, dtype=np.int64)
    owner.flags.writeable = False
    return Allocation(owner, np.array(mcs, dtype=np.int64), np.array(cap, dtype=np.int64),
                      frozenset(satisfied))


def empty_allocation(n_clients: int, n_rbs: int) -> Allocation:
    return Allocation(np.full(n_rbs, -1, dtype=np.int64),
                      np.zeros(n_clients, dtype=np.int64),
                      np.zeros(n_clients, dtype=np.int64))


def allocation_violations(alloc: Allocation, grid_values) -> list[str]:
    """Ownership / single-MCS / capacity-consistency problems, empty when valid."""
    problems = []
    K, N = grid_values.shape
    if alloc.owner.shape != (N,) or alloc.mcs.shape != (K,):
        return [f"shape mismatch: owner {alloc.owner.shape}, mcs {alloc.mcs.shape}, grid {(K, N)}"]
    a = alloc.assignment_matrix()
    if np.any(a.sum(axis=0) > 1):
        problems.append("an RB has more than one owner")
    b = alloc.mcs_matrix()
    for k in range(K):
        rbs = np.flatnonzero(a[k])
        if rbs.size == 0:
            if b[k].sum() != 0 or alloc.capacity[k] != 0:
                problems.append(f"client {k} holds no RB but has an MCS or capacity")
            continue
        if b[k].sum() != 1:
            problems.append(f"client {k} has {b[k].sum()} MCS indicators")
        q = CQI_TO_MCS[int(grid_values[k, rbs].min())]
        if alloc.mcs[k] != q:
            problems.append(f"client {k} uses MCS {alloc.mcs[k]} but q(N_k) = {q}")
        if alloc.capacity[k] != rbs.size * RB_BYTES[q]:
            problems.append(f"client {k} capacity {alloc.capacity[k]} != {rbs.size} x r_{q}")
    return problems
