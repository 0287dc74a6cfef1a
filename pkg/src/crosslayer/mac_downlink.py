"""TCP-state-aware downlink RB allocation.

The per-TTI capacity a client needs is derived from how fast its ACKs come
back: each ACK of A bytes returning after T seconds stands for one TCP payload
of P bytes, so the sustainable downlink rate is (A / T) / (A / P). Protocol
headers and MAC segmentation overhead are added on top, and the TD allocator
first satisfies those requirements with the best (client, RB) pairs, then
spends leftover RBs on throughput up to each client's MAC queue size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocation import Allocation, build_allocation, empty_allocation
from .channel import CQI_TO_MCS, RB_BYTES


@dataclass(frozen=True)
class AckSample:
    ack_index: int
    st: float   # last MAC sub-packet of the TCP packet left the eNodeB
    re: float   # ACK reached the sender

    def __post_init__(self):
        if self.re <= self.st:
            raise ValueError("ACK must arrive after its TCP packet departed")

    @property
    def feedback_time(self) -> float:
        return self.re - self.st


@dataclass(frozen=True)
class ProtocolConfig:
    ack_size: int = 40
    payload: int = 1460
    tcp_header: int = 20
    ip_header: int = 20
    pdcp_header: int = 2
    rlc_header: int = 2
    mac_header: int = 2
    tti: float = 1e-3
    cqi_window: int = 10       # scheduling periods averaged for Nb / CQI history
    ack_window: int = 20       # ACK samples averaged for the feedback rate

    def __post_init__(self):
        fields = (self.ack_size, self.payload, self.tcp_header, self.ip_header, self.pdcp_header,
                  self.rlc_header, self.mac_header, self.tti, self.cqi_window, self.ack_window)
        if any(v <= 0 for v in fields):
            raise ValueError("protocol sizes, TTI and windows must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("ACK size must be smaller than the TCP payload")

    @property
    def alpha(self) -> float:
        return self.ack_size / self.payload

    @property
    def pdcp_packet(self) -> int:
        """One TCP packet after TCP/IP/PDCP headers (bytes entering RLC)."""
        return self.tcp_header + self.ip_header + self.pdcp_header + self.payload

    @property
    def subpacket_header(self) -> int:
        return self.rlc_header + self.mac_header

    def mac_bytes(self, n_subpackets: int) -> int:
        return self.pdcp_packet + n_subpackets * self.subpacket_header


def ack_feedback_rate(samples, ack_size: float) -> float | None:
    """Mean of A / T over the samples (bytes/s); None when there are no samples."""
    samples = list(samples)
    if not samples:
        return None
    return sum(ack_size / s.feedback_time for s in samples) / len(samples)


def capacity_requirement(rt: float, proto: ProtocolConfig, nb: int) -> float:
    """Bytes per TTI the client needs at MAC to keep its ACK clock running."""
    if nb < 1:
        raise ValueError("a TCP packet is split into at least one sub-packet")
    dr = rt / proto.alpha
    m = dr * (proto.pdcp_packet + nb * proto.subpacket_header) / proto.payload
    return m * proto.tti


def estimate_subpackets(nb_history_mean: float, cqi_history_mean: float, cqi_now: float) -> int:
    """Scale the recent sub-packet count by how much the channel changed."""
    if cqi_now < 1 or cqi_history_mean < 1:
        raise ValueError("CQI averages must be >= 1")
    return max(1, int(round(nb_history_mean * cqi_history_mean / cqi_now)))


def td_allocate(grid, requirements, queues) -> Allocation:
    """Two-phase greedy allocation.

    ``grid`` is a (K, N) CQI array (or CqiGrid), ``requirements`` the per-TTI
    capacity needs C_k and ``queues`` the MAC queue sizes J_k, both in bytes.

    Phase 1 repeatedly grants the best-CQI (client, RB) pair among clients whose
    requirement is not yet met; phase 2 hands remaining RBs to best-CQI pairs
    among satisfied clients still below their queue size. A grant that would not
    increase the client's capacity (the weaker RB drags the shared MCS down) is
    refused and the next-best pair is tried. Phase 1 only accepts such a grant
    when no unmet client has any other pair left. Ties go to the lowest client,
    then the lowest RB index.
    """
    values = np.asarray(getattr(grid, "values", grid))
    K, N = values.shape
    if K == 0 or N == 0:
        return empty_allocation(K, N)
    J = [float(j) for j in queues]
    C = [min(float(c), j) for c, j in zip(requirements, J)]
    cqi = values.tolist()
    live = [k for k in range(K) if J[k] > 0]
    # (k, n) pairs by descending CQI, then client, then RB; CQIs are fixed within a TTI
    flat = np.argsort(-values[live].ravel(), kind="stable")
    order = [(live[i // N], i % N) for i in flat.tolist()]

    owner = [-1] * N
    count = [0] * K
    worst = [16] * K
    cap = [0] * K

    pending = {k for k in range(K) if J[k] > 0 and C[k] > 0}          # phase-1 set
    satisfied = {k for k in range(K) if J[k] > 0 and C[k] <= 0}      # phase-2 set
    free = N

    def grant(active, regress=False):
        nonlocal free
        for k, n in order:
            if owner[n] >= 0 or k not in active:
                continue
            c = cqi[k][n]
            w = c if c < worst[k] else worst[k]
            new_cap = (count[k] + 1) * RB_BYTES[CQI_TO_MCS[w]]
            if new_cap <= cap[k] and not regress:
                continue
            owner[n] = k
            count[k] += 1
            worst[k] = w
            cap[k] = new_cap
            free -= 1
            return k
        return None

    while free and pending:
        k = grant(pending)
        if k is None:
            # every remaining pair would shrink capacity; an unmet client still
            # needs the RB, since enough lower-MCS RBs eventually cover it
            k = grant(pending, regress=True)
        if k is None:
            break
        if cap[k] >= C[k]:
            pending.discard(k)
            satisfied.add(k)
    met = set(satisfied)
    satisfied = {k for k in satisfied if cap[k] < J[k]}
    while free and satisfied:
        k = grant(satisfied)
        if k is None:
            break
        if cap[k] >= J[k]:
            satisfied.discard(k)
    return build_allocation(owner, values, met)
