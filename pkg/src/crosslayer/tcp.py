"""Simplified NewReno sender: the congestion signals the MAC schedulers read.

Sequence numbers are byte offsets. The receiver sends one cumulative ACK per
TCP packet it receives. Loss only happens where the simulator drops a packet
(MAC queue overflow/expiry, optional Bernoulli wire loss).
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

MSS = 1460
INITIAL_WINDOW = 2 * MSS
INITIAL_SSTHRESH = 65535
RTO_INIT = 0.5
RTO_MIN = 0.2
RTO_MAX = 4.0


class Mode(str, enum.Enum):
    SLOW_START = "slow_start"
    CONGESTION_AVOIDANCE = "congestion_avoidance"
    RECOVERY = "recovery"


@dataclass
class Segment:
    seq: int
    size: int
    send_time: float
    retransmitted: bool = False


@dataclass(frozen=True)
class TcpSnapshot:
    cwnd: float
    ssthresh: float
    rto: float
    send_times: tuple
    mode: Mode
    bytes_in_flight: int


class TcpSender:
    """Per-client sender state, mutated only by the simulator's event loop."""

    def __init__(self, mss: int = MSS, initial_window: int = INITIAL_WINDOW,
                 ssthresh: float = INITIAL_SSTHRESH, rto_init: float = RTO_INIT,
                 rto_min: float = RTO_MIN, rto_max: float = RTO_MAX):
        self.mss = mss
        self.cwnd = float(initial_window)
        self.ssthresh = float(max(ssthresh, 2 * mss))
        self.rto_min, self.rto_max = rto_min, rto_max
        self.rto = min(max(rto_init, rto_min), rto_max)
        self.srtt = None
        self.rttvar = None
        self.mode = Mode.SLOW_START
        self.snd_una = 0          # oldest unacknowledged byte
        self.snd_nxt = 0          # next new byte to send
        self.ledger: deque[Segment] = deque()   # in flight, ascending seq
        self._flight = 0
        self.retx_queue: deque[Segment] = deque()
        self.dup_acks = 0
        self.recover = 0
        self.timeouts = 0
        self.fast_retransmits = 0

    # -- window -------------------------------------------------------------
    @property
    def bytes_in_flight(self) -> int:
        return self._flight

    def can_send(self) -> int:
        return max(0, int(self.cwnd - self._flight))

    # -- sending ------------------------------------------------------------
    def send_new(self, size: int, now: float) -> Segment:
        seg = Segment(self.snd_nxt, size, now)
        self.snd_nxt += size
        self.ledger.append(seg)
        self._flight += size
        return seg

    def next_retransmission(self, now: float, force: bool = False) -> Segment | None:
        """Pop the next queued retransmission if the window (or ``force``) allows."""
        while self.retx_queue and self.retx_queue[0].seq + self.retx_queue[0].size <= self.snd_una:
            self.retx_queue.popleft()
        if not self.retx_queue:
            return None
        seg = self.retx_queue[0]
        if not force and seg.size > self.can_send():
            return None
        self.retx_queue.popleft()
        seg = Segment(seg.seq, seg.size, now, True)
        self._insert(seg)
        return seg

    def _insert(self, seg: Segment) -> None:
        for i, s in enumerate(self.ledger):
            if s.seq == seg.seq:
                self.ledger[i] = seg
                self._flight += seg.size - s.size
                return
            if s.seq > seg.seq:
                self.ledger.insert(i, seg)
                self._flight += seg.size
                return
        self.ledger.append(seg)
        self._flight += seg.size

    # -- feedback -----------------------------------------------------------
    def on_ack(self, ack_no: int, now: float) -> int:
        """Process one cumulative ACK; returns newly acknowledged bytes."""
        if ack_no <= self.snd_una:
            if self.ledger and ack_no == self.snd_una:
                self._on_dup_ack(now)
            return 0
        acked = ack_no - self.snd_una
        self.snd_una = ack_no
        self.dup_acks = 0
        sample = None
        while self.ledger and self.ledger[0].seq + self.ledger[0].size <= ack_no:
            seg = self.ledger.popleft()
            self._flight -= seg.size
            if not seg.retransmitted:
                sample = now - seg.send_time
        if self.ledger and self.ledger[0].seq < ack_no:
            # partially covered head: trim it
            head = self.ledger[0]
            cut = ack_no - head.seq
            self.ledger[0] = Segment(ack_no, head.size - cut, head.send_time, head.retransmitted)
            self._flight -= cut
        if sample is not None:
            self._rtt_sample(sample)
        if self.mode is Mode.RECOVERY:
            if ack_no >= self.recover:
                self.cwnd = self.ssthresh
                self.mode = Mode.CONGESTION_AVOIDANCE
            elif self.ledger:
                # partial ACK: the next hole is lost too
                self._queue_retransmit(self.ledger[0], front=True)
            return acked
        if self.mode is Mode.SLOW_START:
            self.cwnd += acked
            if self.cwnd >= self.ssthresh:
                self.mode = Mode.CONGESTION_AVOIDANCE
        else:
            self.cwnd += self.mss * acked / self.cwnd
        return acked

    def _on_dup_ack(self, now: float) -> None:
        self.dup_acks += 1
        if self.dup_acks == 3 and self.mode is not Mode.RECOVERY:
            flight = self.bytes_in_flight
            self.ssthresh = max(flight / 2.0, 2.0 * self.mss)
            self.cwnd = self.ssthresh
            self.mode = Mode.RECOVERY
            self.recover = self.snd_nxt
            self.fast_retransmits += 1
            self._queue_retransmit(self.ledger[0], front=True)

    def _queue_retransmit(self, seg: Segment, front: bool = False) -> None:
        if any(s.seq == seg.seq for s in self.retx_queue):
            return
        if front:
            self.retx_queue.appendleft(seg)
        else:
            self.retx_queue.append(seg)

    def _rtt_sample(self, r: float) -> None:
        if self.srtt is None:
            self.srtt, self.rttvar = r, r / 2.0
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - r)
            self.srtt = 0.875 * self.srtt + 0.125 * r
        self.rto = min(max(self.srtt + 4.0 * self.rttvar, self.rto_min), self.rto_max)

    # -- timers -------------------------------------------------------------
    def oldest_send_time(self) -> float | None:
        return self.ledger[0].send_time if self.ledger else None

    def timed_out(self, now: float) -> bool:
        return bool(self.ledger) and now - self.ledger[0].send_time >= self.rto - 1e-12

    def on_timeout(self, now: float) -> None:
        """RTO expiry: collapse the window and go back to the oldest unacked byte."""
        if not self.ledger:
            return
        flight = self.bytes_in_flight
        self.ssthresh = max(flight / 2.0, 2.0 * self.mss)
        self.cwnd = float(self.mss)
        self.mode = Mode.SLOW_START
        self.rto = min(self.rto * 2.0, self.rto_max)
        self.dup_acks = 0
        self.timeouts += 1
        # everything outstanding is presumed lost and resent in order, oldest first
        pending = {s.seq: s for s in self.retx_queue}
        for s in self.ledger:
            pending[s.seq] = s
        self.ledger.clear()
        self._flight = 0
        self.retx_queue = deque(sorted(pending.values(), key=lambda s: s.seq))

    # -- extraction ---------------------------------------------------------
    def snapshot(self) -> TcpSnapshot:
        return TcpSnapshot(self.cwnd, self.ssthresh, self.rto,
                           tuple(s.send_time for s in self.ledger), self.mode, self.bytes_in_flight)


def extract_state(sender: TcpSender, now: float | None = None) -> TcpSnapshot:
    """Read-only view used by the MAC schedulers (cwnd, ssthresh, RTO, send times)."""
    return sender.snapshot()


class TcpReceiver:
    """Cumulative-ACK receiver with an out-of-order buffer."""

    def __init__(self):
        self.rcv_next = 0
        self.out_of_order: dict[int, int] = {}   # seq -> size

    def on_segment(self, seq: int, size: int) -> int:
        """Accept a segment; returns the cumulative ACK number to send."""
        end = seq + size
        if end <= self.rcv_next:
            return self.rcv_next
        if seq <= self.rcv_next:
            self.rcv_next = end
            while True:
                nxt = [s for s in self.out_of_order if s <= self.rcv_next]
                if not nxt:
                    break
                for s in nxt:
                    self.rcv_next = max(self.rcv_next, s + self.out_of_order.pop(s))
        else:
            prev = self.out_of_order.get(seq, 0)
            self.out_of_order[seq] = max(prev, size)
        return self.rcv_next
