"""Per-TTI simulation of HAS video over one LTE cell.

Each client streams one trace over its own TCP flow. Per TTI the engine steps
the channels, issues segment requests, runs packet dropping at the video-queue
ingress, packages video into TCP segments, schedules and drains the downlink
MAC queues, turns arrivals into ACKs, schedules the uplink, feeds ACKs back to
TCP, checks retransmission timers and advances playback.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import baselines
from .apd import QueueSnapshot, apply_apd, estimate_rate
from .channel import CQI_RB_BYTES, CqiProcess, profile_means
from .config import SimConfig
from .mac_downlink import capacity_requirement, estimate_subpackets, td_allocate
from .mac_uplink import EPS_BYTES, EPS_TIME, playback_weight, tu_allocate
from .tcp import Mode, TcpReceiver, TcpSender
from .video_trace import DEFAULT_BASE_PSNR, PROFILES as VIDEO_PROFILES, cached_trace

PSNR_SLOPE = 0.15


def estimate_psnr(base_psnr: float, qr: float) -> float:
    """Map quality retention to a PSNR estimate: linear, 15% loss at QR = 0."""
    if not 0.0 <= qr <= 1.0:
        raise ValueError("QR must be in [0, 1]")
    return base_psnr - PSNR_SLOPE * (1.0 - qr) * base_psnr


class _MacPacket:
    __slots__ = ("seq", "size", "ts", "left", "total", "enq")

    def __init__(self, seq, size, ts, total, enq):
        self.seq, self.size, self.ts = seq, size, ts
        self.left = self.total = total
        self.enq = enq


class _Ack:
    __slots__ = ("ack_no", "left", "st", "ts", "enq")

    def __init__(self, ack_no, size, st, ts, enq):
        self.ack_no, self.left, self.st, self.ts, self.enq = ack_no, size, st, ts, enq


class ClientSession:
    """Everything the engine tracks for one client, server side and player side."""

    def __init__(self, k: int, cfg: SimConfig, seq_name: str):
        self.k = k
        self.seq_name = seq_name
        self.trace = cached_trace(cfg.trace_seed, seq_name, k)
        prof = VIDEO_PROFILES[seq_name]
        self.base_psnr = prof.base_psnr if prof.base_psnr is not None else DEFAULT_BASE_PSNR
        self.n_seg = self.trace.n_segments
        self.seg_frames = [self.trace.frames_in_segment(s) for s in range(1, self.n_seg + 1)]
        self.seg_last_frame = [max(p.frame_index for p in seg) for seg in self.trace.segments]
        self.total_frames = sum(self.seg_frames)
        self.fps = self.trace.frame_rate
        self.tcp = TcpSender(cfg.mss, cfg.initial_window, cfg.initial_ssthresh,
                             cfg.rto_init, cfg.rto_min, cfg.rto_max)
        self.rx = TcpReceiver()
        # video queue and TCP stream
        self.vq: deque = deque()
        self.vq_bytes = 0
        self.stream_end = 0
        self.frame_end: dict[int, int] = {}    # stream offset closing each resolved frame
        self.frame_left: dict[int, int] = {}   # packets per frame still in the video queue
        self.next_frame = self.trace.segments[0][0].frame_index if self.n_seg else 1
        self.next_seg = 1            # next segment to request
        self.request_at = None       # TTI the pending request reaches the server
        self.outstanding = None      # segment requested and not yet complete
        self.ready = 0               # segments fully received, in order
        # MAC queues
        self.dlq: deque = deque()
        self.dl_bytes = 0
        self.ulq: deque = deque()
        self.ul_bytes = 0
        self.nb_hist: deque = deque(maxlen=cfg.protocol.cqi_window)
        self.cqi_hist: deque = deque(maxlen=cfg.protocol.cqi_window)
        self.fb_hist: deque = deque(maxlen=cfg.protocol.ack_window)   # A / T per ACK
        # playback
        self.state = "startup"
        self.played = 0.0
        self.playable = 0            # complete frames, in order
        self.stall_start = None
        self.startup_delay = None
        self.stalls: list = []       # (start, end) seconds
        # APD inputs and counters
        self.rate_hist: deque = deque(maxlen=cfg.apd.history_window)
        self.last_rx = 0
        self.last_sample = 0
        self.busy = 0                # TTIs with data pending since the last rate sample
        self.generated = 0
        self.total_u = 0.0
        self.dropped_u = 0.0
        self.dropped_bytes = 0
        self.dropped_pkts = 0
        self.mac_drops = 0
        self.wire_drops = 0

    @property
    def t_k(self) -> float:
        return max(0.0, self.playable - self.played) / self.fps

    @property
    def segments_buffered(self) -> float:
        return max(0.0, self.playable - self.played) / self.seg_frames[0]


@dataclass
class MetricsReport:
    config_hash: str
    seed: int
    duration_s: float
    dl_sched: str
    ul_sched: str
    apd: bool
    system_kbps: float = 0.0
    total_rebuffer_s: float = 0.0
    rebuffer_events: int = 0
    mean_qr: float = 1.0
    mean_psnr_db: float = 0.0
    apd_dropped_packets: int = 0
    conservation_ok: bool = True
    phantom_violations: int = 0
    clients: list = field(default_factory=list)
    tcp_trace: list = field(default_factory=list, repr=False)
    metrics: list = field(default_factory=list, repr=False)
    schedule_log: list = field(default_factory=list, repr=False)

    def to_json_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k not in ("tcp_trace", "metrics", "schedule_log")}

    def summary(self) -> str:
        return (f"system {self.system_kbps:.1f} kbps, rebuffering {self.total_rebuffer_s:.3f} s, "
                f"mean QR {self.mean_qr:.4f}")


def _make_sched(name: str, k: int, tti: float):
    if name == "rr":
        return baselines.RoundRobin()
    if name == "pf":
        return baselines.ProportionalFair(k, tti)
    if name == "mlwdf":
        return baselines.Mlwdf(k, tti)
    return None


class Simulation:
    def __init__(self, cfg: SimConfig, trace_level: str = "summary"):
        self.cfg = cfg.validate()
        self.trace_level = trace_level
        K = cfg.n_clients
        ss = np.random.SeedSequence([int(cfg.seed) & 0xFFFFFFFF, 0xC0FFEE])
        dl_ss, ul_ss, loss_ss = ss.spawn(3)
        means = profile_means(cfg.channel_profile, K)
        ul_means = profile_means(cfg.ul_channel_profile or cfg.channel_profile, K)
        self.dl_chan = CqiProcess(means, cfg.dl_rbs, np.random.default_rng(dl_ss), cfg.stay_prob, cfg.cqi_spread)
        self.ul_chan = CqiProcess(ul_means, cfg.ul_rbs, np.random.default_rng(ul_ss), cfg.stay_prob, cfg.cqi_spread)
        self.loss_rng = np.random.default_rng(loss_ss)
        self.clients = [ClientSession(k, cfg, cfg.sequences[k % len(cfg.sequences)]) for k in range(K)]
        self.dl_state = _make_sched(cfg.dl_sched, K, cfg.tti)
        self.ul_state = _make_sched(cfg.ul_sched, K, cfg.tti)
        self.dl_transit: deque = deque()
        self.ul_transit: deque = deque()
        self.metrics: list = []
        self.tcp_trace: list = []
        self.schedule_log: list = []
        self.phantom = 0
        p = cfg.protocol
        self.mac_overhead = p.pdcp_packet - p.payload       # TCP/IP/PDCP headers per segment
        self.sub_header = p.subpacket_header
        self.apd_every = max(1, int(round(cfg.apd.cadence_s / cfg.tti)))
        self.sample_every = max(1, cfg.apd.sample_ttis)
        self.discard_ttis = int(math.ceil(cfg.mac_discard_ms * 1e-3 / cfg.tti))

    # -- video / APD -------------------------------------------------------
    def _issue_requests(self, t: int) -> None:
        cfg = self.cfg
        for c in self.clients:
            if c.request_at is not None and c.request_at <= t:
                seg = c.next_seg
                pkts = c.trace.segments[seg - 1]
                c.vq.extend(pkts)
                nbytes = sum(p.size for p in pkts)
                c.vq_bytes += nbytes
                c.generated += nbytes
                c.total_u += sum(p.importance for p in pkts)
                for p in pkts:
                    c.frame_left[p.frame_index] = c.frame_left.get(p.frame_index, 0) + 1
                c.outstanding = seg
                c.next_seg += 1
                c.request_at = None
                if cfg.apd_enabled:
                    self._run_apd(c, t)
            if (c.request_at is None and c.outstanding is None and c.next_seg <= c.n_seg
                    and c.segments_buffered < cfg.request_segments):
                c.request_at = t + cfg.latency_ttis

    def _run_apd(self, c: ClientSession, t: int) -> None:
        if not c.vq or not c.rate_hist:
            return
        rate = estimate_rate(c.rate_hist, c.rate_hist[-1], self.cfg.apd)
        snap = QueueSnapshot(c.dl_bytes, c.stream_end - c.tcp.snd_nxt, c.vq_bytes, c.t_k)
        before = c.vq
        survivors, plan = apply_apd(before, snap, rate, self.cfg.apd)
        if plan.n_dropped == 0:
            return
        c.vq = deque(survivors)
        c.vq_bytes -= plan.dropped_bytes
        c.dropped_bytes += plan.dropped_bytes
        c.dropped_u += plan.dropped_importance
        c.dropped_pkts += plan.n_dropped
        for p, gone in zip(before, plan.drop_flags):
            if gone:
                self._resolve(c, p.frame_index)
        self.metrics.append(("apd_drop_bytes", t, c.k, plan.dropped_bytes))
        self._check_complete(c, t)

    # -- TCP --------------------------------------------------------------
    def _enqueue_mac(self, c: ClientSession, seq: int, size: int, ts: float, t: int, per_rb: int) -> None:
        body = size + self.mac_overhead
        nb = -(-body // per_rb)
        total = body + nb * self.sub_header
        c.nb_hist.append(nb)
        if c.dl_bytes + total > self.cfg.mac_buffer_bytes:
            c.mac_drops += 1
            return
        c.dlq.append(_MacPacket(seq, size, ts, total, t))
        c.dl_bytes += total

    def _tcp_send(self, c: ClientSession, t: int, now: float, per_rb: int) -> None:
        tcp = c.tcp
        while True:
            seg = tcp.next_retransmission(now, force=tcp.mode is Mode.RECOVERY)
            if seg is None:
                break
            self._enqueue_mac(c, seg.seq, seg.size, now, t, per_rb)
        if tcp.retx_queue:
            return
        mss = tcp.mss
        while True:
            room = tcp.can_send()
            if room <= 0:
                break
            avail = c.stream_end - tcp.snd_nxt
            if avail < mss and c.vq:
                p = c.vq.popleft()
                c.vq_bytes -= p.size
                c.stream_end += p.size
                self._resolve(c, p.frame_index)
                continue
            if avail <= 0:
                break
            size = min(mss, avail)
            if size > room:
                break
            seg = tcp.send_new(size, now)
            self._enqueue_mac(c, seg.seq, seg.size, now, t, per_rb)

    # -- playback -----------------------------------------------------------
    @staticmethod
    def _resolve(c: ClientSession, frame: int) -> None:
        """One packet of ``frame`` left the video queue (packaged or dropped)."""
        c.frame_left[frame] -= 1
        if c.frame_left[frame] == 0:
            del c.frame_left[frame]
            c.frame_end[frame] = c.stream_end

    def _check_complete(self, c: ClientSession, t: int) -> None:
        while True:
            end = c.frame_end.get(c.next_frame)
            if end is None or c.rx.rcv_next < end:
                return
            del c.frame_end[c.next_frame]
            c.playable += 1
            if c.next_frame == c.seg_last_frame[c.ready]:
                c.ready += 1
                if c.outstanding == c.ready:
                    c.outstanding = None
            c.next_frame += 1

    def _playback(self, c: ClientSession, t: int, now: float) -> None:
        cfg = self.cfg
        if c.state == "startup":
            if c.ready >= min(cfg.startup_segments, c.n_seg):
                c.state = "playing"
                c.startup_delay = now
            else:
                return
        if c.state == "stalled":
            if c.playable > c.played:
                c.state = "playing"
                c.stalls.append((c.stall_start, now))
                self.metrics.append(("rebuffer_s", t, c.k, now - c.stall_start))
                c.stall_start = None
            else:
                return
        if c.state == "playing":
            c.played += c.fps * cfg.tti
            if c.played >= c.playable - 1e-9:
                c.played = float(c.playable)
                if c.playable >= c.total_frames:
                    c.state = "done"
                else:
                    c.state = "stalled"
                    c.stall_start = now + cfg.tti
                    self.metrics.append(("rebuffer_start", t, c.k, 1))

    # -- scheduling ---------------------------------------------------------
    def _dl_allocate(self, grid: np.ndarray, t: int, now: float):
        cfg = self.cfg
        queues = [c.dl_bytes for c in self.clients]
        name = cfg.dl_sched
        if name == "td":
            reqs = []
            p = cfg.protocol
            for c, row in zip(self.clients, grid):
                if c.dl_bytes <= 0:
                    reqs.append(0.0)
                elif not c.fb_hist:
                    reqs.append(float(p.mac_bytes(1)))   # cold start: one packet per TTI
                else:
                    rt = sum(c.fb_hist) / len(c.fb_hist)
                    f = sum(c.cqi_hist) / len(c.cqi_hist)
                    nb_mean = sum(c.nb_hist) / len(c.nb_hist) if c.nb_hist else 1.0
                    nb = estimate_subpackets(max(1.0, nb_mean), max(1.0, f), max(1.0, c.cqi_hist[-1]))
                    reqs.append(capacity_requirement(rt, p, nb))
            return td_allocate(grid, reqs, queues)
        if name == "maxci":
            return baselines.maxci_allocate(grid, queues)
        if name == "mlwdf":
            hol = [now - c.dlq[0].enq * cfg.tti if c.dlq else 0.0 for c in self.clients]
            return self.dl_state.allocate(grid, queues, hol)
        return self.dl_state.allocate(grid, queues)

    def _ul_allocate(self, grid: np.ndarray, t: int, now: float):
        cfg = self.cfg
        queues = [c.ul_bytes for c in self.clients]
        name = cfg.ul_sched
        if name == "tu":
            events = [len(c.stalls) + (c.state == "stalled") for c in self.clients]
            sizes, prios = [], []
            u = cfg.uplink
            for c in self.clients:
                if not c.ulq:
                    sizes.append(())
                    prios.append(())
                    continue
                tcp = c.tcp
                th = playback_weight(events, c.k) * tcp.rto
                cwnd, ssth = tcp.cwnd, tcp.ssthresh
                if cwnd < ssth:
                    calm = u.beta_c / max(ssth - cwnd, EPS_BYTES)
                else:
                    calm = u.gamma / max(cwnd - ssth, EPS_BYTES)
                ps = []
                for a in c.ulq:
                    d = tcp.rto - (now - a.ts)
                    ps.append(u.delta / max(d, EPS_TIME) if d < th else calm)
                sizes.append([a.left for a in c.ulq])
                prios.append(ps)
            return tu_allocate(grid, sizes, prios)
        if name == "td":
            return td_allocate(grid, [0.0] * len(queues), queues)
        if name == "maxci":
            return baselines.maxci_allocate(grid, queues)
        if name == "mlwdf":
            hol = [now - c.ulq[0].enq if c.ulq else 0.0 for c in self.clients]
            return self.ul_state.allocate(grid, queues, hol)
        return self.ul_state.allocate(grid, queues)

    # -- main loop ----------------------------------------------------------
    def run(self) -> MetricsReport:
        cfg = self.cfg
        tti = cfg.tti
        lat = cfg.latency_ttis
        A = cfg.protocol.ack_size
        trace_on = self.trace_level == "trace"
        clients = self.clients
        rb_bytes = CQI_RB_BYTES
        for t in range(cfg.n_ttis):
            now = t * tti
            dl_grid = self.dl_chan.step().values
            ul_grid = self.ul_chan.step().values
            dl_mean = dl_grid.mean(axis=1).tolist()

            # (2) segment requests, (3) periodic drop check
            self._issue_requests(t)
            if cfg.apd_enabled and t % self.apd_every == 0 and t > 0:
                for c in clients:
                    self._run_apd(c, t)

            # (4) TCP packaging into the MAC queues, plus MAC discard timer
            for c, cq in zip(clients, dl_mean):
                c.cqi_hist.append(cq)
                self._tcp_send(c, t, now, rb_bytes[int(round(cq))])
                q = c.dlq
                while q and q[0].left == q[0].total and t - q[0].enq > self.discard_ttis:
                    c.dl_bytes -= q.popleft().total
                    c.mac_drops += 1

            # (5) downlink
            alloc = self._dl_allocate(dl_grid, t, now)
            cap = alloc.capacity.tolist()
            served = [0] * len(clients)
            for c in clients:
                budget = cap[c.k]
                q = c.dlq
                while budget > 0 and q:
                    head = q[0]
                    take = head.left if head.left <= budget else budget
                    head.left -= take
                    budget -= take
                    served[c.k] += take
                    if head.left == 0:
                        q.popleft()
                        if cfg.wire_loss and self.loss_rng.random() < cfg.wire_loss:
                            c.wire_drops += 1
                        else:
                            self.dl_transit.append((t + lat, c.k, head.seq, head.size, now + tti, head.ts))
                c.dl_bytes -= served[c.k]
                if served[c.k] > cap[c.k]:
                    self.phantom += 1
                if trace_on and cap[c.k]:
                    self.schedule_log.append(f"dl {t} {c.k} {int((alloc.owner == c.k).sum())} {int(alloc.mcs[c.k])} {served[c.k]}")
            if self.dl_state is not None and hasattr(self.dl_state, "update"):
                self.dl_state.update(served)

            # (6) arrivals at clients -> ACKs
            tr = self.dl_transit
            while tr and tr[0][0] <= t:
                _, k, seq, size, st, ts = tr.popleft()
                c = clients[k]
                ack_no = c.rx.on_segment(seq, size)
                c.ulq.append(_Ack(ack_no, A, st, ts, now))
                c.ul_bytes += A
                self._check_complete(c, t)

            # (7) uplink and ACK arrivals at the sender
            if any(c.ulq for c in clients):
                ualloc = self._ul_allocate(ul_grid, t, now)
                ucap = ualloc.capacity.tolist()
                userved = [0] * len(clients)
                for c in clients:
                    budget = ucap[c.k]
                    q = c.ulq
                    sent = 0
                    while budget > 0 and q:
                        head = q[0]
                        take = head.left if head.left <= budget else budget
                        head.left -= take
                        budget -= take
                        userved[c.k] += take
                        if head.left == 0:
                            q.popleft()
                            sent += 1
                            self.ul_transit.append((t + lat, c.k, head.ack_no, head.st))
                    c.ul_bytes -= userved[c.k]
                    if trace_on and ucap[c.k]:
                        self.schedule_log.append(f"ul {t} {c.k} {int((ualloc.owner == c.k).sum())} {sent} {userved[c.k]}")
                if self.ul_state is not None and hasattr(self.ul_state, "update"):
                    self.ul_state.update(userved)
            elif self.ul_state is not None and hasattr(self.ul_state, "update"):
                self.ul_state.update([0] * len(clients))
            ut = self.ul_transit
            while ut and ut[0][0] <= t:
                _, k, ack_no, st = ut.popleft()
                c = clients[k]
                c.tcp.on_ack(ack_no, now)
                c.fb_hist.append(A / (now - st))

            # (8) retransmission timers
            for c in clients:
                if c.tcp.timed_out(now):
                    c.tcp.on_timeout(now)
                    self.metrics.append(("rto_timeout", t, c.k, round(c.tcp.rto, 6)))

            # (9) playback
            for c in clients:
                self._playback(c, t, now)

            # (10) sampling; the drop estimator only counts TTIs with data pending
            for c in clients:
                if c.rx.rcv_next < c.stream_end or c.vq:
                    c.busy += 1
                    if c.busy == self.sample_every:
                        c.rate_hist.append((c.rx.rcv_next - c.last_rx) / (c.busy * tti))
                        c.last_rx = c.rx.rcv_next
                        c.busy = 0
                else:
                    c.last_rx = c.rx.rcv_next
            if (t + 1) % self.sample_every == 0:
                span = self.sample_every * tti
                for c in clients:
                    got = c.rx.rcv_next - c.last_sample
                    c.last_sample = c.rx.rcv_next
                    self.metrics.append(("rx_rate_Bps", t, c.k, got / span))
                    self.metrics.append(("buffer_s", t, c.k, round(c.t_k, 6)))
            if t % 10 == 0:
                for c in clients:
                    self.tcp_trace.append((t, c.k, round(c.tcp.cwnd, 3), round(c.tcp.ssthresh, 3)))
        return self._report()

    def _report(self) -> MetricsReport:
        cfg = self.cfg
        end = cfg.n_ttis * cfg.tti
        rep = MetricsReport(cfg.config_hash(), cfg.seed, end, cfg.dl_sched, cfg.ul_sched, cfg.apd_enabled)
        ok = True
        qrs, psnrs = [], []
        for c in self.clients:
            stalls = list(c.stalls)
            if c.state == "stalled":
                stalls.append((c.stall_start, max(end, c.stall_start)))
            rebuf = sum(b - a for a, b in stalls)
            qr = 1.0 - c.dropped_u / c.total_u if c.total_u > 0 else 1.0
            qr = float(min(1.0, max(0.0, qr)))
            psnr = estimate_psnr(c.base_psnr, qr)
            kbps = c.rx.rcv_next * 8 / end / 1000 if end > 0 else 0.0
            # generated = dropped + still in video queue + packaged into the TCP stream
            balanced = c.generated == c.dropped_bytes + c.vq_bytes + c.stream_end and c.rx.rcv_next <= c.stream_end
            ok &= balanced
            qrs.append(qr)
            psnrs.append(psnr)
            rep.clients.append({
                "client": c.k, "sequence": c.seq_name, "throughput_kbps": kbps,
                "rebuffer_events": len(stalls), "rebuffer_s": rebuf,
                "startup_delay_s": c.startup_delay, "frames_played": int(c.played),
                "qr": qr, "base_psnr_db": c.base_psnr, "psnr_db": psnr,
                "generated_bytes": c.generated, "delivered_bytes": c.rx.rcv_next,
                "apd_dropped_bytes": c.dropped_bytes, "apd_dropped_packets": c.dropped_pkts,
                "queued_bytes": c.vq_bytes + c.stream_end - c.rx.rcv_next,
                "timeouts": c.tcp.timeouts, "fast_retransmits": c.tcp.fast_retransmits,
                "mac_drops": c.mac_drops, "wire_drops": c.wire_drops,
            })
        rep.system_kbps = sum(d["throughput_kbps"] for d in rep.clients)
        rep.total_rebuffer_s = sum(d["rebuffer_s"] for d in rep.clients)
        rep.rebuffer_events = sum(d["rebuffer_events"] for d in rep.clients)
        rep.mean_qr = float(np.mean(qrs)) if qrs else 1.0
        rep.mean_psnr_db = float(np.mean(psnrs)) if psnrs else 0.0
        rep.apd_dropped_packets = sum(d["apd_dropped_packets"] for d in rep.clients)
        rep.conservation_ok = bool(ok)
        rep.phantom_violations = self.phantom
        rep.tcp_trace = self.tcp_trace
        rep.metrics = self.metrics
        rep.schedule_log = self.schedule_log
        return rep


def run(cfg: SimConfig, trace_level: str = "summary") -> MetricsReport:
    return Simulation(cfg, trace_level).run()
