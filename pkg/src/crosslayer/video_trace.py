"""Packetized video traces with per-packet loss importance.

A packet's importance is the relative distortion its loss causes in the current
frame plus the distortion propagated to packets that reference it:

    U = D_cur * (1 + beta)
    D_cur = sum(w, intra MBs) + sum(w * sum(Q over blocks), inter MBs)
    Q = sqrt((mv_x / W)**2 + (mv_y / H)**2)

Real encoder output is not parsed; ``generate_trace`` synthesizes macroblock
statistics from seeded distributions, calibrated so each segment carries the
declared coding rate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

CIF_WIDTH = 352
CIF_HEIGHT = 288
FRAME_RATE = 30.0
FRAMES_PER_SEGMENT = 60
GOP_LENGTH = 30
MAX_REF_FRACTION = 4.0
MAX_PACKET_BYTES = 1200
MBS_PER_FRAME = (CIF_WIDTH // 16) * (CIF_HEIGHT // 16)


class MbMode(str, enum.Enum):
    INTRA4X4 = "intra4x4"
    INTRA16X16 = "intra16x16"
    INTER = "inter"

    @property
    def is_intra(self) -> bool:
        return self is not MbMode.INTER


MB_WEIGHTS = {MbMode.INTRA4X4: 0.8, MbMode.INTRA16X16: 0.6, MbMode.INTER: 0.2}


class TraceFormatError(ValueError):
    """Malformed trace file; ``line`` is the 1-based offending line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class TraceValidationError(ValueError):
    pass


@dataclass(frozen=True)
class MacroblockStat:
    mode: MbMode
    weight: float
    motion_vectors: tuple = ()

    def __post_init__(self):
        if not 0.0 < self.weight <= 1.0:
            raise ValueError(f"macroblock weight must be in (0, 1], got {self.weight}")
        if self.mode.is_intra and self.motion_vectors:
            raise ValueError("intra macroblocks carry no motion vectors")
        if not self.mode.is_intra and not self.motion_vectors:
            raise ValueError("inter macroblocks carry at least one motion vector")

    @classmethod
    def intra(cls, mode=MbMode.INTRA4X4, weight=None):
        mode = MbMode(mode)
        return cls(mode, MB_WEIGHTS[mode] if weight is None else weight)

    @classmethod
    def inter(cls, motion_vectors, weight=None):
        mvs = tuple((float(x), float(y)) for x, y in motion_vectors)
        return cls(MbMode.INTER, MB_WEIGHTS[MbMode.INTER] if weight is None else weight, mvs)


def motion_intensity(mv_x: float, mv_y: float, width: float, height: float) -> float:
    return math.sqrt((mv_x / width) ** 2 + (mv_y / height) ** 2)


def compute_importance(intra_mbs, inter_mbs, ref_fraction: float, width: float, height: float) -> float:
    if width <= 0 or height <= 0:
        raise ValueError(f"frame dimensions must be positive, got {width}x{height}")
    if ref_fraction < 0:
        raise ValueError(f"reference fraction must be >= 0, got {ref_fraction}")
    d_cur = 0.0
    for mb in intra_mbs:
        d_cur += mb.weight
    for mb in inter_mbs:
        d_cur += mb.weight * sum(motion_intensity(x, y, width, height) for x, y in mb.motion_vectors)
    return d_cur * (1.0 + ref_fraction)


@dataclass(frozen=True)
class VideoPacket:
    segment_index: int
    frame_index: int
    packet_index: int
    size: int
    importance: float
    ref_fraction: float
    client_id: int = 0
    intra_mbs: tuple = field(default=(), compare=False, repr=False)
    inter_mbs: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if self.size <= 0:
            raise TraceValidationError(f"packet {self.packet_index} has non-positive size {self.size}")
        if self.importance < 0:
            raise TraceValidationError(f"packet {self.packet_index} has negative importance")

    @classmethod
    def from_macroblocks(cls, segment_index, frame_index, packet_index, size, intra_mbs, inter_mbs,
                         ref_fraction, width=CIF_WIDTH, height=CIF_HEIGHT, client_id=0):
        intra_mbs, inter_mbs = tuple(intra_mbs), tuple(inter_mbs)
        u = compute_importance(intra_mbs, inter_mbs, ref_fraction, width, height)
        return cls(segment_index, frame_index, packet_index, size, u, ref_fraction, client_id,
                   intra_mbs, inter_mbs)


@dataclass(frozen=True)
class VideoSequence:
    name: str
    width: int
    height: int
    frame_rate: float
    segments: tuple          # tuple of tuples of VideoPacket
    segment_kbps: tuple

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    def frames_in_segment(self, seg: int) -> int:
        frames = {p.frame_index for p in self.segments[seg - 1]}
        return len(frames)

    @property
    def segment_duration(self) -> float:
        return self.frames_in_segment(1) / self.frame_rate if self.segments else 0.0

    def segment_bytes(self, seg: int) -> int:
        return sum(p.size for p in self.segments[seg - 1])

    def packets(self):
        for seg in self.segments:
            yield from seg

    @property
    def total_bytes(self) -> int:
        return sum(p.size for p in self.packets())


@dataclass(frozen=True)
class SequenceProfile:
    name: str
    segment_kbps: tuple
    motion_px: float          # typical motion-vector magnitude
    intra_rate: float         # mean fraction of intra MBs in P frames
    base_psnr: float | None = None


# segment coding rates of the eight CIF test sequences; base PSNR where a reference value exists
PROFILES = {
    "flower.cif": SequenceProfile("flower.cif", (1509.4, 1784.2, 1642.9, 1945.8, 1615.4, 1718.9, 1658.0, 1895.6), 10.0, 0.06),
    "coastguard.cif": SequenceProfile("coastguard.cif", (1316.7, 1302.7, 1051.4, 1000.2, 945.9, 1316.7, 1302.7, 1051.4), 8.0, 0.05),
    "news.cif": SequenceProfile("news.cif", (333.0, 387.5, 362.4, 356.6, 370.3, 333.0, 387.5, 362.4), 1.5, 0.03, 38.97),
    "highway.cif": SequenceProfile("highway.cif", (250.1, 286.9, 258.6, 265.6, 273.1, 252.9, 269.5, 370.2), 4.0, 0.03, 38.50),
    "soccer.cif": SequenceProfile("soccer.cif", (744.1, 816.9, 913.2, 773.8, 899.8, 744.1, 816.9, 913.2), 12.0, 0.10),
    "foreman.cif": SequenceProfile("foreman.cif", (470.6, 464.8, 589.3, 646.6, 600.8, 470.6, 464.8, 589.3), 6.0, 0.07, 37.03),
    "crew.cif": SequenceProfile("crew.cif", (618.2, 965.8, 1189.0, 918.5, 925.1, 618.2, 965.8, 1189.0), 9.0, 0.12, 37.49),
    "bus.cif": SequenceProfile("bus.cif", (1470.2, 1351.8, 1439.6, 1390.3, 1405.3, 1470.2, 1351.8, 1439.6), 11.0, 0.08),
}

DEFAULT_BASE_PSNR = 37.0


def resolve_profile(profile) -> SequenceProfile:
    if isinstance(profile, SequenceProfile):
        return profile
    if isinstance(profile, str):
        try:
            return PROFILES[profile]
        except KeyError:
            raise ValueError(f"unknown sequence profile {profile!r}; known: {sorted(PROFILES)}") from None
    if isinstance(profile, tuple) and len(profile) == 2 and isinstance(profile[0], str):
        name, rates = profile
    else:
        name, rates = "custom", profile
    rates = tuple(float(r) for r in rates)
    if not rates or any(r <= 0 for r in rates):
        raise ValueError("custom profile needs positive per-segment kbps values")
    return SequenceProfile(name, rates, 6.0, 0.06)


def _split_exact(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer parts >= 1 proportional to weights, summing to total (largest remainder)."""
    n = weights.size
    base = np.ones(n, dtype=np.int64)
    rest = total - n
    share = weights / weights.sum() * rest
    parts = np.floor(share).astype(np.int64)
    short = rest - int(parts.sum())
    if short:
        order = np.argsort(-(share - parts), kind="stable")
        parts[order[:short]] += 1
    return base + parts


def _packet_macroblocks(rng, n_mbs, intra_prob, motion_px):
    """Draw MB modes and motion vectors for one packet.

    Returns (n_intra4x4, n_intra16x16, blocks per inter MB, (n_blocks, 2) MVs).
    """
    n_intra = int((rng.random(n_mbs) < intra_prob).sum())
    n4 = int((rng.random(n_intra) < 0.7).sum())
    blocks = rng.choice(_PARTITIONS, size=n_mbs - n_intra, p=_PARTITION_P)
    mvs = np.round(rng.laplace(0.0, motion_px, size=(int(blocks.sum()), 2)) * 4.0) / 4.0  # quarter-pel
    return n4, n_intra - n4, blocks, mvs


_PARTITIONS = np.array([1, 2, 4, 8, 16])
_PARTITION_P = (0.45, 0.2, 0.2, 0.1, 0.05)


def _importance_from_draws(n4, n16, mvs, beta, width, height):
    d_cur = n4 * MB_WEIGHTS[MbMode.INTRA4X4] + n16 * MB_WEIGHTS[MbMode.INTRA16X16]
    if mvs.size:
        d_cur += MB_WEIGHTS[MbMode.INTER] * float(np.sqrt((mvs[:, 0] / width) ** 2 + (mvs[:, 1] / height) ** 2).sum())
    return d_cur * (1.0 + beta)


def generate_trace(seed: int, profile, client_id: int = 0, *, keep_macroblocks: bool = False,
                   width: int = CIF_WIDTH, height: int = CIF_HEIGHT) -> VideoSequence:
    """Synthesize a reproducible packet trace for a named or custom profile.

    Per-segment byte totals hit the declared rate exactly (kbps * 250 bytes per
    2 s segment). Every 30th frame is intra-only with a high reference fraction.
    Importance and reference fraction are quantized to 1e-6, the precision of
    the trace file, so save/load round-trips exactly.
    """
    prof = resolve_profile(profile)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, int(client_id), _name_key(prof.name)])
    seg_dur = FRAMES_PER_SEGMENT / FRAME_RATE
    segments = []
    frame_no = 0
    for s, kbps in enumerate(prof.segment_kbps, start=1):
        target = int(round(kbps * 1000.0 * seg_dur / 8.0))
        gop_pos = (np.arange(FRAMES_PER_SEGMENT) + frame_no) % GOP_LENGTH
        is_i = gop_pos == 0
        weights = np.where(is_i, rng.lognormal(np.log(6.0), 0.15, FRAMES_PER_SEGMENT),
                           rng.lognormal(0.0, 0.35, FRAMES_PER_SEGMENT))
        frame_bytes = _split_exact(target, weights)
        packets = []
        for i in range(FRAMES_PER_SEGMENT):
            frame_no += 1
            fb = int(frame_bytes[i])
            n_pk = max(1, math.ceil(fb / MAX_PACKET_BYTES))
            sizes = _split_exact(fb, rng.uniform(0.6, 1.4, n_pk)) if n_pk > 1 else np.array([fb])
            if is_i[i]:
                intra_prob = 1.0
                beta_frame = MAX_REF_FRACTION * rng.uniform(0.75, 1.0)
            else:
                intra_prob = float(np.clip(rng.beta(2.0, 2.0 / prof.intra_rate - 2.0), 0.0, 0.6))
                beta_frame = MAX_REF_FRACTION * (1.0 - gop_pos[i] / GOP_LENGTH) * rng.uniform(0.3, 0.7)
            for m, size in enumerate(sizes, start=1):
                size = int(size)
                n_mbs = max(1, round(MBS_PER_FRAME * size / fb))
                beta = round(min(MAX_REF_FRACTION, beta_frame * rng.uniform(0.8, 1.2)), 6)
                n4, n16, blocks, mvs = _packet_macroblocks(rng, n_mbs, intra_prob, prof.motion_px)
                if keep_macroblocks:
                    intra_mbs = [MacroblockStat.intra(MbMode.INTRA4X4)] * n4 + \
                                [MacroblockStat.intra(MbMode.INTRA16X16)] * n16
                    bounds = np.cumsum(blocks)[:-1]
                    inter_mbs = [MacroblockStat.inter(mv) for mv in np.split(mvs, bounds)] if blocks.size else []
                    u = compute_importance(intra_mbs, inter_mbs, beta, width, height)
                else:
                    intra_mbs, inter_mbs = (), ()
                    u = _importance_from_draws(n4, n16, mvs, beta, width, height)
                packets.append(VideoPacket(s, frame_no, m, size, round(u, 6), beta, client_id,
                                           tuple(intra_mbs), tuple(inter_mbs)))
        segments.append(tuple(packets))
    return VideoSequence(prof.name, width, height, FRAME_RATE, tuple(segments), prof.segment_kbps)


def _name_key(name: str) -> int:
    return sum((i + 1) * ord(c) for i, c in enumerate(name)) & 0xFFFFFFFF


@lru_cache(maxsize=256)
def cached_trace(seed: int, profile_name: str, client_id: int) -> VideoSequence:
    return generate_trace(seed, profile_name, client_id)


def save_trace(seq: VideoSequence, path) -> None:
    lines = [f"seq {seq.name} {seq.width} {seq.height} {seq.frame_rate:g}"]
    for s, kbps in enumerate(seq.segment_kbps, start=1):
        lines.append(f"rate {s} {kbps!r}")
    count = 0
    for pkt in seq.packets():
        lines.append(f"pkt {pkt.segment_index} {pkt.frame_index} {pkt.packet_index} {pkt.size} "
                     f"{pkt.importance:.6f} {pkt.ref_fraction:.6f}")
        count += 1
    lines.append(f"end {count}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_trace(path, client_id: int = 0) -> VideoSequence:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise TraceFormatError("empty trace file", 1)
    head = lines[0].split()
    if len(head) != 5 or head[0] != "seq":
        raise TraceFormatError("expected header 'seq <name> <W> <H> <fps>'", 1)
    try:
        name, width, height, fps = head[1], int(head[2]), int(head[3]), float(head[4])
    except ValueError as exc:
        raise TraceFormatError(f"bad header field ({exc})", 1) from None
    rates: dict[int, float] = {}
    by_seg: dict[int, list] = {}
    expected = None
    n_pkts = 0
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        if expected is not None:
            raise TraceFormatError("record after 'end'", lineno)
        kind = parts[0]
        try:
            if kind == "rate" and len(parts) == 3:
                rates[int(parts[1])] = float(parts[2])
            elif kind == "pkt" and len(parts) == 7:
                seg, frame, idx, size = (int(x) for x in parts[1:5])
                u, beta = float(parts[5]), float(parts[6])
                n_pkts += 1
                if size <= 0:
                    raise TraceValidationError(
                        f"line {lineno}: packet {idx} of frame {frame} (record {n_pkts}) has size {size}")
                by_seg.setdefault(seg, []).append(VideoPacket(seg, frame, idx, size, u, beta, client_id))
            elif kind == "end" and len(parts) == 2:
                expected = int(parts[1])
            else:
                raise TraceFormatError(f"malformed {kind!r} record", lineno)
        except TraceValidationError:
            raise
        except ValueError as exc:
            raise TraceFormatError(f"bad field in {kind!r} record ({exc})", lineno) from None
    if expected is None:
        raise TraceFormatError("truncated trace: missing 'end' record", len(lines))
    if expected != n_pkts:
        raise TraceFormatError(f"truncated trace: 'end' declares {expected} packets, found {n_pkts}", len(lines))
    n_seg = max(list(by_seg) + list(rates) + [0])
    segments = tuple(tuple(by_seg.get(s, ())) for s in range(1, n_seg + 1))
    kbps = tuple(rates.get(s, 0.0) for s in range(1, n_seg + 1))
    return VideoSequence(name, width, height, fps, segments, kbps)
