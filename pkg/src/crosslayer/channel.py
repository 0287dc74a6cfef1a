"""Per-RB channel quality process and the CQI -> MCS -> bytes-per-RB mapping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CQI_MIN = 1
CQI_MAX = 15

# resource elements per RB per TTI (12 subcarriers x 14 symbols, no control overhead)
RE_PER_RB = 168


@dataclass(frozen=True)
class McsLevel:
    index: int
    modulation: str
    bits_per_symbol: int
    code_rate: float

    @property
    def bytes_per_rb(self) -> int:
        return math.floor(RE_PER_RB * self.bits_per_symbol * self.code_rate / 8)


MCS_LEVELS = (
    McsLevel(1, "QPSK", 2, 0.5),
    McsLevel(2, "QPSK", 2, 0.75),
    McsLevel(3, "16QAM", 4, 0.5),
    McsLevel(4, "16QAM", 4, 0.75),
    McsLevel(5, "64QAM", 6, 0.5),
    McsLevel(6, "64QAM", 6, 0.75),
)
NUM_MCS = len(MCS_LEVELS)

# index 0 unused so RB_BYTES[j] is the per-RB capacity of MCS j
RB_BYTES = (0,) + tuple(m.bytes_per_rb for m in MCS_LEVELS)

# upper CQI bound of each MCS level: 1-2, 3-5, 6-7, 8-10, 11-12, 13-15
_CQI_UPPER = (2, 5, 7, 10, 12, 15)
CQI_TO_MCS = (0,) + tuple(
    next(j + 1 for j, hi in enumerate(_CQI_UPPER) if cqi <= hi)
    for cqi in range(CQI_MIN, CQI_MAX + 1)
)
# bytes one RB carries when the client is served at that RB's own best MCS
CQI_RB_BYTES = tuple(RB_BYTES[j] for j in CQI_TO_MCS)


def rb_capacity(mcs: int) -> int:
    """Bytes one RB carries in one TTI at MCS level ``mcs`` (1..6)."""
    if not 1 <= mcs <= NUM_MCS:
        raise ValueError(f"MCS level must be in [1, {NUM_MCS}], got {mcs}")
    return RB_BYTES[mcs]


def cqi_to_max_mcs(cqi: int) -> int:
    if not CQI_MIN <= cqi <= CQI_MAX:
        raise ValueError(f"CQI must be in [{CQI_MIN}, {CQI_MAX}], got {cqi}")
    return CQI_TO_MCS[cqi]


def max_mcs(cqis) -> int:
    """Highest MCS usable on every RB of the set; the weakest RB gates it."""
    cqis = list(cqis)
    if not cqis:
        raise ValueError("MCS is undefined for an empty RB set")
    return cqi_to_max_mcs(int(min(cqis)))


def set_capacity(cqis) -> int:
    """Bytes per TTI of an RB set served at its shared MCS; 0 for an empty set."""
    cqis = list(cqis)
    if not cqis:
        return 0
    return len(cqis) * RB_BYTES[CQI_TO_MCS[int(min(cqis))]]


@dataclass(frozen=True)
class CqiGrid:
    tti: int
    values: np.ndarray  # (K, N) int, read-only

    @property
    def shape(self):
        return self.values.shape


PROFILES = {
    # per-client mean CQI, cycled when there are more clients than entries
    "good": (12.0, 10.0, 13.0, 9.0, 11.0, 12.0, 10.0, 11.0),
    "average": (9.0, 7.0, 11.0, 6.0, 8.0, 10.0, 7.0, 9.0),
    "poor": (5.0, 3.0, 6.0, 3.0, 4.0, 5.0, 3.0, 4.0),
}


def profile_means(profile, n_clients: int) -> np.ndarray:
    if isinstance(profile, str):
        if profile not in PROFILES:
            raise ValueError(f"unknown channel profile {profile!r}; known: {sorted(PROFILES)}")
        base = PROFILES[profile]
    else:
        base = tuple(float(x) for x in profile)
        if not base:
            raise ValueError("channel profile needs at least one mean CQI")
    return np.array([base[k % len(base)] for k in range(n_clients)], dtype=float)


class CqiProcess:
    """Independent birth-death chains on the CQI of every (client, RB) cell.

    Each TTI a cell keeps its value with probability ``stay_prob`` and otherwise
    moves one step up or down with equal probability. Each client's chain lives on
    a band centred on its mean CQI and reflects at the band edges, so the walk is
    doubly stochastic on the band and its stationary mean equals the configured
    mean. The band half-width is ``spread``, shrunk where needed to stay in [1, 15].
    """

    def __init__(self, mean_cqi, n_rbs: int, rng: np.random.Generator,
                 stay_prob: float = 0.9, spread: float = 3.0):
        mean_cqi = np.asarray(mean_cqi, dtype=float)
        if mean_cqi.ndim != 1 or mean_cqi.size == 0:
            raise ValueError("mean_cqi must be a non-empty 1-d sequence")
        if np.any(mean_cqi < CQI_MIN) or np.any(mean_cqi > CQI_MAX):
            raise ValueError("mean CQI values must lie in [1, 15]")
        if not 0.0 <= stay_prob <= 1.0:
            raise ValueError("stay_prob must be in [0, 1]")
        if n_rbs < 1:
            raise ValueError("need at least one RB")
        self.rng = rng
        self.stay_prob = float(stay_prob)
        self.n_clients = mean_cqi.size
        self.n_rbs = int(n_rbs)
        half = np.minimum.reduce([np.full_like(mean_cqi, spread), mean_cqi - CQI_MIN, CQI_MAX - mean_cqi])
        lo = np.ceil(mean_cqi - half - 1e-9).astype(np.int64)
        hi = np.floor(mean_cqi + half + 1e-9).astype(np.int64)
        self.lo = lo[:, None]
        self.hi = hi[:, None]
        width = (hi - lo + 1)[:, None]
        start = lo[:, None] + np.floor(rng.random((self.n_clients, self.n_rbs)) * width).astype(np.int64)
        self.state = start
        self.tti = -1

    def step(self) -> CqiGrid:
        self.tti += 1
        if self.tti > 0 and self.stay_prob < 1.0:
            u = self.rng.random(self.state.shape)
            half_move = (1.0 - self.stay_prob) / 2.0
            move = (u >= 1.0 - half_move).astype(np.int64) - (u < half_move).astype(np.int64)
            self.state = np.clip(self.state + move, self.lo, self.hi)
        values = self.state.copy()
        values.flags.writeable = False
        return CqiGrid(self.tti, values)
