"""Scenario configuration: dataclass, INI reader/writer, shipped presets."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from .apd import ApdConfig
from .channel import PROFILES as CHANNEL_PROFILES
from .mac_downlink import ProtocolConfig
from .mac_uplink import UplinkConfig
from .video_trace import PROFILES as VIDEO_PROFILES

DL_SCHEDULERS = ("td", "pf", "rr", "maxci", "mlwdf")
UL_SCHEDULERS = ("tu", "td", "pf", "rr", "maxci", "mlwdf")
ALL_SEQUENCES = ("flower.cif", "coastguard.cif", "news.cif", "highway.cif",
                 "soccer.cif", "foreman.cif", "crew.cif", "bus.cif")


class ConfigError(ValueError):
    """Invalid scenario; ``key`` names the offending ``section.key``."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class SimConfig:
    n_clients: int = 8
    dl_rbs: int = 16
    ul_rbs: int = 8
    tti: float = 1e-3
    duration_s: float = 16.0
    seed: int = 1
    dl_sched: str = "td"
    ul_sched: str = "tu"
    latency_ttis: int = 4
    mac_buffer_bytes: int = 40_000
    mac_discard_ms: float = 1000.0
    wire_loss: float = 0.0
    startup_segments: int = 1
    request_segments: int = 2
    channel_profile: str = "average"
    ul_channel_profile: str = ""          # empty: same as downlink
    stay_prob: float = 0.9
    cqi_spread: float = 3.0
    sequences: tuple = ALL_SEQUENCES
    trace_seed: int = 0
    apd_enabled: bool = False
    apd: ApdConfig = field(default_factory=ApdConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    uplink: UplinkConfig = field(default_factory=UplinkConfig)
    mss: int = 1460
    initial_window: int = 2 * 1460
    initial_ssthresh: int = 65535
    rto_init: float = 0.5
    rto_min: float = 0.2
    rto_max: float = 4.0

    @property
    def n_ttis(self) -> int:
        return int(round(self.duration_s / self.tti))

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    def with_guard_time(self, g: float) -> "SimConfig":
        return self.replace(apd=dataclasses.replace(self.apd, guard_time=g))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Hash of everything except the seed, so seeds of one scenario share it."""
        d = self.to_dict()
        d.pop("seed")
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self) -> "SimConfig":
        checks = [
            ("sim.n_clients", self.n_clients >= 1, "must be >= 1"),
            ("sim.dl_rbs", self.dl_rbs >= 1, "must be >= 1"),
            ("sim.ul_rbs", self.ul_rbs >= 1, "must be >= 1"),
            ("sim.tti", self.tti > 0, "must be > 0"),
            ("sim.duration_s", self.duration_s >= 0, "must be >= 0"),
            ("sim.dl_sched", self.dl_sched in DL_SCHEDULERS, f"unknown downlink scheduler {self.dl_sched!r}; choose from {', '.join(DL_SCHEDULERS)}"),
            ("sim.ul_sched", self.ul_sched in UL_SCHEDULERS, f"unknown uplink scheduler {self.ul_sched!r}; choose from {', '.join(UL_SCHEDULERS)}"),
            ("sim.latency_ttis", self.latency_ttis >= 1, "must be >= 1"),
            ("sim.mac_buffer_bytes", self.mac_buffer_bytes > 0, "must be > 0"),
            ("sim.mac_discard_ms", self.mac_discard_ms > 0, "must be > 0"),
            ("sim.wire_loss", 0.0 <= self.wire_loss < 1.0, "must be in [0, 1)"),
            ("sim.startup_segments", self.startup_segments >= 1, "must be >= 1"),
            ("sim.request_segments", self.request_segments >= 1, "must be >= 1"),
            ("channel.profile", self.channel_profile in CHANNEL_PROFILES, f"unknown channel profile {self.channel_profile!r}"),
            ("channel.ul_profile", self.ul_channel_profile in ("",) + tuple(CHANNEL_PROFILES), f"unknown channel profile {self.ul_channel_profile!r}"),
            ("channel.stay_prob", 0.0 <= self.stay_prob <= 1.0, "must be in [0, 1]"),
            ("channel.spread", self.cqi_spread >= 0, "must be >= 0"),
            ("video.sequences", len(self.sequences) > 0 and all(s in VIDEO_PROFILES for s in self.sequences),
             f"unknown sequence in {list(self.sequences)}"),
            ("tcp.mss", self.mss > 0, "must be > 0"),
            ("tcp.initial_window", self.initial_window >= self.mss, "must be >= mss"),
            ("tcp.rto_min", 0 < self.rto_min <= self.rto_init <= self.rto_max, "need 0 < rto_min <= rto_init <= rto_max"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(key, msg)
        return self


# (section, key) -> (field path, parser)
def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _seqs(s: str) -> tuple:
    return tuple(x.strip() for x in s.replace(",", " ").split() if x.strip())


_KEYS = {
    ("sim", "clients"): ("n_clients", int),
    ("sim", "dl_rbs"): ("dl_rbs", int),
    ("sim", "ul_rbs"): ("ul_rbs", int),
    ("sim", "tti"): ("tti", float),
    ("sim", "duration_s"): ("duration_s", float),
    ("sim", "seed"): ("seed", int),
    ("sim", "dl_sched"): ("dl_sched", str),
    ("sim", "ul_sched"): ("ul_sched", str),
    ("sim", "latency_ttis"): ("latency_ttis", int),
    ("sim", "mac_buffer_bytes"): ("mac_buffer_bytes", int),
    ("sim", "mac_discard_ms"): ("mac_discard_ms", float),
    ("sim", "wire_loss"): ("wire_loss", float),
    ("sim", "startup_segments"): ("startup_segments", int),
    ("sim", "request_segments"): ("request_segments", int),
    ("channel", "profile"): ("channel_profile", str),
    ("channel", "ul_profile"): ("ul_channel_profile", str),
    ("channel", "stay_prob"): ("stay_prob", float),
    ("channel", "spread"): ("cqi_spread", float),
    ("video", "sequences"): ("sequences", _seqs),
    ("video", "trace_seed"): ("trace_seed", int),
    ("apd", "enabled"): ("apd_enabled", _bool),
    ("apd", "smoothing"): ("apd.smoothing", float),
    ("apd", "history_window"): ("apd.history_window", int),
    ("apd", "guard_time"): ("apd.guard_time", float),
    ("apd", "sample_ttis"): ("apd.sample_ttis", int),
    ("apd", "cadence_s"): ("apd.cadence_s", float),
    ("apd", "bucket_bytes"): ("apd.bucket_bytes", int),
    ("tcp", "mss"): ("mss", int),
    ("tcp", "initial_window"): ("initial_window", int),
    ("tcp", "initial_ssthresh"): ("initial_ssthresh", int),
    ("tcp", "rto_init"): ("rto_init", float),
    ("tcp", "rto_min"): ("rto_min", float),
    ("tcp", "rto_max"): ("rto_max", float),
    ("tcp", "ack_size"): ("protocol.ack_size", int),
    ("tcp", "cqi_window"): ("protocol.cqi_window", int),
    ("tcp", "ack_window"): ("protocol.ack_window", int),
    ("uplink", "delta"): ("uplink.delta", float),
    ("uplink", "beta_c"): ("uplink.beta_c", float),
    ("uplink", "gamma"): ("uplink.gamma", float),
}


def parse_config(text: str, source: str = "<string>") -> SimConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc).splitlines()[0]) from exc
    top, nested = {}, {"apd": {}, "protocol": {}, "uplink": {}}
    for section in cp.sections():
        for key, raw in cp.items(section):
            spec = _KEYS.get((section, key))
            if spec is None:
                raise ConfigError(f"{section}.{key}", "unknown key")
            path, conv = spec
            try:
                val = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}", f"cannot parse {raw!r} ({exc})") from exc
            if "." in path:
                grp, name = path.split(".")
                nested[grp][name] = val
            else:
                top[path] = val
    base = SimConfig()
    try:
        sub = {
            "apd": dataclasses.replace(base.apd, **nested["apd"]),
            "protocol": dataclasses.replace(base.protocol, **nested["protocol"]),
            "uplink": dataclasses.replace(base.uplink, **nested["uplink"]),
        }
    except ValueError as exc:
        grp = next(g for g in ("apd", "protocol", "uplink") if nested[g]) if any(nested.values()) else "config"
        section = {"protocol": "tcp"}.get(grp, grp)
        raise ConfigError(section, str(exc)) from exc
    return SimConfig(**top, **sub).validate()


def load_config(path) -> SimConfig:
    path = Path(path)
    if not path.exists():
        preset = preset_text(str(path))
        if preset is not None:
            return parse_config(preset, str(path))
        raise ConfigError("file", f"no such config or preset: {path}")
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: SimConfig) -> str:
    lines, current = [], None
    for (section, key), (path, _) in _KEYS.items():
        if section != current:
            lines.append(f"\n[{section}]" if lines else f"[{section}]")
            current = section
        obj = cfg
        for part in path.split("."):
            obj = getattr(obj, part)
        if isinstance(obj, tuple):
            obj = " ".join(obj)
        elif isinstance(obj, bool):
            obj = "true" if obj else "false"
        lines.append(f"{key} = {obj}")
    return "\n".join(lines) + "\n"


def preset_names() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("crosslayer.presets").iterdir() if p.name.endswith(".ini"))


def preset_text(name: str) -> str | None:
    name = name[:-4] if name.endswith(".ini") else name
    res = resources.files("crosslayer.presets") / f"{name}.ini"
    return res.read_text() if res.is_file() else None


def load_preset(name: str) -> SimConfig:
    text = preset_text(name)
    if text is None:
        raise ConfigError("preset", f"unknown preset {name!r}; known: {', '.join(preset_names())}")
    return parse_config(text, name)
