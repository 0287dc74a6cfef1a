"""Command line runner: single scenarios, parameter sweeps, config validation.

    crosslayer run <config> [--seed N] [--out DIR]
    crosslayer sweep {clients,dl_rbs,guard_time} [--seeds N] [--out DIR] [--jobs J]
    crosslayer validate <config>

``<config>`` is an INI file or the name of a shipped preset. The log level comes
from ``CROSSLAYER_LOG`` (off, summary, trace); ``trace`` also writes a per-TTI
``schedule.log``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, SimConfig, load_config, load_preset, preset_names
from .sim import MetricsReport, run

LOG_LEVELS = ("off", "summary", "trace")
SWEEP_COLUMNS = ("point", "dl_sched", "ul_sched", "apd", "seed", "system_kbps", "rebuffer_s", "mean_qr")

# preset -> (base scenario, swept attribute, points, default combos)
SWEEPS = {
    "clients": ("paper_8c_16rb", "n_clients", (8, 12, 16, 20), ("APD_TU_TD", "TU_TD", "PF_MAXCI")),
    "dl_rbs": ("paper_8c_16rb", "dl_rbs", (16, 18, 20, 22), ("APD_TU_TD", "TU_TD", "PF_MAXCI")),
    "guard_time": ("paper_poor_channel", "guard_time", (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0), ("APD_TU_TD",)),
}


def parse_combo(name: str) -> tuple[str, str, bool]:
    """``APD_TU_TD`` -> (ul_sched, dl_sched, apd) = ("tu", "td", True)."""
    parts = name.lower().split("_")
    apd = parts[0] == "apd"
    if apd:
        parts = parts[1:]
    if len(parts) != 2:
        raise ValueError(f"combo must look like UL_DL or APD_UL_DL, got {name!r}")
    return parts[0], parts[1], apd


def combo_name(ul: str, dl: str, apd: bool) -> str:
    return ("APD_" if apd else "") + f"{ul}_{dl}".upper()


def apply_combo(cfg: SimConfig, combo: str) -> SimConfig:
    ul, dl, apd = parse_combo(combo)
    return cfg.replace(ul_sched=ul, dl_sched=dl, apd_enabled=apd).validate()


def sweep_configs(preset: str, seeds: int, combos=None) -> list[tuple]:
    """Every (point, combo, seed, config) of a sweep, in output order."""
    if preset not in SWEEPS:
        raise ValueError(f"unknown sweep {preset!r}; choose from {', '.join(SWEEPS)}")
    base_name, attr, points, default_combos = SWEEPS[preset]
    base = load_preset(base_name)
    out = []
    for point in points:
        if attr == "guard_time":
            cfg = base.with_guard_time(point)
        else:
            cfg = base.replace(**{attr: point})
        for combo in combos or default_combos:
            c = apply_combo(cfg, combo)
            for s in range(1, seeds + 1):
                out.append((point, combo, s, c.replace(seed=s)))
    return out


def _sweep_row(item) -> dict:
    point, _combo, seed, cfg = item
    rep = run(cfg, "off")
    return {
        "point": point, "dl_sched": cfg.dl_sched, "ul_sched": cfg.ul_sched,
        "apd": int(cfg.apd_enabled), "seed": seed,
        "system_kbps": round(rep.system_kbps, 3),
        "rebuffer_s": round(rep.total_rebuffer_s, 4),
        "mean_qr": round(rep.mean_qr, 6),
        "config_hash": rep.config_hash,
    }


def run_sweep(preset: str, seeds: int = 3, combos=None, jobs: int = 1) -> list[dict]:
    items = sweep_configs(preset, seeds, combos)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_row, items))
    return [_sweep_row(it) for it in items]


# -- output helpers ---------------------------------------------------------

def atomic_write(path: Path, text: str) -> None:
    """Write via a temp file in the same directory and rename over the target."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def report_json(rep: MetricsReport, cfg: SimConfig) -> str:
    doc = rep.to_json_dict()
    doc["config"] = cfg.to_dict()
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_run_outputs(rep: MetricsReport, cfg: SimConfig, out: Path) -> None:
    atomic_write(out / "report.json", report_json(rep, cfg))
    atomic_write(out / "metrics.csv", _csv(("metric", "tti", "client", "value"), rep.metrics))
    atomic_write(out / "tcp_trace.csv", _csv(("tti", "client", "cwnd", "ssthresh"), rep.tcp_trace))
    if rep.schedule_log:
        atomic_write(out / "schedule.log", "\n".join(rep.schedule_log) + "\n")


# -- commands ---------------------------------------------------------------

def _log_level() -> str:
    level = os.environ.get("CROSSLAYER_LOG", "summary").strip().lower() or "summary"
    if level not in LOG_LEVELS:
        raise ConfigError("CROSSLAYER_LOG", f"must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
    return level


def cmd_run(args, level: str) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    rep = run(cfg, level)
    write_run_outputs(rep, cfg, Path(args.out))
    if level != "off":
        print(f"[{rep.config_hash} seed {rep.seed}] {rep.summary()}")
    return 0


def cmd_sweep(args, level: str) -> int:
    combos = [c.strip() for c in args.combos.split(",")] if args.combos else None
    if combos:
        for c in combos:
            try:
                apply_combo(SimConfig(), c)
            except ValueError as exc:
                raise ConfigError("combos", str(exc)) from exc
    rows = run_sweep(args.preset, args.seeds, combos, args.jobs)
    out = Path(args.out)
    atomic_write(out / "sweep.csv", _csv(SWEEP_COLUMNS, [[r[c] for c in SWEEP_COLUMNS] for r in rows]))
    manifest = {
        "preset": args.preset,
        "base": SWEEPS[args.preset][0],
        "seeds": args.seeds,
        "combos": combos or list(SWEEPS[args.preset][3]),
        "runs": [{"point": r["point"], "dl_sched": r["dl_sched"], "ul_sched": r["ul_sched"],
                  "apd": r["apd"], "seed": r["seed"], "config_hash": r["config_hash"]} for r in rows],
    }
    atomic_write(out / "sweep_manifest.json", json.dumps(manifest, indent=2) + "\n")
    if level != "off":
        print(f"sweep {args.preset}: {len(rows)} runs -> {out / 'sweep.csv'}")
    return 0


def cmd_validate(args, level: str) -> int:
    cfg = load_config(args.config)
    if level != "off":
        print(f"ok {cfg.config_hash()} ({cfg.n_clients} clients, {cfg.dl_rbs}/{cfg.ul_rbs} RBs, "
              f"{cfg.ul_sched}_{cfg.dl_sched}{' +apd' if cfg.apd_enabled else ''})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crosslayer", description="TCP-aware LTE video scheduling simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("config", help=f"INI file or preset ({', '.join(preset_names())})")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", default="out")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a parameter sweep")
    s.add_argument("preset", choices=sorted(SWEEPS))
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--out", default="out")
    s.add_argument("--combos", help="comma separated, e.g. APD_TU_TD,PF_MAXCI")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="parse and check a config")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, _log_level())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
