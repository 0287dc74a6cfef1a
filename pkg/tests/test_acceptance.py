"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict; conftest prints them all at
the end of the session. Simulation runs are cached by config so scenarios
shared between criteria run once.
"""

import functools
import math
import time

import numpy as np
import pytest

from crosslayer import cli
from crosslayer.allocation import allocation_violations
from crosslayer.apd import select_drop_set
from crosslayer.baselines import RoundRobin, maxci_allocate, mlwdf_allocate, pf_allocate
from crosslayer.channel import CqiProcess
from crosslayer.config import load_preset, preset_names
from crosslayer.mac_downlink import td_allocate
from crosslayer.mac_uplink import scheduled_count, tu_allocate
from crosslayer.sim import run
from oracles import RB, best_throughput, capacities, mcs_of

pytestmark = pytest.mark.slow

SEEDS = range(1, 11)
VERDICTS: list[str] = []


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


_timings = []


@functools.lru_cache(maxsize=None)
def report(cfg):
    t = time.perf_counter()
    rep = run(cfg, "off")
    _timings.append(time.perf_counter() - t)
    return rep


def median_of(cfg, attr="system_kbps"):
    return float(np.median([getattr(report(cfg.replace(seed=s)), attr) for s in SEEDS]))


# -- 1: knapsack ---------------------------------------------------------------

def _brute_cover(u, r, need):
    n = len(u)
    masks = ((np.arange(1 << n)[:, None] >> np.arange(n)) & 1).astype(float)
    return float((masks @ u)[masks @ r >= need - 1e-9].min())


def test_criterion_1_knapsack():
    rng = np.random.default_rng(20240601)
    exact_bad = cover_bad = gap_bad = 0
    worst = 1.0
    solver_time = 0.0
    for _ in range(500):
        n = int(rng.integers(1, 16))
        u = rng.uniform(0, 10, n)
        r = rng.integers(50, 1501, n)
        s_drop = float(rng.uniform(0, 1) * r.sum())
        pk = list(zip(u.tolist(), r.tolist()))
        t = time.perf_counter()
        exact = select_drop_set(pk, s_drop, bucket=1)
        coarse = select_drop_set(pk, s_drop, bucket=64)
        solver_time += time.perf_counter() - t
        need = min(math.ceil(s_drop - 1e-9), int(r.sum()))
        opt = _brute_cover(u, r.astype(float), need)
        exact_bad += abs(exact.dropped_importance - opt) > 1e-9 * max(1, opt)
        cover_bad += coarse.dropped_bytes < s_drop - 1e-9
        gap_bad += coarse.dropped_importance > 1.05 * opt + 1e-9
        if opt > 0:
            worst = max(worst, coarse.dropped_importance / opt)
    ok = exact_bad == 0 and cover_bad == 0 and gap_bad == 0 and solver_time < 10
    verdict(1, ok, f"500 instances: exact mismatches {exact_bad}, bucketed infeasible {cover_bad}, "
                   f"bucketed >5% {gap_bad} (worst ratio {worst:.4f}), solver time {solver_time:.2f}s")
    assert ok


# -- 2: scheduler invariants ---------------------------------------------------

def _grid(rng, K, N):
    if rng.random() < 0.5:
        return rng.integers(1, 16, (K, N))
    means = rng.uniform(2, 14, K)
    proc = CqiProcess(means, N, rng, stay_prob=0.9, spread=3.0)
    for _ in range(int(rng.integers(0, 20))):
        proc.step()
    return np.array(proc.step().values)


def _check_alloc(a, g, queues=None):
    """Independent ownership / MCS / capacity check; returns violation strings."""
    K, N = g.shape
    bad = list(allocation_violations(a, g))
    owner = [int(o) for o in a.owner]
    if len(owner) != N or any(o < -1 or o >= K for o in owner):
        return bad + ["owner out of range"]
    if list(a.capacity) != capacities(owner, g.tolist(), K):
        bad.append("capacity differs from oracle")
    for k in range(K):
        rbs = [n for n in range(N) if owner[n] == k]
        if a.mcs[k] != (mcs_of(min(g[k, rbs])) if rbs else 0):
            bad.append(f"client {k} MCS != q(N_k)")
        if queues is not None and queues[k] <= 0 and rbs:
            bad.append(f"client {k} served with an empty queue")
    return bad


def test_criterion_2_scheduler_invariants():
    rng = np.random.default_rng(7)
    counts = {name: 0 for name in ("TD", "TU", "PF", "RR", "MAXCI", "MLWDF")}
    coverage_checked = 0
    rr = RoundRobin()
    for _ in range(1000):
        K, N = int(rng.integers(1, 9)), int(rng.integers(1, 17))
        g = _grid(rng, K, N)
        J = [int(x) if rng.random() > 0.15 else 0 for x in rng.integers(1, 5000, K)]
        C = [int(x) for x in rng.integers(0, 400, K)]
        a = td_allocate(g, C, J)
        v = _check_alloc(a, g, J)
        need = [min(c, j) for c, j in zip(C, J)]
        rbs_needed = sum(math.ceil(need[k] / RB[mcs_of(g[k].min())]) for k in range(K) if need[k] > 0)
        if rbs_needed <= N:
            coverage_checked += 1
            v += [f"client {k} requirement unmet" for k in range(K) if a.capacity[k] < need[k]]
        v += [f"client {k} over queue by more than one RB" for k in range(K)
              if a.mcs[k] and a.capacity[k] >= J[k] + RB[a.mcs[k]]]
        counts["TD"] += len(v)

        Nu = int(rng.integers(1, 9))
        gu = _grid(rng, K, Nu)
        sizes = [[int(s) for s in rng.integers(20, 121, int(rng.integers(0, 12)))] for _ in range(K)]
        prios = [list(rng.uniform(0, 1e6, len(s))) for s in sizes]
        au = tu_allocate(gu, sizes, prios)
        v = _check_alloc(au, gu, [sum(s) for s in sizes])
        for k in range(K):
            if au.mcs[k]:
                if au.capacity[k] > sum(sizes[k]) + RB[au.mcs[k]]:
                    v.append("c4: capacity beyond pending ACK bytes + one RB")
            _, tau = scheduled_count(sizes[k], int(au.capacity[k]))
            if any(x < y for x, y in zip(tau, tau[1:])):
                v.append("c5: tau not monotone")
        counts["TU"] += len(v)

        q = [int(x) if rng.random() > 0.2 else 0 for x in rng.integers(1, 5000, K)]
        ema = rng.uniform(0, 2e5, K)
        hol = rng.uniform(0, 1, K)
        counts["PF"] += len(_check_alloc(pf_allocate(g, q, ema), g, q))
        counts["RR"] += len(_check_alloc(rr.allocate(g, q), g, q))
        counts["MAXCI"] += len(_check_alloc(maxci_allocate(g, q), g, q))
        counts["MLWDF"] += len(_check_alloc(mlwdf_allocate(g, q, hol, ema), g, q))
    ok = all(v == 0 for v in counts.values())
    verdict(2, ok, "violations per scheduler over 1000 instances: "
                   + ", ".join(f"{k} {v}" for k, v in counts.items())
                   + f"; TD coverage checked on {coverage_checked} feasible instances")
    assert ok


# -- 3: TD vs exhaustive oracle ------------------------------------------------

def test_criterion_3_td_vs_oracle():
    rng = np.random.default_rng(3)
    got_total = best_total = 0
    ratios = []
    for _ in range(200):
        K, N = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        g = rng.integers(1, 16, (K, N))
        J = [10**9] * K
        a = td_allocate(g, [0] * K, J)
        got = int(a.capacity.sum())
        best = best_throughput(g.tolist(), J)
        got_total += got
        best_total += best
        ratios.append(got / best if best else 1.0)
    agg = got_total / best_total
    ok = agg >= 0.90
    verdict(3, ok, f"greedy/exhaustive throughput over 200 grids = {agg:.4f} (>= 0.90); "
                   f"per-grid mean {np.mean(ratios):.4f}, min {min(ratios):.4f}, "
                   f"{sum(r < 0.9 for r in ratios)} grids below 0.90")
    assert ok


# -- 4: TCP --------------------------------------------------------------------

def test_criterion_4_tcp():
    from crosslayer.tcp import MSS, Mode, TcpSender
    checks = {}

    s = TcpSender(initial_window=20 * MSS)
    for _ in range(20):
        s.send_new(MSS, 0.0)
    for _ in range(3):
        s.on_ack(0, 0.1)
    checks["third dup ACK halves"] = (s.ssthresh, s.cwnd, s.mode) == (10 * MSS, 10 * MSS, Mode.RECOVERY)

    s = TcpSender(initial_window=16 * MSS)
    for _ in range(16):
        s.send_new(MSS, 0.0)
    s.on_timeout(1.0)
    checks["timeout to 1 MSS"] = (s.cwnd, s.ssthresh, s.mode) == (MSS, 8 * MSS, Mode.SLOW_START)

    s = TcpSender(rto_init=0.2)
    s.send_new(MSS, 0.0)
    rtos, now = [s.rto], 0.0
    for _ in range(6):
        now += s.rto
        s.on_timeout(now)
        rtos.append(s.rto)
        s.next_retransmission(now, force=True)
    checks["RTO backoff/clamp"] = np.allclose(rtos, [0.2, 0.4, 0.8, 1.6, 3.2, 4.0, 4.0])

    s = TcpSender()
    seen, now = [], 0.0
    for _ in range(4):
        seen.append(s.cwnd)
        n = s.can_send() // MSS
        for _ in range(n):
            s.send_new(MSS, now)
        now += 0.1
        for _ in range(n):
            s.on_ack(s.snd_una + MSS, now)
    checks["slow start doubles per RTT"] = seen == [2 * MSS, 4 * MSS, 8 * MSS, 16 * MSS]

    s = TcpSender(initial_window=9 * MSS, ssthresh=2 * MSS)
    for _ in range(9):
        s.send_new(MSS, 0.0)
    s.on_ack(MSS, 0.1)
    s.on_ack(2 * MSS, 0.1)
    checks["additive increase"] = math.isclose(s.cwnd, 10 * MSS + MSS / 10)

    ok = all(checks.values())
    verdict(4, ok, ", ".join(f"{k}: {'ok' if v else 'WRONG'}" for k, v in checks.items()))
    assert ok


# -- 5: throughput ordering ----------------------------------------------------

COMBOS_5 = ("TU_TD", "TU_MAXCI", "TU_PF", "TU_RR", "TU_MLWDF", "PF_RR", "PF_MAXCI")


def test_criterion_5_throughput_ordering():
    base = load_preset("paper_8c_16rb")
    med = {c: median_of(cli.apply_combo(base, c)) for c in COMBOS_5}
    lower = ("TU_PF", "TU_RR", "TU_MLWDF", "PF_RR")
    non_tu = ("PF_RR", "PF_MAXCI")
    best_non_tu = max(med[c] for c in non_tu)
    gain = med["TU_TD"] / best_non_tu - 1
    ordered = med["TU_TD"] > med["TU_MAXCI"] > max(med[c] for c in lower)
    slowest = max(_timings) if _timings else 0.0
    ok = ordered and gain >= 0.15 and slowest < 60
    verdict(5, ok, "median kbps " + ", ".join(f"{c} {med[c]:.0f}" for c in COMBOS_5)
            + f"; TU_TD > TU_MAXCI > others: {ordered}; TU_TD vs best non-TU {gain:+.1%} (need +15%)"
            + f"; slowest run {slowest:.1f}s")
    assert ok


# -- 6: APD under poor channel ------------------------------------------------

def test_criterion_6_apd_poor_channel():
    base = load_preset("paper_poor_channel")
    on = cli.apply_combo(base, "APD_TU_TD")
    off = cli.apply_combo(base, "TU_TD")
    kbps_on, kbps_off = median_of(on), median_of(off)
    reb_on, reb_off = median_of(on, "total_rebuffer_s"), median_of(off, "total_rebuffer_s")
    qr = float(np.mean([report(on.replace(seed=s)).mean_qr for s in SEEDS]))
    psnr_drop = float(np.mean([1 - report(on.replace(seed=s)).mean_psnr_db / report(off.replace(seed=s)).mean_psnr_db
                               for s in SEEDS]))
    c_thr = kbps_on >= 1.05 * kbps_off
    c_reb = reb_on <= 0.7 * reb_off
    c_qr = qr >= 0.95
    ok = c_thr and c_reb and c_qr
    verdict(6, ok, f"APD_TU_TD {kbps_on:.0f} vs TU_TD {kbps_off:.0f} kbps (x{kbps_on / kbps_off:.3f}, need 1.05: {c_thr}); "
                   f"rebuffering {reb_on:.3f} vs {reb_off:.3f} s (need <= 0.7x: {c_reb}); "
                   f"mean QR {qr:.4f} (need 0.95: {c_qr}); PSNR decline {psnr_drop:.2%}")
    assert ok


# -- 7: sweep monotonicity ----------------------------------------------------

def _sweep_medians(preset, attr="system_kbps"):
    out = {}
    for point, _combo, _seed, cfg in cli.sweep_configs(preset, 1, ["APD_TU_TD"]):
        out[point] = median_of(cfg, attr)
    return out


def _non_decreasing(xs):
    return all(b >= a for a, b in zip(xs, xs[1:]))


def test_criterion_7_sweeps():
    rbs_kbps = _sweep_medians("dl_rbs")
    rbs_reb = _sweep_medians("dl_rbs", "total_rebuffer_s")
    cl_kbps = _sweep_medians("clients")
    g_kbps = _sweep_medians("guard_time")
    g_qr = _sweep_medians("guard_time", "mean_qr")
    parts = {
        "kbps up over DL RBs": _non_decreasing(list(rbs_kbps.values())),
        "rebuffering down over DL RBs": _non_decreasing([-x for x in rbs_reb.values()]),
        "kbps up over clients": _non_decreasing(list(cl_kbps.values())),
        "kbps down over guard time": _non_decreasing([-x for x in g_kbps.values()]),
        "QR up over guard time": _non_decreasing(list(g_qr.values())),
        "flat beyond 2.5 s": abs(g_kbps[3.0] / g_kbps[2.5] - 1) <= 0.02 and abs(g_qr[3.0] / g_qr[2.5] - 1) <= 0.02,
    }
    fmt = lambda d, f: " ".join(f"{k:g}:{v:{f}}" for k, v in d.items())
    ok = all(parts.values())
    verdict(7, ok, "; ".join(f"{k}: {v}" for k, v in parts.items())
            + f" | dl_rbs kbps {fmt(rbs_kbps, '.0f')} | dl_rbs rebuffer {fmt(rbs_reb, '.2f')}"
            + f" | clients kbps {fmt(cl_kbps, '.0f')} | guard kbps {fmt(g_kbps, '.0f')} | guard QR {fmt(g_qr, '.3f')}")
    assert ok


# -- 8: determinism and conservation -------------------------------------------

def test_criterion_8_determinism_conservation():
    import json
    mismatched = []
    for name in preset_names():
        cfg = load_preset(name)
        a = report(cfg)
        b = run(cfg, "off")
        if json.dumps(a.to_json_dict(), sort_keys=True) != json.dumps(b.to_json_dict(), sort_keys=True) \
                or a.metrics != b.metrics or a.tcp_trace != b.tcp_trace:
            mismatched.append(name)
    infos = report.cache_info()
    # every run made in this session, including criteria 5-7 when they ran first
    all_reports = [report(cfg) for cfg in _cached_configs()]
    broken = sum(not r.conservation_ok or r.phantom_violations for r in all_reports)
    ok = not mismatched and broken == 0
    verdict(8, ok, f"{len(preset_names())} presets re-run: mismatches {mismatched or 'none'}; "
                   f"conservation/phantom failures {broken} of {len(all_reports)} runs (cache {infos.currsize})")
    assert ok


def _cached_configs():
    # lru_cache keeps its keys private; rebuild them from the wrapped calls
    return list(_seen_configs)


_seen_configs = []
_report_inner = report


@functools.wraps(_report_inner)
def report(cfg):  # noqa: F811
    if cfg not in _seen_set:
        _seen_set.add(cfg)
        _seen_configs.append(cfg)
    return _report_inner(cfg)


report.cache_info = _report_inner.cache_info
_seen_set = set()
