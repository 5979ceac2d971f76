"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; conftest prints them all at the end of
the session.  Expensive runs are cached in module-scoped fixtures.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rfpkv.baselines import ParadigmKind
from rfpkv.bench import RunConfig, run
from rfpkv.bench.report import render
from rfpkv.kvstore import partition_for_key
from rfpkv.nic import default_profile
from rfpkv.protocol import GET, NOT_READY, PUT, encode_request, server_poll
from rfpkv.rdma import Emulator, TornDelivery
from rfpkv.workload import WorkloadSpec, key_bytes, rng_for, zipf_table

from conftest import make_cluster

FULL_OPS = 1_000_000
SHORT_OPS = 200_000
RFP_TARGET = 5.5e6        # [reference] rfp peak
SR_TARGET = 2.1e6         # [reference] server-reply ceiling

RESULTS: dict[int, list[tuple[bool, str]]] = {}


def check(criterion: int, ok: bool, detail: str) -> None:
    RESULTS.setdefault(criterion, []).append((bool(ok), detail))


def verdict(criterion: int) -> None:
    failed = [d for ok, d in RESULTS[criterion] if not ok]
    assert not failed, "; ".join(failed)


def within(x, target, rel):
    return abs(x - target) <= rel * target


def cfg(paradigm="rfp", ops=SHORT_OPS, **kw):
    wl = {"ops": ops} | kw.pop("workload", {})
    return RunConfig(paradigm=ParadigmKind.parse(paradigm), workload=WorkloadSpec(**wl),
                     duration_ops=ops, **kw)


GRID = [(g, d) for d in ("uniform", "zipf") for g in (0.05, 0.5, 0.95)]
SR6 = {"server_workers": 6, "client_threads": 28}
X2 = default_profile().scaled(outbound=2.0)

CONFIGS = {
    "headline": cfg(ops=FULL_OPS),
    "sr6": cfg("server_reply", **SR6),
    "sr6x2": cfg("server_reply", profile=X2, **SR6),
    "sr4": cfg("server_reply", server_workers=4, client_threads=28),
    "sr4x2": cfg("server_reply", server_workers=4, client_threads=28, profile=X2),
    "v64": cfg(workload={"value_size": 64, "get_fraction": 1.0}),
    "v64mix": cfg(workload={"value_size": 64}),
    "v32mix": cfg(),
    **{f"rfs132_{v}": cfg(rfs=132, workload={"value_size": v}) for v in (32, 64, 128, 1024)},
    **{f"rfp_{g}_{d}": cfg(workload={"get_fraction": g, "distribution": d}) for g, d in GRID},
    **{f"sr_{g}_{d}": cfg("server_reply", workload={"get_fraction": g, "distribution": d}, **SR6)
       for g, d in GRID},
}


@pytest.fixture(scope="module")
def cache():
    memo = {}

    def get(name):
        if name not in memo:
            memo[name] = run(CONFIGS[name])
        return memo[name]
    return get


@pytest.fixture(scope="module")
def headline(cache):
    return cache("headline")


@pytest.fixture(scope="module")
def sr_ceiling(cache):
    return cache("sr6")


def test_criterion_1_rfp_peak(headline):
    iops = headline.iops
    check(1, within(iops, RFP_TARGET, 0.15), f"rfp IOPS {iops / 1e6:.3f} M vs 5.5 M +-15%")
    check(1, headline.completed == FULL_OPS, f"completed {headline.completed}")
    verdict(1)


def test_criterion_2_server_reply_ceiling(cache, sr_ceiling):
    iops = sr_ceiling.iops
    check(2, within(iops, SR_TARGET, 0.15), f"server_reply IOPS {iops / 1e6:.3f} M vs 2.1 M +-15%")
    prof = default_profile()
    doubled = cache("sr6x2")
    ratio = doubled.iops / iops
    check(2, within(ratio, 2.0, 0.05), f"x2 out-bound curve scales ceiling by {ratio:.3f}")
    four = cache("sr4")
    peak = prof.peak_outbound_rate
    check(2, within(four.iops, peak, 0.05),
          f"4-worker ceiling {four.iops / 1e6:.3f} M vs curve max {peak / 1e6:.3f} M")
    four2 = cache("sr4x2")
    check(2, within(four2.iops, 2 * peak, 0.05),
          f"4-worker ceiling x2 {four2.iops / 1e6:.3f} M vs {2 * peak / 1e6:.3f} M")
    check(2, sr_ceiling.bottleneck.startswith("server_outbound"),
          f"bottleneck {sr_ceiling.bottleneck}")
    verdict(2)


def test_criterion_3_round_trip_law(cache, headline):
    rt = headline.mean_round_trips
    # [reference] mean round trips and the 64 B slowdown
    check(3, 2.0 <= rt <= 2.1, f"mean round trips {rt:.4f} in [2.0, 2.1]")
    big = cache("v64")
    check(3, set(big.round_trips) == {3}, f"64 B GET round trips {sorted(big.round_trips)}")
    v64, v32 = cache("v64mix"), cache("v32mix")
    drop = 1 - v64.iops / v32.iops
    check(3, abs(drop - 0.32) <= 0.05, f"64 B IOPS {100 * drop:.1f}% below 32 B (32 +-5 pp)")
    verdict(3)


def test_criterion_4_rfs_sweep(cache):
    runs = {v: cache(f"rfs132_{v}") for v in (32, 64, 128)}
    iops = [r.iops for r in runs.values()]
    spread = max(iops) / min(iops) - 1
    check(4, spread <= 0.10, f"rfs=132 spread {100 * spread:.2f}% over 32/64/128 B")
    for v, r in runs.items():
        check(4, within(r.iops, RFP_TARGET, 0.15), f"rfs=132 {v} B IOPS {r.iops / 1e6:.3f} M")
    big = cache("rfs132_1024")
    # [reference] 1024 B target
    check(4, within(big.iops, 3.1e6, 0.15), f"1024 B IOPS {big.iops / 1e6:.3f} M vs 3.1 M")
    check(4, big.bottleneck.endswith("bandwidth"), f"1024 B bottleneck {big.bottleneck}")
    verdict(4)


def test_criterion_5_flatness(cache, headline, sr_ceiling):
    for g, d in GRID:
        r = cache(f"rfp_{g}_{d}")
        check(5, within(r.iops, headline.iops, 0.10),
              f"rfp get={g} {d}: {r.iops / 1e6:.3f} M vs {headline.iops / 1e6:.3f} M")
        s = cache(f"sr_{g}_{d}")
        check(5, within(s.iops, sr_ceiling.iops, 0.15),
              f"server_reply get={g} {d}: {s.iops / 1e6:.3f} M")
    verdict(5)


def test_criterion_6_server_silence(cache, headline):
    for name, config in CONFIGS.items():
        if config.paradigm is not ParadigmKind.RFP:
            continue
        r = cache(name)
        check(6, r.server_nic_ops == 0, f"{name}: server-issued RDMA ops {r.server_nic_ops}")
    verdict(6)


def test_criterion_7a_torn_delivery():
    frame = encode_request(PUT, b"k" * 16, b"v" * 32)
    assert len(frame) == 56
    premature = corrupted = 0
    for split in range(1, len(frame)):
        emu, server, (client,) = make_cluster("rfp", workers=1, torn=TornDelivery(split=split))
        session = client.sessions[0]
        ss = session.server_session
        session.send(frame)
        emu.advance()                                   # prefix only
        if server_poll(server.endpoint, ss) is not NOT_READY:
            premature += 1
            continue
        emu.advance()                                   # suffix lands
        req = server_poll(server.endpoint, ss)
        if req is NOT_READY or (req.op, req.key, req.value) != (PUT, b"k" * 16, b"v" * 32):
            corrupted += 1
    check(7, premature == 0 and corrupted == 0,
          f"torn splits 1..55: {premature} premature, {corrupted} corrupted")
    verdict(7)


def test_criterion_7b_freshness():
    stale = 0
    for paradigm in ("rfp", "server_reply"):
        depth = 4
        emu, server, (client,) = make_cluster(paradigm, workers=1, ring_depth=depth)
        for i in range(10 * depth):
            v = i.to_bytes(4, "big")
            client.put(b"k", v)
            stale += client.get(b"k").value != v
    check(7, stale == 0, f"{stale} stale results over 10 x ring_depth requests")
    verdict(7)


history = st.lists(st.tuples(st.sampled_from([GET, PUT]), st.sampled_from([b"a", b"bb", b"c"]),
                             st.binary(max_size=200)), min_size=1, max_size=30)


@settings(max_examples=60, deadline=None)
@given(ops=history)
def test_criterion_7c_paradigm_agreement(ops):
    seen = {}
    for paradigm in ("rfp", "server_reply", "bypass"):
        emu, server, (client,) = make_cluster(paradigm, workers=2)
        seen[paradigm] = [client.call(op, k, v if op == PUT else None).value for op, k, v in ops]
    model, expected = {}, []
    for op, k, v in ops:
        if op == PUT:
            model[k] = v
        expected.append(model.get(k) if op == GET else None)
    ok = seen["rfp"] == seen["server_reply"] == seen["bypass"] == expected
    if not ok:
        check(7, False, f"paradigms disagree on {ops!r}")
    assert ok


def test_criterion_7_summary():
    check(7, True, "sequential histories agree across rfp, server_reply and bypass")
    verdict(7)


def test_criterion_8_determinism(headline):
    again = run(cfg(ops=FULL_OPS))
    same = render([again], "csv") == render([headline], "csv")
    check(8, same, "two runs produce byte-identical CSV" if same else "CSV reports differ")
    verdict(8)


def test_criterion_9_samplers():
    n, theta = 1_000_000, 0.99
    ranks = zipf_table(n, theta).sample(rng_for(2024), 10_000_000)
    freq = np.count_nonzero(ranks == 1) / len(ranks)
    # [oracle] 1 / H(n, theta) summed directly
    analytic = 1 / math.fsum(k ** -theta for k in range(1, n + 1))
    err = abs(freq - analytic) / analytic
    check(9, err <= 0.02, f"zipf top-rank {freq:.5f} vs {analytic:.5f} ({100 * err:.2f}%)")
    counts = np.bincount([partition_for_key(key_bytes(k), 4) for k in range(1_000_000)],
                         minlength=4)
    p = stats.chisquare(counts).pvalue
    check(9, p > 0.001, f"partition chi-square p={p:.4f} counts={counts.tolist()}")
    verdict(9)


def test_criterion_10_latency(headline, sr_ceiling):
    p99 = headline.latency.percentile(0.99)
    # [reference] p99 bound
    check(10, p99 <= 7000, f"rfp p99 {p99:.0f} ns <= 7000 ns")
    a, b = headline.latency.percentile(0.5), sr_ceiling.latency.percentile(0.5)
    check(10, a < b, f"p50 rfp {a:.0f} ns < server_reply {b:.0f} ns")
    verdict(10)
