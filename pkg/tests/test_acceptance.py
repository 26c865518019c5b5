"""End-to-end acceptance checks.

Each test prints one [PASS]/[FAIL] line per criterion it covers. The load,
stress and soak suites are marked `slow` (roughly 40 minutes together);
everything else finishes in seconds.

The benchmark broker runs with a deliberately small query pool (4 slots,
100 ms per logical query, so about 40 queries/s of capacity) so that
saturation begins inside the LOAD rate range at scale 0.1, and virtual
clients carry a 2 s per-request deadline the way real load tools do. The
soak broker is provisioned generously instead: a soak demands a sustained
zero-failure plateau, not an overload.
"""

import asyncio
import itertools
import math
import time
from random import Random

import pytest

from servicenet.bench.runner import (
    Scenario, composite_ordering_violations, run_scenario, run_suite,
    write_csv,
)
from servicenet.bench.stats import (
    RunStats, percentile, sliding_window_cv, subtract_throughput,
)
from servicenet.client.app import PeerApp
from servicenet.client.connection import BrokerConnection
from servicenet.client.filters import Filter
from servicenet.model.geo import GeoPoint
from servicenet.pubsub.router import Envelope, Router
from servicenet.pubsub.subject import Subject, SubjectPattern, match_subject
from servicenet.transport.candidates import TransportConfig
from servicenet.transport.chat import ChatMessage, merge_histories
from servicenet.transport.manager import P2PManager
from servicenet.transport.session import SessionState

from conftest import broker, broker_url, run
from test_subject import all_patterns, all_subjects, oracle_match

SCALE = 0.1
CLIENT_TIMEOUT = 2.0
BENCH_BROKER = dict(pool_capacity=4, db_delay_ms=100.0)
SOAK_BROKER = dict(pool_capacity=500, db_delay_ms=5.0)
RESIDENTS = 400
SEED = 20260826


def report(name: str, ok: bool, detail: str = ""):
    tail = f"  ({detail})" if detail else ""
    print(f"[{'PASS' if ok else 'FAIL'}] {name}{tail}", flush=True)
    assert ok, f"{name}{tail}"


# -- routing criteria ------------------------------------------------------

def test_subject_matching_oracle_exhaustive():
    alphabet = ["a", "b"]
    start = time.monotonic()
    mismatches = 0
    subjects = [(t, Subject.parse(".".join(t))) for t in all_subjects(alphabet, 3)]
    for ptoks in all_patterns(alphabet, 3):
        pattern = SubjectPattern.parse(".".join(ptoks))
        for stoks, subj in subjects:
            if match_subject(pattern, subj) != oracle_match(list(ptoks), list(stoks)):
                mismatches += 1
    elapsed = time.monotonic() - start
    report("subject matching agrees with brute-force oracle (depth<=3)",
           mismatches == 0 and elapsed < 5.0,
           f"{mismatches} mismatches, {elapsed:.2f}s")


def test_routing_delivery_equivalence_500_trials():
    rng = Random(SEED)
    alphabet = ["x", "y", "z"]
    bad = 0
    for _ in range(500):
        router = Router()
        delivered = []
        subs = {}
        for _ in range(rng.randint(0, 12)):
            depth = rng.randint(1, 4)
            ptoks = [rng.choice(alphabet + ["*"]) for _ in range(depth)]
            if rng.random() < 0.3:
                ptoks[-1] = ">"
            sid = router.subscribe("t", SubjectPattern.parse(".".join(ptoks)),
                                   lambda sid, env: delivered.append(sid))
            subs[sid] = ptoks
        stoks = [rng.choice(alphabet) for _ in range(rng.randint(1, 4))]
        router.publish(Envelope.new(".".join(stoks), "AAAAAA"))
        expect = {s for s, p in subs.items() if oracle_match(p, stoks)}
        if set(delivered) != expect:
            bad += 1
    report("routing delivery equals oracle cross-product in 500 trials",
           bad == 0, f"{bad} bad trials")


# -- use-case criteria -----------------------------------------------------

CHEN = GeoPoint(31.2304, 121.4737)
TOM = GeoPoint(31.25, 121.45)
JERRY = GeoPoint(39.9042, 116.4074)
_SERIAL = itertools.count(1)


async def _mk_app(server, tmp_path, name, location, scoped):
    filters = [Filter.parse("svc.request.>; within_km 25")] if scoped else None
    app = PeerApp(str(tmp_path / f"{name}.db"), broker_url(server),
                  location=location, filters=filters,
                  device_fingerprint=f"fp-{name}".encode())
    await app.start()
    await app.register(f"{name}{next(_SERIAL)}@example.com", name.title())
    await app.watch()
    return app


async def _wait(queue, want, timeout=5.0):
    loop = asyncio.get_running_loop()
    deadline = loop.time() + timeout
    while True:
        ev = await asyncio.wait_for(queue.get(), deadline - loop.time())
        if ev["event"] == want:
            return ev


def test_use_case_scenarios_and_quote_ranking(tmp_path):
    async def main():
        start = time.monotonic()
        async with broker() as server:
            chen = await _mk_app(server, tmp_path, "chen", CHEN, scoped=False)
            tom = await _mk_app(server, tmp_path, "tom", TOM, scoped=True)
            jerry = await _mk_app(server, tmp_path, "jerry", JERRY, scoped=True)
            chen_q = chen.subscribe_events()
            tom_q = tom.subscribe_events()
            jerry_q = jerry.subscribe_events()

            # Use case 1: remote-capable request reaches both distant providers
            await chen.rate_peer(tom.pid, 5)
            await chen.rate_peer(jerry.pid, 3)
            await asyncio.sleep(0.2)
            wid1 = await chen.publish_wanted(
                "proofreading", "8-page paper", CHEN, remote_capable=True,
                budget_cents=3000, currency="CNY")
            got_tom = (await _wait(tom_q, "request"))["wanted"]["wanted_id"]
            got_jerry = (await _wait(jerry_q, "request"))["wanted"]["wanted_id"]
            report("use case 1: remote request reaches both distant providers",
                   got_tom == wid1 and got_jerry == wid1)

            # Quote ranking: cheaper + better-rated provider first
            q_tom = await tom.submit_quote(wid1, 2500)
            q_jerry = await jerry.submit_quote(wid1, 2800)
            await _wait(chen_q, "quote"); await _wait(chen_q, "quote")
            ranked = [v.quote.quote_id for v in chen.list_quotes(wid1)]
            report("quote ranking puts cheaper better-rated provider first",
                   ranked == [q_tom, q_jerry], f"order {ranked}")

            # Use case 2: location-bound request reaches only the nearby one
            wid2 = await chen.publish_wanted(
                "plumbing", "burst pipe", CHEN, remote_capable=False,
                budget_cents=8000, currency="CNY")
            got = (await _wait(tom_q, "request"))["wanted"]["wanted_id"]
            await asyncio.sleep(0.3)
            report("use case 2: scoped request reaches exactly the nearby provider",
                   got == wid2 and jerry.store.wanted(wid2) is None)

            elapsed = time.monotonic() - start
            report("use-case scenarios finish within 10s", elapsed < 10.0,
                   f"{elapsed:.2f}s")
            for app in (chen, tom, jerry):
                await app.stop()
    run(main())


# -- p2p criteria ----------------------------------------------------------

async def _p2p_peer(server, name, config=None):
    conn = BrokerConnection(broker_url(server), request_timeout=5.0)
    await conn.connect()
    await conn.register(f"{name}{next(_SERIAL)}@example.net", name,
                        next(_SERIAL).to_bytes(16, "big"))
    mgr = P2PManager(conn, config)
    await mgr.start()
    return conn, mgr


def test_p2p_host_selection_relay_fallback_chat_convergence():
    async def main():
        async with broker() as server:
            # (a) loopback peers pick the host pair
            conn_a, mgr_a = await _p2p_peer(server, "a")
            conn_b, mgr_b = await _p2p_peer(server, "b")
            incoming = asyncio.Queue()
            mgr_b.on_incoming_session = incoming.put_nowait
            s = await mgr_a.connect(conn_b.pid)
            local, remote = s.selected_pair
            report("p2p (a): loopback selects the host pair",
                   local.kind == "host" and remote.kind == "host")
            await mgr_a.stop(); await mgr_b.stop()
            await conn_a.close(); await conn_b.close()

            # (b) host path fault-injected: relay carries 1000 ordered messages
            cfg = TransportConfig(
                pair_filter=lambda l, r: l.kind == "host" and r.kind == "host")
            conn_a, mgr_a = await _p2p_peer(server, "c", cfg)
            conn_b, mgr_b = await _p2p_peer(server, "d", cfg)
            incoming = asyncio.Queue()
            mgr_b.on_incoming_session = incoming.put_nowait
            s = await mgr_a.connect(conn_b.pid)
            rs = await asyncio.wait_for(incoming.get(), 5)
            await asyncio.wait_for(rs.connected.wait(), 5)
            seen, done = [], asyncio.Event()

            def on_message(data):
                seen.append(int.from_bytes(data, "big"))
                if len(seen) == 1000:
                    done.set()

            rs.on_message = on_message
            for i in range(1000):
                await s.send(i.to_bytes(4, "big"))
            await asyncio.wait_for(done.wait(), 30)
            report("p2p (b): relay fallback carries 1000 ordered messages",
                   "relay" in (s.selected_pair[0].kind, s.selected_pair[1].kind)
                   and seen == list(range(1000)))

            # (c) chat sync converges to the oracle union on 50 partitions
            rng = Random(SEED)
            failures = 0
            for trial in range(50):
                pool = [ChatMessage(msg_id=f"{trial:02d}{i:02d}" * 2,
                                    author=rng.choice(["AAAAAA", "BBBBBB"]),
                                    body=f"m{i}", lamport=rng.randint(1, 20),
                                    wall_time=0.0)
                        for i in range(rng.randint(0, 8))]
                a_hist = [m for m in pool if rng.random() < 0.7]
                b_hist = [m for m in pool if rng.random() < 0.7]
                expect = merge_histories(a_hist, b_hist)
                rs.chat_log = list(b_hist)
                merged = await s.sync_chat(a_hist)
                deadline = asyncio.get_running_loop().time() + 5
                while merge_histories(rs.chat_log) != expect:
                    if asyncio.get_running_loop().time() > deadline:
                        break
                    await asyncio.sleep(0.01)
                if merged != expect or merge_histories(rs.chat_log) != expect:
                    failures += 1
            report("p2p (c): chat sync converges to oracle union on 50 partitions",
                   failures == 0, f"{failures} diverged")
            await mgr_a.stop(); await mgr_b.stop()
            await conn_a.close(); await conn_b.close()
    run(main())


# -- percentile criterion --------------------------------------------------

def test_percentile_matches_sort_oracle_1000_sets():
    rng = Random(SEED)
    bad = 0
    for _ in range(1000):
        samples = [rng.uniform(0, 1000) for _ in range(rng.randint(1, 200))]
        for q in (0.5, 0.95, 0.99):
            ordered = sorted(samples)
            if percentile(samples, q) != ordered[math.ceil(q * len(ordered)) - 1]:
                bad += 1
    report("percentile matches sort-based oracle on 1000 random sets",
           bad == 0, f"{bad} mismatches")


# -- benchmark suites ------------------------------------------------------

async def _spawn_residents(url):
    """A standing population so the directory response has real weight."""
    conns = []
    sem = asyncio.Semaphore(40)

    async def one(i):
        async with sem:
            c = BrokerConnection(url, request_timeout=60.0)
            await c.connect()
            await c.register(f"resident{i}@example.net", f"Res{i}",
                             (1_000_000 + i).to_bytes(16, "big"))
            conns.append(c)

    await asyncio.gather(*[one(i) for i in range(RESIDENTS)])

    async def keepalive():
        while True:
            await asyncio.sleep(8)
            await asyncio.gather(*[c.ping() for c in conns],
                                 return_exceptions=True)

    task = asyncio.create_task(keepalive())
    return conns, task


async def _close_residents(conns, task):
    task.cancel()
    for c in conns:
        try:
            await c.close()
        except Exception:
            pass


@pytest.mark.slow
def test_load_suite_composite_ordering(tmp_path):
    async def main():
        async with broker(**BENCH_BROKER) as server:
            url = broker_url(server)
            conns, task = await _spawn_residents(url)
            try:
                rows = await run_suite("LOAD", url, scale=SCALE,
                                       client_timeout=CLIENT_TIMEOUT, seed=SEED)
            finally:
                await _close_residents(conns, task)
            write_csv(rows, str(tmp_path / "load.csv"))
            for suite, r in rows:
                print(f"  {suite} {r.op:<11} rate={r.rate:<5g} mean={r.mean_ms:8.1f}ms "
                      f"p95={r.p95_ms:8.1f}ms tput={r.throughput_rps:6.2f}/s "
                      f"err={r.errors} to={r.timeouts}", flush=True)
            problems = composite_ordering_violations(rows)
            report("load suite: LOGIN >= REGISTER and FETCH >= LOGIN at every rate",
                   not problems, "; ".join(problems))
            pool = server.stats()["pool"]
            report("pool invariant during load: in_use <= capacity",
                   pool["max_in_use"] <= pool["capacity"],
                   f"max_in_use={pool['max_in_use']}")
    run(main())


@pytest.mark.slow
def test_stress_suite_no_faults_and_p95_plateau(tmp_path):
    async def main():
        async with broker(**BENCH_BROKER) as server:
            url = broker_url(server)
            conns, task = await _spawn_residents(url)
            try:
                rows = await run_suite("STRESS", url, scale=SCALE,
                                       client_timeout=CLIENT_TIMEOUT, seed=SEED)
            finally:
                await _close_residents(conns, task)
            write_csv(rows, str(tmp_path / "stress.csv"))
            for suite, r in rows:
                print(f"  {suite} {r.op:<11} rate={r.rate:<5g} mean={r.mean_ms:8.1f}ms "
                      f"p95={r.p95_ms:8.1f}ms tput={r.throughput_rps:6.2f}/s "
                      f"err={r.errors} to={r.timeouts}", flush=True)

            faults = server.stats()["transport_faults"]
            report("stress suite: zero transport-level broker faults",
                   faults == 0, f"{faults} faults")

            by_op = {}
            for _, r in rows:
                by_op.setdefault(r.op, []).append(r)
            worst = 0.0
            for op, series in by_op.items():
                series.sort(key=lambda r: r.rate)
                sat, top = series[0], series[-1]
                ratio = top.p95_ms / sat.p95_ms if sat.p95_ms > 0 else float("inf")
                worst = max(worst, ratio)
                print(f"  {op}: p95 {sat.p95_ms:.0f}ms @ {sat.rate:g}/s -> "
                      f"{top.p95_ms:.0f}ms @ {top.rate:g}/s (x{ratio:.2f})",
                      flush=True)
            report("stress suite: p95 at top rate <= 1.5x p95 at saturation rate",
                   worst <= 1.5, f"worst ratio {worst:.2f}")
    run(main())


@pytest.mark.slow
def test_soak_steady_throughput_and_zero_failures(tmp_path):
    async def main():
        async with broker(**SOAK_BROKER) as server:
            url = broker_url(server)
            rows = await run_suite("SOAK", url, scale=SCALE,
                                   client_timeout=CLIENT_TIMEOUT, seed=SEED)
            write_csv(rows, str(tmp_path / "soak.csv"))
            by_op = {r.op: r for _, r in rows}

            failures = sum(r.errors + r.timeouts for r in by_op.values())
            report("soak: zero failures across all three operations",
                   failures == 0, f"{failures} failures")

            worst_cv = max(
                sliding_window_cv(r.completion_times, duration=60.0)
                for r in by_op.values())
            report("soak: sliding-window throughput CV < 25%",
                   worst_cv < 0.25, f"worst CV {worst_cv:.1%}")

            login_only, noisy1 = subtract_throughput(by_op["LOGIN"],
                                                     by_op["REGISTER"])
            fetch_only, noisy2 = subtract_throughput(by_op["FETCH_PEERS"],
                                                     by_op["LOGIN"])
            print(f"  subtracted throughput: LOGIN-only {login_only:.2f}/s"
                  f"{' (noisy)' if noisy1 else ''}, FETCH-only {fetch_only:.2f}/s"
                  f"{' (noisy)' if noisy2 else ''}", flush=True)
            report("soak: subtracted throughputs reported and non-negative",
                   login_only >= 0.0 and fetch_only >= 0.0)
            pool = server.stats()["pool"]
            report("pool invariant during soak: in_use <= capacity",
                   pool["max_in_use"] <= pool["capacity"])
    run(main())
