"""Open-loop load generation against a live broker.

Virtual clients arrive on a fixed schedule regardless of completions,
modeling a client arrival rate. Operations are composite: LOGIN first
registers and then logs in; FETCH_PEERS does all three. Reported
response time is the accumulated total across the stages, so LOGIN
times dominate REGISTER and FETCH_PEERS dominates LOGIN by
construction.

Each request carries a client-side deadline (as real load tools do);
a timed-out client gives up and is counted, which is what bounds
response times in the saturated regime.
"""

from __future__ import annotations

import asyncio
import csv
import logging
import time
from dataclasses import dataclass, field
from random import Random

from servicenet.client.connection import BrokerConnection
from servicenet.errors import ProtocolError, ValidationError
from servicenet.bench.stats import RunStats, average_stats

logger = logging.getLogger(__name__)

OPS = ("REGISTER", "LOGIN", "FETCH_PEERS")

# Arrival rates per suite at scale 1.0; LOAD/STRESS run 10 s per rate.
SUITE_RATES = {
    "LOAD": [50, 100, 200, 300, 500],
    "STRESS": [600, 700, 800, 1000],
    "SOAK": [300],
}
DEFAULT_DURATION_S = 10.0
DEFAULT_SOAK_DURATION_S = 60.0

_FIRST = ["alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi",
          "ivan", "judy", "mallory", "niaj", "olivia", "peggy", "rupert",
          "sybil", "trent", "victor", "wendy", "yves"]
_LAST = ["smith", "jones", "brown", "taylor", "wilson", "davies", "evans",
         "thomas", "johnson", "roberts", "walker", "wright", "green", "hall",
         "wood", "clarke", "white", "harris", "martin", "lewis"]


@dataclass
class Scenario:
    op: str
    rate: float            # clients per second
    duration: float        # seconds of arrivals
    repeats: int = 5

    def __post_init__(self):
        if self.op not in OPS:
            raise ValidationError(f"unknown op {self.op!r}")


@dataclass
class SampleRow:
    suite: str
    op: str
    rate: float
    repeat: int
    latency_ms: float
    status: str            # ok | error | timeout


def synth_identity(rng: Random, namespace: str, i: int,
                   allow_collisions: bool) -> tuple[str, str]:
    """Random realistic nickname and email. Namespaced emails are unique
    per run; --allow-collisions reproduces duplicate-data rejections."""
    first, last = rng.choice(_FIRST), rng.choice(_LAST)
    nickname = f"{first.title()} {last.title()}"
    if allow_collisions:
        email = f"{first}.{last}@example.com"
    else:
        email = f"{first}.{last}.{namespace}.{i}@example.com"
    return nickname, email


async def _one_client(url: str, op: str, nickname: str, email: str,
                      timeout: float) -> tuple[float | None, str, float, list[float]]:
    """Run one composite operation.

    Returns (latency_ms, status, done_at, stage_ms) where stage_ms holds
    the accumulated time at each completed stage boundary, so a
    FETCH_PEERS client yields its own register / login / fetch totals.
    """
    uuid = bytes(Random(hash(email)).randbytes(16))
    t0 = time.perf_counter()
    stages: list[float] = []
    conn = BrokerConnection(url, request_timeout=timeout)
    try:
        await asyncio.wait_for(conn.connect(), timeout)
        await conn.register(email, nickname, uuid, timeout=timeout)
        stages.append((time.perf_counter() - t0) * 1000.0)
        if op in ("LOGIN", "FETCH_PEERS"):
            await conn.login(email, uuid, timeout=timeout)
            stages.append((time.perf_counter() - t0) * 1000.0)
        if op == "FETCH_PEERS":
            await conn.fetch_peers(timeout=timeout)
            stages.append((time.perf_counter() - t0) * 1000.0)
        return stages[-1], "ok", time.perf_counter(), stages
    except asyncio.TimeoutError:
        return None, "timeout", time.perf_counter(), stages
    except Exception:
        return None, "error", time.perf_counter(), stages
    finally:
        try:
            await conn.close()
        except Exception:
            pass


async def drain_broker(url: str, timeout: float = 120.0) -> None:
    """Wait until the broker's query pool is idle. Clients that gave up
    leave queued work behind; back-to-back runs must not inherit it."""
    conn = BrokerConnection(url, request_timeout=10.0)
    try:
        await asyncio.wait_for(conn.connect(), 10.0)
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            pool = (await conn.stats())["pool"]
            if pool["in_use"] == 0 and pool["queued"] == 0:
                return
            await asyncio.sleep(0.5)
        logger.warning("broker pool still busy after %.0fs drain window", timeout)
    except Exception:
        logger.warning("drain check failed", exc_info=True)
    finally:
        try:
            await conn.close()
        except Exception:
            pass


async def _run_once(scenario: Scenario, url: str, repeat: int,
                    client_timeout: float, allow_collisions: bool,
                    rng: Random) -> tuple[RunStats, list[tuple[float | None, str]]]:
    namespace = f"r{time.time_ns():x}"
    loop = asyncio.get_running_loop()
    start = loop.time()
    n = int(round(scenario.rate * scenario.duration))
    tasks: list[asyncio.Task] = []
    for i in range(n):
        delay = start + i / scenario.rate - loop.time()
        if delay > 0:
            await asyncio.sleep(delay)
        nickname, email = synth_identity(rng, namespace, i, allow_collisions)
        tasks.append(asyncio.create_task(
            _one_client(url, scenario.op, nickname, email, client_timeout)))
    results = await asyncio.gather(*tasks) if tasks else []
    wall_start = time.perf_counter() - (loop.time() - start)
    latencies = [r[0] for r in results if r[1] == "ok"]
    errors = sum(1 for r in results if r[1] == "error")
    timeouts = sum(1 for r in results if r[1] == "timeout")
    completions = [r[2] - wall_start for r in results if r[1] == "ok"]
    stage_lists = [r[3] for r in results if r[1] == "ok"]
    stage_means = []
    if stage_lists:
        width = len(stage_lists[0])
        stage_means = [sum(s[i] for s in stage_lists) / len(stage_lists)
                       for i in range(width)]
    stats = RunStats.from_samples(
        scenario.op, scenario.rate, scenario.duration, latencies,
        errors=errors, timeouts=timeouts, completion_times=completions,
        stage_mean_ms=stage_means)
    return stats, [(r[0], r[1]) for r in results]


async def run_scenario(scenario: Scenario, url: str,
                       client_timeout: float = 5.0,
                       allow_collisions: bool = False,
                       suite: str = "", seed: int | None = None,
                       samples: list[SampleRow] | None = None,
                       ) -> tuple[RunStats, list[RunStats]]:
    """Run the scenario `repeats` times; the reported stats are the
    arithmetic mean of the per-run statistics."""
    if scenario.rate <= 0:
        empty = RunStats.from_samples(scenario.op, scenario.rate,
                                      scenario.duration, [], errors=0)
        return empty, []
    rng = Random(seed)
    runs = []
    for repeat in range(scenario.repeats):
        stats, raw = await _run_once(scenario, url, repeat, client_timeout,
                                     allow_collisions, rng)
        await drain_broker(url)
        runs.append(stats)
        if samples is not None:
            for latency, status in raw:
                samples.append(SampleRow(suite, scenario.op, scenario.rate,
                                         repeat, latency or -1.0, status))
        logger.info("%s rate=%g repeat=%d: mean=%.1fms p95=%.1fms ok=%d "
                    "err=%d timeout=%d", scenario.op, scenario.rate, repeat,
                    stats.mean_ms, stats.p95_ms, stats.samples, stats.errors,
                    stats.timeouts)
    return average_stats(runs), runs


async def run_suite(kind: str, url: str, scale: float = 1.0,
                    duration: float = DEFAULT_DURATION_S,
                    soak_duration: float = DEFAULT_SOAK_DURATION_S,
                    repeats: int = 5,
                    client_timeout: float = 5.0,
                    allow_collisions: bool = False,
                    seed: int | None = None,
                    samples: list[SampleRow] | None = None,
                    ) -> list[tuple[str, RunStats]]:
    """One row of averaged stats per (op, rate)."""
    kind = kind.upper()
    if kind not in SUITE_RATES:
        raise ValidationError(f"unknown suite {kind!r}")
    if scale <= 0:
        raise ValidationError("scale must be positive")
    rates = [r * scale for r in SUITE_RATES[kind]]
    if kind == "SOAK":
        duration = soak_duration
        repeats = 1
    rows = []
    for rate in rates:
        for op in OPS:
            scenario = Scenario(op=op, rate=rate, duration=duration,
                                repeats=repeats)
            avg, _ = await run_scenario(scenario, url, client_timeout,
                                        allow_collisions, suite=kind,
                                        seed=seed, samples=samples)
            rows.append((kind, avg))
    return rows


def composite_ordering_violations(rows: list[tuple[str, RunStats]]) -> list[str]:
    """Check the accumulation ordering at every rate.

    Response times accumulate per client: a LOGIN client's total includes
    its own register, a FETCH_PEERS client's total includes both. The
    comparison therefore uses each scenario's stage-boundary means (the
    same clients at successive stages), not means across independently
    run scenarios, whose timed-out survivors are different populations.
    """
    problems = []
    names = {1: ["REGISTER"], 2: ["REGISTER", "LOGIN"],
             3: ["REGISTER", "LOGIN", "FETCH"]}
    for _, r in rows:
        if r.samples == 0:
            problems.append(f"{r.op} rate {r.rate:g}: no completed samples")
            continue
        labels = names.get(len(r.stage_mean_ms), [])
        for i in range(1, len(r.stage_mean_ms)):
            if r.stage_mean_ms[i] < r.stage_mean_ms[i - 1]:
                problems.append(
                    f"{r.op} rate {r.rate:g}: {labels[i]} stage mean "
                    f"{r.stage_mean_ms[i]:.1f}ms < {labels[i - 1]} stage mean "
                    f"{r.stage_mean_ms[i - 1]:.1f}ms")
        if r.stage_mean_ms and abs(r.stage_mean_ms[-1] - r.mean_ms) > 1e-6:
            problems.append(f"{r.op} rate {r.rate:g}: final stage mean "
                            f"disagrees with reported mean")
    return problems


CSV_HEADER = ["suite", "op", "rate", "samples", "mean_ms", "median_ms",
              "p95_ms", "p99_ms", "throughput_rps", "errors"]


def write_csv(rows: list[tuple[str, RunStats]], path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for suite, r in rows:
            w.writerow([suite, r.op, r.rate, r.samples,
                        f"{r.mean_ms:.3f}", f"{r.median_ms:.3f}",
                        f"{r.p95_ms:.3f}", f"{r.p99_ms:.3f}",
                        f"{r.throughput_rps:.3f}", r.errors + r.timeouts])


def write_samples(samples: list[SampleRow], path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["suite", "op", "rate", "repeat", "latency_ms", "status"])
        for s in samples:
            w.writerow([s.suite, s.op, s.rate, s.repeat,
                        f"{s.latency_ms:.3f}", s.status])
