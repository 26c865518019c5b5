"""Latency and throughput statistics.

Percentiles use the nearest-rank method: the value at 1-based index
ceil(q*n) of the sorted samples.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field

from servicenet.errors import ValidationError


def percentile(samples: list[float], q: float) -> float:
    if not samples:
        raise ValidationError("percentile of empty sample set")
    if not 0.0 < q <= 1.0:
        raise ValidationError(f"q must be in (0,1], got {q}")
    ordered = sorted(samples)
    rank = math.ceil(q * len(ordered))
    return ordered[rank - 1]


@dataclass
class RunStats:
    op: str
    rate: float
    duration: float
    samples: int
    mean_ms: float
    median_ms: float
    p95_ms: float
    p99_ms: float
    throughput_rps: float
    errors: int
    timeouts: int = 0
    completion_times: list[float] = field(default_factory=list, repr=False)
    # mean accumulated time at each composite stage boundary, over the
    # clients that completed the whole operation
    stage_mean_ms: list[float] = field(default_factory=list)

    @classmethod
    def from_samples(cls, op: str, rate: float, duration: float,
                     latencies_ms: list[float], errors: int = 0, timeouts: int = 0,
                     completion_times: list[float] | None = None,
                     stage_mean_ms: list[float] | None = None) -> "RunStats":
        if not latencies_ms:
            return cls(op=op, rate=rate, duration=duration, samples=0,
                       mean_ms=0.0, median_ms=0.0, p95_ms=0.0, p99_ms=0.0,
                       throughput_rps=0.0, errors=errors, timeouts=timeouts,
                       completion_times=completion_times or [])
        return cls(
            op=op, rate=rate, duration=duration, samples=len(latencies_ms),
            mean_ms=statistics.fmean(latencies_ms),
            median_ms=percentile(latencies_ms, 0.5),
            p95_ms=percentile(latencies_ms, 0.95),
            p99_ms=percentile(latencies_ms, 0.99),
            throughput_rps=len(latencies_ms) / duration if duration > 0 else 0.0,
            errors=errors,
            timeouts=timeouts,
            completion_times=completion_times or [],
            stage_mean_ms=list(stage_mean_ms or []),
        )


def average_stats(runs: list[RunStats]) -> RunStats:
    """Arithmetic mean of per-run statistics (the repeats average)."""
    if not runs:
        raise ValidationError("no runs to average")
    n = len(runs)
    head = runs[0]
    merged_completions: list[float] = []
    for r in runs:
        merged_completions.extend(r.completion_times)
    staged = [r for r in runs if r.stage_mean_ms]
    stage_means = []
    if staged:
        width = min(len(r.stage_mean_ms) for r in staged)
        stage_means = [sum(r.stage_mean_ms[i] for r in staged) / len(staged)
                       for i in range(width)]
    # latency figures average over runs that produced samples; runs with
    # zero completions would otherwise drag the average toward zero
    live = [r for r in runs if r.samples > 0] or runs
    m = len(live)
    return RunStats(
        op=head.op, rate=head.rate, duration=head.duration,
        samples=sum(r.samples for r in runs),
        mean_ms=sum(r.mean_ms for r in live) / m,
        median_ms=sum(r.median_ms for r in live) / m,
        p95_ms=sum(r.p95_ms for r in live) / m,
        p99_ms=sum(r.p99_ms for r in live) / m,
        throughput_rps=sum(r.throughput_rps for r in runs) / n,
        errors=sum(r.errors for r in runs),
        timeouts=sum(r.timeouts for r in runs),
        completion_times=merged_completions,
        stage_mean_ms=stage_means,
    )


def subtract_throughput(composite: RunStats, baseline: RunStats) -> tuple[float, bool]:
    """Composite op's own throughput: composite minus its prerequisite.

    Returns (requests/second, noise_warning); negative differences are
    floored at 0 with the warning flag set.
    """
    if composite.rate != baseline.rate or composite.duration != baseline.duration:
        raise ValidationError("throughput subtraction needs matching rate and duration")
    diff = composite.throughput_rps - baseline.throughput_rps
    if diff < 0:
        return 0.0, True
    return diff, False


def sliding_window_cv(completion_times: list[float], duration: float,
                      window_s: float = 10.0, step_s: float = 1.0) -> float:
    """Coefficient of variation of throughput over sliding windows."""
    if not completion_times or duration < window_s:
        return 0.0
    ordered = sorted(completion_times)
    counts = []
    start = 0.0
    while start + window_s <= duration + 1e-9:
        lo = _bisect(ordered, start)
        hi = _bisect(ordered, start + window_s)
        counts.append(hi - lo)
        start += step_s
    mean = statistics.fmean(counts)
    if mean == 0:
        return 0.0
    return statistics.pstdev(counts) / mean


def _bisect(ordered: list[float], x: float) -> int:
    import bisect
    return bisect.bisect_left(ordered, x)
