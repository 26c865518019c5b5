"""Load, stress and soak benchmarking of the broker."""

from servicenet.bench.stats import RunStats, percentile, subtract_throughput
from servicenet.bench.runner import Scenario, run_scenario, run_suite, SUITE_RATES

__all__ = [
    "RunStats",
    "percentile",
    "subtract_throughput",
    "Scenario",
    "run_scenario",
    "run_suite",
    "SUITE_RATES",
]
