"""Command line entry point for the load harness."""

from __future__ import annotations

import asyncio
import csv
import logging
import os
from collections import defaultdict

import click

from servicenet.bench.runner import (
    run_suite, write_csv, write_samples, composite_ordering_violations,
    SUITE_RATES,
)


@click.group()
def main():
    """Benchmark a broker and plot the results."""


@main.command()
@click.option("--suite", "suites", multiple=True,
              type=click.Choice(["load", "stress", "soak"]),
              default=["load"], show_default=True)
@click.option("--broker", default="ws://127.0.0.1:8787/ws", show_default=True)
@click.option("--scale", default=1.0, show_default=True,
              help="Multiplier applied to every suite arrival rate.")
@click.option("--duration", default=10.0, show_default=True)
@click.option("--soak-duration", default=60.0, show_default=True)
@click.option("--repeats", default=5, show_default=True)
@click.option("--client-timeout", default=5.0, show_default=True,
              help="Per-request deadline for virtual clients, seconds.")
@click.option("--allow-collisions", is_flag=True,
              help="Draw emails from a small pool so duplicates occur.")
@click.option("--seed", type=int, default=None)
@click.option("--out", default="results.csv", show_default=True)
@click.option("--samples-out", default=None,
              help="Also dump every individual sample to this CSV.")
def run(suites, broker, scale, duration, soak_duration, repeats,
        client_timeout, allow_collisions, seed, out, samples_out):
    """Run one or more suites against a live broker."""
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    samples = [] if samples_out else None
    rows = []
    for suite in suites:
        rows.extend(asyncio.run(run_suite(
            suite, broker, scale=scale, duration=duration,
            soak_duration=soak_duration, repeats=repeats,
            client_timeout=client_timeout,
            allow_collisions=allow_collisions, seed=seed, samples=samples)))
    write_csv(rows, out)
    if samples_out:
        write_samples(samples, samples_out)
    for problem in composite_ordering_violations(rows):
        click.echo(f"warning: {problem}", err=True)
    click.echo(f"wrote {len(rows)} rows to {out}")


@main.command()
@click.argument("results", type=click.Path(exists=True))
@click.option("--out", default="figs", show_default=True,
              help="Directory for figures (and series data).")
def plot(results, out):
    """Plot mean/p95 response time and throughput versus arrival rate."""
    series = defaultdict(list)  # (suite, op) -> [(rate, row)]
    with open(results, newline="") as f:
        for row in csv.DictReader(f):
            series[(row["suite"], row["op"])].append(
                (float(row["rate"]), row))
    os.makedirs(out, exist_ok=True)
    for (suite, op), points in series.items():
        points.sort()
        path = os.path.join(out, f"{suite.lower()}_{op.lower()}.tsv")
        with open(path, "w") as f:
            f.write("rate\tmean_ms\tp95_ms\tthroughput_rps\terrors\n")
            for rate, row in points:
                f.write(f"{rate}\t{row['mean_ms']}\t{row['p95_ms']}\t"
                        f"{row['throughput_rps']}\t{row['errors']}\n")
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        click.echo("matplotlib not installed; wrote series data only")
        return
    for metric, label in [("mean_ms", "mean response time (ms)"),
                          ("p95_ms", "p95 response time (ms)"),
                          ("throughput_rps", "throughput (ops/s)")]:
        fig, ax = plt.subplots()
        for (suite, op), points in sorted(series.items()):
            xs = [p[0] for p in points]
            ys = [float(p[1][metric]) for p in points]
            ax.plot(xs, ys, marker="o", label=f"{suite} {op}")
        ax.set_xlabel("arrival rate (clients/s)")
        ax.set_ylabel(label)
        ax.legend()
        fig.savefig(os.path.join(out, f"{metric}.png"), dpi=120)
        plt.close(fig)
    click.echo(f"wrote figures to {out}")


if __name__ == "__main__":
    main()
