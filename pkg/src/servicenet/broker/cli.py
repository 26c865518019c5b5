"""`servicenet-broker`: run the rendezvous broker."""

from __future__ import annotations

import asyncio
import logging

import click

from servicenet.broker.server import BrokerServer


@click.command()
@click.option("--listen", default="127.0.0.1:7320", show_default=True,
              help="host:port to bind")
@click.option("--db-path", default=":memory:", show_default=True,
              help="registry sqlite path")
@click.option("--db-pool-cap", default=500, show_default=True, type=int,
              help="max concurrent database connections")
@click.option("--db-delay-ms", default=0.0, show_default=True, type=float,
              help="fixed per-query service delay (saturation modeling)")
@click.option("--heartbeat-secs", default=15.0, show_default=True, type=float)
@click.option("-v", "--verbose", is_flag=True)
def main(listen: str, db_path: str, db_pool_cap: int, db_delay_ms: float,
         heartbeat_secs: float, verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    host, _, port = listen.partition(":")
    server = BrokerServer(
        host=host or "127.0.0.1",
        port=int(port or 0),
        db_path=db_path,
        pool_capacity=db_pool_cap,
        db_delay_ms=db_delay_ms,
        heartbeat_secs=heartbeat_secs,
    )

    async def run():
        await server.start()
        print(f"listening on {server.url}", flush=True)
        try:
            await asyncio.Event().wait()
        finally:
            await server.stop()

    try:
        asyncio.run(run())
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
