"""`servicenet-peer`: marketplace operations from the command line.

Output is line-delimited JSON for scripting. One-shot subcommands open
the store, talk to the broker, print a record and exit; `watch` streams
matching requests; `run` starts the peer core daemon with the `/app`
control API for the web client.
"""

from __future__ import annotations

import asyncio
import functools
import json
import logging
import sys

import click

from servicenet.client.app import PeerApp, quote_to_dict, wanted_to_dict
from servicenet.client.filters import Filter
from servicenet.errors import ProtocolError, ServiceNetError
from servicenet.model.geo import GeoPoint
from servicenet.transport.candidates import TransportConfig


def emit(record: dict) -> None:
    print(json.dumps(record), flush=True)


def common_options(f):
    @click.option("--broker", default="ws://127.0.0.1:7320", show_default=True)
    @click.option("--store", default="peer.db", show_default=True,
                  help="local sqlite store path")
    @click.option("--lat", type=float, default=None, help="own latitude")
    @click.option("--lon", type=float, default=None, help="own longitude")
    @click.option("--filter", "filters", multiple=True,
                  help="inbound filter: '<pattern>[;key op value]...' (repeatable)")
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        return f(*args, **kwargs)

    return wrapper


def build_app(broker, store, lat, lon, filters) -> PeerApp:
    location = GeoPoint(lat, lon) if lat is not None and lon is not None else None
    return PeerApp(store_path=store, broker_url=broker, location=location,
                   filters=[Filter.parse(t) for t in filters])


def run_op(coro_fn):
    try:
        asyncio.run(coro_fn())
    except (ServiceNetError, ProtocolError) as exc:
        emit({"error": exc.code, "detail": exc.detail})
        sys.exit(1)


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING)


@main.command()
@common_options
@click.option("--email", required=True)
@click.option("--nickname", required=True)
def register(broker, store, lat, lon, filters, email, nickname):
    """Register a new peer and print its PID."""
    async def op():
        app = build_app(broker, store, lat, lon, filters)
        await app.start()
        pid, tid = await app.register(email, nickname)
        emit({"pid": pid, "tid": tid})
        await app.stop()

    run_op(op)


@main.command()
@common_options
@click.option("--credential", required=True, help="email or PID")
def login(broker, store, lat, lon, filters, credential):
    async def op():
        app = build_app(broker, store, lat, lon, filters)
        await app.start()
        pid, tid = await app.login(credential)
        emit({"pid": pid, "tid": tid})
        await app.stop()

    run_op(op)


@main.command("post-wanted")
@common_options
@click.option("--credential", required=True)
@click.option("--category", required=True)
@click.option("--description", default="")
@click.option("--wanted-lat", type=float, required=True)
@click.option("--wanted-lon", type=float, required=True)
@click.option("--remote/--no-remote", "remote_capable", default=False)
@click.option("--budget-cents", type=int, default=0)
@click.option("--currency", default="USD")
@click.option("--wait-secs", type=float, default=0.0,
              help="stay online this long collecting quotes")
def post_wanted(broker, store, lat, lon, filters, credential, category,
                description, wanted_lat, wanted_lon, remote_capable,
                budget_cents, currency, wait_secs):
    async def op():
        app = build_app(broker, store, lat, lon, filters)
        await app.start()
        await app.login(credential)
        wanted_id = await app.publish_wanted(
            category, description, GeoPoint(wanted_lat, wanted_lon),
            remote_capable, budget_cents, currency)
        emit({"wanted_id": wanted_id})
        if wait_secs > 0:
            q = app.subscribe_events()
            loop = asyncio.get_running_loop()
            deadline = loop.time() + wait_secs
            while (left := deadline - loop.time()) > 0:
                try:
                    emit(await asyncio.wait_for(q.get(), left))
                except asyncio.TimeoutError:
                    break
        await app.stop()

    run_op(op)


@main.command()
@common_options
@click.option("--credential", required=True)
@click.option("--duration", type=float, default=0.0,
              help="stop after this many seconds (0 = run until ^C)")
def watch(broker, store, lat, lon, filters, credential, duration):
    """Stream gateway-passed service requests as NDJSON."""
    async def op():
        flts = filters or ("svc.request.>",)
        app = build_app(broker, store, lat, lon, flts)
        await app.start()
        await app.login(credential)
        await app.watch()
        q = app.subscribe_events()
        loop = asyncio.get_running_loop()
        deadline = loop.time() + duration if duration > 0 else None
        try:
            while True:
                left = None if deadline is None else deadline - loop.time()
                if left is not None and left <= 0:
                    break
                try:
                    emit(await asyncio.wait_for(q.get(), left))
                except asyncio.TimeoutError:
                    break
        finally:
            await app.stop()

    run_op(op)


@main.command()
@common_options
@click.option("--credential", required=True)
@click.option("--wanted-id", required=True)
@click.option("--price-cents", type=int, required=True)
@click.option("--note", default="")
@click.option("--wait-secs", type=float, default=0.0,
              help="stay online this long awaiting acceptance")
def quote(broker, store, lat, lon, filters, credential, wanted_id,
          price_cents, note, wait_secs):
    async def op():
        app = build_app(broker, store, lat, lon, filters)
        await app.start()
        await app.login(credential)
        quote_id = await app.submit_quote(wanted_id, price_cents, note)
        emit({"quote_id": quote_id})
        if wait_secs > 0:
            q = app.subscribe_events()
            try:
                emit(await asyncio.wait_for(q.get(), wait_secs))
            except asyncio.TimeoutError:
                pass
        await app.stop()

    run_op(op)


@main.command()
@common_options
@click.option("--wanted-id", required=True)
def quotes(broker, store, lat, lon, filters, wanted_id):
    """Print the ranked quote board for one of our wanteds."""
    app = build_app(broker, store, lat, lon, filters)
    for view in app.list_quotes(wanted_id):
        emit({**quote_to_dict(view.quote),
              "provider_rating": view.provider_rating})


@main.command()
@common_options
@click.option("--credential", required=True)
@click.option("--quote-id", required=True)
def accept(broker, store, lat, lon, filters, credential, quote_id):
    async def op():
        app = build_app(broker, store, lat, lon, filters)
        await app.start()
        await app.login(credential)
        session = await app.accept_quote(quote_id)
        emit({"peer": session.remote, "state": session.state.value})
        await app.stop()

    run_op(op)


@main.command()
@common_options
@click.option("--credential", required=True)
@click.option("--peer", required=True)
@click.option("--message", required=True)
def chat(broker, store, lat, lon, filters, credential, peer, message):
    """Connect to a peer, send one message, sync histories, print the thread."""
    async def op():
        app = build_app(broker, store, lat, lon, filters)
        await app.start()
        await app.login(credential)
        await app.send_chat(peer, message)
        merged = await app.sync_chat(peer)
        for m in merged:
            emit(m.to_wire())
        await app.stop()

    run_op(op)


@main.command()
@common_options
@click.option("--credential", required=True)
@click.option("--peer", required=True)
@click.option("--score", type=int, required=True)
@click.option("--comment", default="")
def rate(broker, store, lat, lon, filters, credential, peer, score, comment):
    async def op():
        app = build_app(broker, store, lat, lon, filters)
        await app.start()
        await app.login(credential)
        rating_id = await app.rate_peer(peer, score, comment)
        emit({"rating_id": rating_id})
        await app.stop()

    run_op(op)


@main.command()
@common_options
@click.option("--credential", default=None, help="log in on startup")
@click.option("--app-listen", default="127.0.0.1:0", show_default=True,
              help="host:port for the /app control API")
def run(broker, store, lat, lon, filters, credential, app_listen):
    """Run the peer core daemon with the local control API."""
    from servicenet.client.control import ControlServer

    async def op():
        app = build_app(broker, store, lat, lon, filters)
        await app.start()
        if credential:
            await app.login(credential)
            await app.watch()
        host, _, port = app_listen.partition(":")
        control = ControlServer(app, host or "127.0.0.1", int(port or 0))
        await control.start()
        emit({"control_url": control.url, "pid": app.pid})
        try:
            await asyncio.Event().wait()
        finally:
            await control.stop()
            await app.stop()

    run_op(op)


if __name__ == "__main__":
    main()
