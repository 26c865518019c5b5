import asyncio
import contextlib

import pytest

from servicenet.broker.server import BrokerServer


def run(coro):
    return asyncio.run(coro)


@contextlib.asynccontextmanager
async def broker(**kwargs):
    kwargs.setdefault("db_path", ":memory:")
    server = BrokerServer("127.0.0.1", 0, **kwargs)
    await server.start()
    try:
        yield server
    finally:
        await server.stop()


def broker_url(server: BrokerServer) -> str:
    return f"ws://127.0.0.1:{server.port}/ws"


@pytest.fixture
def tmp_store(tmp_path):
    return str(tmp_path / "peer.db")
