"""Client side of the broker WebSocket protocol.

Request/response frames are correlated by a client-chosen `seq`; inbound
events (MSG, SIGNAL, RELAY, eviction) are fanned out to callbacks set by
the owner.
"""

from __future__ import annotations

import asyncio
import base64
import itertools
import json
import logging
from typing import Awaitable, Callable

from websockets.asyncio.client import connect
from websockets.exceptions import ConnectionClosed

from servicenet.errors import ProtocolError
from servicenet.pubsub.router import Envelope

logger = logging.getLogger(__name__)

EventCb = Callable[..., None | Awaitable[None]]


class BrokerConnection:
    def __init__(self, url: str, request_timeout: float = 10.0):
        self.url = url
        self.request_timeout = request_timeout
        self.pid: str | None = None
        self.tid: str | None = None
        self._ws = None
        self._reader: asyncio.Task | None = None
        self._seq = itertools.count(1)
        self._pending: dict[int, asyncio.Future] = {}
        self._send_lock = asyncio.Lock()
        # Event callbacks, set by the owner.
        self.on_msg: EventCb | None = None        # (sid, Envelope)
        self.on_signal: EventCb | None = None     # (from_pid, msg dict)
        self.on_relay: EventCb | None = None      # (from_pid, channel, data bytes)
        self.on_evicted: EventCb | None = None    # ()
        self.on_closed: EventCb | None = None     # ()
        self.closed = asyncio.Event()

    async def connect(self) -> None:
        self._ws = await connect(self.url, max_size=2 * 1024 * 1024)
        self._reader = asyncio.create_task(self._read_loop())

    async def close(self) -> None:
        if self._ws is not None:
            try:
                await self._ws.close()
            except ConnectionClosed:
                pass
        if self._reader is not None:
            await asyncio.gather(self._reader, return_exceptions=True)

    @property
    def connected(self) -> bool:
        return self._ws is not None and not self.closed.is_set()

    # -- request/response --------------------------------------------------

    async def request(self, ftype: str, timeout: float | None = None, **fields) -> dict:
        seq = next(self._seq)
        frame = {"type": ftype, "seq": seq, **fields}
        fut: asyncio.Future = asyncio.get_running_loop().create_future()
        self._pending[seq] = fut
        try:
            async with self._send_lock:
                await self._ws.send(json.dumps(frame))
            return await asyncio.wait_for(fut, timeout or self.request_timeout)
        finally:
            self._pending.pop(seq, None)

    async def register(self, email: str, nickname: str, uuid: bytes,
                       timeout: float | None = None) -> tuple[str, str]:
        resp = await self.request("REGISTER", email=email, nickname=nickname,
                                  uuid=base64.b64encode(uuid).decode(), timeout=timeout)
        self.pid, self.tid = resp["pid"], resp["tid"]
        return self.pid, self.tid

    async def login(self, credential: str, uuid: bytes,
                    timeout: float | None = None) -> tuple[str, str]:
        resp = await self.request("LOGIN", credential=credential,
                                  uuid=base64.b64encode(uuid).decode(), timeout=timeout)
        self.pid, self.tid = resp["pid"], resp["tid"]
        return self.pid, self.tid

    async def fetch_peers(self, timeout: float | None = None) -> list[dict]:
        resp = await self.request("FETCH_PEERS", timeout=timeout)
        return resp["peers"]

    async def subscribe(self, pattern: str) -> int:
        resp = await self.request("SUB", pattern=pattern)
        return resp["sid"]

    async def unsubscribe(self, sid: int) -> None:
        await self.request("UNSUB", sid=sid)

    async def publish(self, subject: str, attrs: dict | None = None,
                      payload: bytes = b"", msg_id: str | None = None) -> int:
        fields = {
            "subject": subject,
            "attrs": attrs or {},
            "payload_b64": base64.b64encode(payload).decode(),
        }
        if msg_id is not None:
            fields["id"] = msg_id
        resp = await self.request("PUB", **fields)
        return resp["delivered"]

    async def signal(self, to: str, msg: dict) -> None:
        await self.request("SIGNAL", to=to, msg=msg)

    async def relay(self, to: str, channel: str, data: bytes) -> None:
        await self.request("RELAY", to=to, channel=channel,
                           data_b64=base64.b64encode(data).decode())

    async def ping(self) -> None:
        await self.request("PING")

    async def stats(self) -> dict:
        resp = await self.request("STATS")
        return resp["stats"]

    async def disconnect(self) -> None:
        try:
            await self.request("DISCONNECT")
        except (ProtocolError, ConnectionClosed, asyncio.TimeoutError):
            pass
        await self.close()

    # -- inbound -----------------------------------------------------------

    async def _read_loop(self) -> None:
        try:
            async for raw in self._ws:
                try:
                    frame = json.loads(raw)
                except ValueError:
                    logger.warning("dropping unparseable frame")
                    continue
                self._handle_frame(frame)
        except ConnectionClosed:
            pass
        finally:
            self.closed.set()
            for fut in self._pending.values():
                if not fut.done():
                    fut.set_exception(ConnectionClosed(None, None))
                    fut.exception()  # mark retrieved even if the waiter timed out
            self._fire(self.on_closed)

    def _handle_frame(self, frame: dict) -> None:
        ftype = frame.get("type")
        seq = frame.get("seq")
        if seq is not None and seq in self._pending:
            fut = self._pending[seq]
            if not fut.done():
                if ftype == "ERROR":
                    fut.set_exception(ProtocolError(frame.get("code", "ERR_UNKNOWN"),
                                                    frame.get("detail", "")))
                else:
                    fut.set_result(frame)
            return
        if ftype == "MSG":
            self._fire(self.on_msg, frame["sid"], Envelope.from_wire(frame["envelope"]))
        elif ftype == "SIGNAL":
            self._fire(self.on_signal, frame["from"], frame["msg"])
        elif ftype == "RELAY":
            data = base64.b64decode(frame.get("data_b64") or "")
            self._fire(self.on_relay, frame["from"], frame.get("channel", ""), data)
        elif ftype == "ERROR" and frame.get("code") == "ERR_EVICTED":
            self._fire(self.on_evicted)
        else:
            logger.debug("unhandled frame type %r", ftype)

    def _fire(self, cb: EventCb | None, *args) -> None:
        if cb is None:
            return
        result = cb(*args)
        if asyncio.iscoroutine(result):
            asyncio.create_task(result)
