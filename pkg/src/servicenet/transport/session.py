"""Peer sessions and data channels.

A session walks IDLE -> SIGNALING -> CHECKING -> {CONNECTED | FAILED}
-> CLOSED; no other transition is legal. Once CONNECTED it owns exactly
one channel: a TCP stream for a host pair or broker relay frames for the
relay pair. Both carry length-prefixed tagged frames, delivered once and
in order.
"""

from __future__ import annotations

import asyncio
import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Awaitable, Callable

from servicenet.errors import ServiceNetError, ERR_STATE
from servicenet.transport.candidates import Candidate
from servicenet.transport.chat import ChatMessage, merge_histories

logger = logging.getLogger(__name__)

TAG_APP = 0
TAG_SYNC = 1

STREAM_MAGIC = b"SVCNETSTREAM\x00\x00\x00\x00"  # 16 bytes


class SessionState(Enum):
    IDLE = "IDLE"
    SIGNALING = "SIGNALING"
    CHECKING = "CHECKING"
    CONNECTED = "CONNECTED"
    FAILED = "FAILED"
    CLOSED = "CLOSED"


LEGAL_TRANSITIONS: dict[SessionState, set[SessionState]] = {
    SessionState.IDLE: {SessionState.SIGNALING},
    SessionState.SIGNALING: {SessionState.CHECKING, SessionState.FAILED},
    SessionState.CHECKING: {SessionState.CONNECTED, SessionState.FAILED},
    SessionState.CONNECTED: {SessionState.FAILED, SessionState.CLOSED},
    SessionState.FAILED: {SessionState.CLOSED},
    SessionState.CLOSED: set(),
}


class IllegalTransition(ServiceNetError):
    code = ERR_STATE


class Channel:
    """Ordered reliable tagged-frame pipe; concrete flavors below."""

    async def send(self, tag: int, data: bytes) -> None:
        raise NotImplementedError

    async def close(self) -> None:
        pass


class TcpChannel(Channel):
    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self.reader = reader
        self.writer = writer
        self._send_lock = asyncio.Lock()

    async def send(self, tag: int, data: bytes) -> None:
        frame = len(data).to_bytes(4, "big") + bytes([tag]) + data
        async with self._send_lock:
            self.writer.write(frame)
            await self.writer.drain()

    async def read_frames(self):
        """Yield (tag, data) until EOF."""
        while True:
            try:
                header = await self.reader.readexactly(5)
            except (asyncio.IncompleteReadError, ConnectionResetError):
                return
            size = int.from_bytes(header[:4], "big")
            data = await self.reader.readexactly(size)
            yield header[4], data

    async def close(self) -> None:
        try:
            self.writer.close()
            await self.writer.wait_closed()
        except (ConnectionResetError, OSError):
            pass


class RelayChannel(Channel):
    """Data channel over broker relay frames, muxed by session id."""

    def __init__(self, send_relay: Callable[[str, bytes], Awaitable[None]],
                 remote: str, channel_name: str):
        self._send_relay = send_relay
        self.remote = remote
        self.channel_name = channel_name

    async def send(self, tag: int, data: bytes) -> None:
        await self._send_relay(self.channel_name, bytes([tag]) + data)


@dataclass
class PairResult:
    ok: bool
    local: Candidate | None = None
    remote: Candidate | None = None


class PeerSession:
    def __init__(self, remote: str, session_id: str, role: str):
        self.remote = remote
        self.session_id = session_id
        self.role = role                       # "offerer" | "answerer"
        self.state = SessionState.IDLE
        self.selected_pair: tuple[Candidate, Candidate] | None = None
        self.channel: Channel | None = None
        self.chat_log: list[ChatMessage] = []
        self.sync_skipped = 0
        self.on_message: Callable[[bytes], None] | None = None
        self.on_state: Callable[[SessionState], None] | None = None
        self.on_chat_merged: Callable[[list[ChatMessage]], None] | None = None
        self.connected = asyncio.Event()
        self.done = asyncio.Event()            # FAILED or CLOSED
        self._sync_reply: asyncio.Future | None = None
        self._tasks: list[asyncio.Task] = []

    # -- state machine -----------------------------------------------------

    def transition(self, new: SessionState) -> None:
        if new not in LEGAL_TRANSITIONS[self.state]:
            raise IllegalTransition(f"{self.state.value} -> {new.value}")
        self.state = new
        if new is SessionState.CONNECTED:
            self.connected.set()
        if new in (SessionState.FAILED, SessionState.CLOSED):
            self.done.set()
        if self.on_state:
            self.on_state(new)

    def _fail(self) -> None:
        if self.state not in (SessionState.FAILED, SessionState.CLOSED):
            self.transition(SessionState.FAILED)

    # -- data channel ------------------------------------------------------

    async def send(self, data: bytes) -> None:
        if self.state is not SessionState.CONNECTED:
            raise ServiceNetError(f"cannot send in state {self.state.value}",
                                  code=ERR_STATE)
        try:
            await self.channel.send(TAG_APP, data)
        except (ConnectionError, OSError) as exc:
            self._fail()
            raise ServiceNetError(f"channel broke: {exc}", code=ERR_STATE) from exc

    def attach_channel(self, channel: Channel) -> None:
        self.channel = channel
        if isinstance(channel, TcpChannel):
            self._tasks.append(asyncio.create_task(self._tcp_read_loop(channel)))

    async def _tcp_read_loop(self, channel: TcpChannel) -> None:
        async for tag, data in channel.read_frames():
            self.handle_frame(tag, data)
        if self.state is SessionState.CONNECTED:
            self._fail()

    def handle_frame(self, tag: int, data: bytes) -> None:
        """Entry point for inbound channel frames (TCP loop or relay mux)."""
        if tag == TAG_APP:
            if self.on_message:
                self.on_message(data)
        elif tag == TAG_SYNC:
            try:
                msg = json.loads(data)
            except ValueError:
                logger.warning("dropping malformed sync frame")
                return
            asyncio.create_task(self._handle_sync(msg))

    async def close(self) -> None:
        if self.state in (SessionState.CONNECTED,):
            self.transition(SessionState.CLOSED)
        elif self.state is SessionState.FAILED:
            self.transition(SessionState.CLOSED)
        elif self.state is not SessionState.CLOSED:
            self._fail()
            self.transition(SessionState.CLOSED)
        for t in self._tasks:
            t.cancel()
        if self.channel:
            await self.channel.close()

    # -- chat sync ---------------------------------------------------------

    async def sync_chat(self, local_history: list[ChatMessage],
                        timeout: float = 10.0) -> list[ChatMessage]:
        """Exchange digests and deltas until both sides hold the union."""
        if self.state is not SessionState.CONNECTED:
            raise ServiceNetError(f"cannot sync in state {self.state.value}",
                                  code=ERR_STATE)
        self._sync_reply = asyncio.get_running_loop().create_future()
        my_ids = [m.msg_id for m in local_history]
        await self.channel.send(TAG_SYNC, json.dumps(
            {"op": "digest", "ids": my_ids}).encode())
        try:
            reply = await asyncio.wait_for(self._sync_reply, timeout)
        finally:
            self._sync_reply = None
        their_ids = set(reply.get("ids", []))
        incoming = self._parse_messages(reply.get("msgs", []))
        merged = merge_histories(local_history, incoming)
        push = [m.to_wire() for m in local_history if m.msg_id not in their_ids]
        await self.channel.send(TAG_SYNC, json.dumps(
            {"op": "push", "msgs": push}).encode())
        self.chat_log = merged
        return merged

    async def _handle_sync(self, msg: dict) -> None:
        op = msg.get("op")
        if op == "digest":
            their_ids = set(msg.get("ids", []))
            missing = [m.to_wire() for m in self.chat_log
                       if m.msg_id not in their_ids]
            await self.channel.send(TAG_SYNC, json.dumps({
                "op": "reply",
                "ids": [m.msg_id for m in self.chat_log],
                "msgs": missing,
            }).encode())
        elif op == "reply":
            if self._sync_reply is not None and not self._sync_reply.done():
                self._sync_reply.set_result(msg)
        elif op == "push":
            incoming = self._parse_messages(msg.get("msgs", []))
            self.chat_log = merge_histories(self.chat_log, incoming)
            if self.on_chat_merged:
                self.on_chat_merged(self.chat_log)

    def _parse_messages(self, raw: list) -> list[ChatMessage]:
        out = []
        for item in raw:
            try:
                out.append(ChatMessage.from_wire(item))
            except Exception:
                self.sync_skipped += 1
                logger.warning("skipping malformed chat record: %r", item)
        return out
