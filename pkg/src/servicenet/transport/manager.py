"""P2P connection orchestration.

The offerer gathers candidates, signals an OFFER through the broker,
receives the ANSWER, probes candidate pairs in priority order, then
opens the data channel over the winning pair, a TCP stream for a
host pair, broker relay frames otherwise. Probes are nonce datagrams;
the receiver reflects them with a flag bit set.
"""

from __future__ import annotations

import asyncio
import itertools
import logging
import os
import secrets
from typing import Callable

from servicenet.client.connection import BrokerConnection
from servicenet.errors import (
    ERR_OFFLINE,
    ERR_TIMEOUT,
    ERR_UNREACHABLE,
    ProtocolError,
    ServiceNetError,
)
from servicenet.transport.candidates import Candidate, TransportConfig
from servicenet.transport.session import (
    PairResult,
    PeerSession,
    RelayChannel,
    SessionState,
    STREAM_MAGIC,
    TcpChannel,
)

logger = logging.getLogger(__name__)

PROBE_MAGIC = b"SVCNETP2PPROBE\x00\x00"   # 16 bytes; [-1] == 1 marks an echo
PROBE_LEN = 16 + 16 + 8                    # magic + session_id + nonce
RELAY_PROBE_CHANNEL = "probe"


def make_probe(session_id: bytes, nonce: bytes, echo: bool = False) -> bytes:
    magic = PROBE_MAGIC[:-1] + (b"\x01" if echo else b"\x00")
    return magic + session_id + nonce


def parse_probe(data: bytes) -> tuple[bool, bytes, bytes] | None:
    """Returns (is_echo, session_id, nonce) or None for non-probe data."""
    if len(data) != PROBE_LEN or data[:15] != PROBE_MAGIC[:15]:
        return None
    return (data[15] == 1, data[16:32], data[32:40])


class _ProbeProtocol(asyncio.DatagramProtocol):
    def __init__(self, manager: "P2PManager"):
        self.manager = manager
        self.transport = None

    def connection_made(self, transport):
        self.transport = transport

    def datagram_received(self, data, addr):
        parsed = parse_probe(data)
        if parsed is None:
            return
        is_echo, session_id, nonce = parsed
        if is_echo:
            self.manager._resolve_probe(nonce)
        else:
            self.transport.sendto(make_probe(session_id, nonce, echo=True), addr)


class P2PManager:
    def __init__(self, conn: BrokerConnection, config: TransportConfig | None = None):
        self.conn = conn
        self.config = config or TransportConfig()
        self.sessions: dict[str, PeerSession] = {}
        self.on_incoming_session: Callable[[PeerSession], None] | None = None
        self._probe_waiters: dict[bytes, asyncio.Future] = {}
        self._udp_transport = None
        self._udp_port = 0
        self._tcp_server = None
        self._tcp_port = 0
        self._orphan_streams: dict[str, TcpChannel] = {}
        conn.on_signal = self._on_signal
        conn.on_relay = self._on_relay

    async def start(self) -> None:
        loop = asyncio.get_running_loop()
        self._udp_transport, _ = await loop.create_datagram_endpoint(
            lambda: _ProbeProtocol(self), local_addr=("0.0.0.0", 0))
        self._udp_port = self._udp_transport.get_extra_info("sockname")[1]
        self._tcp_server = await asyncio.start_server(
            self._accept_stream, "0.0.0.0", 0)
        self._tcp_port = self._tcp_server.sockets[0].getsockname()[1]

    async def stop(self) -> None:
        for session in list(self.sessions.values()):
            await session.close()
        if self._udp_transport:
            self._udp_transport.close()
        if self._tcp_server:
            self._tcp_server.close()
            await self._tcp_server.wait_closed()

    # -- candidates --------------------------------------------------------

    def gather_candidates(self) -> list[Candidate]:
        cands = []
        if self.config.host_enabled:
            for iface in self.config.host_interfaces:
                cands.append(Candidate(kind="host", host=iface,
                                       probe_port=self._udp_port,
                                       stream_port=self._tcp_port))
        cands.append(Candidate.relay())
        return cands

    # -- outbound connect --------------------------------------------------

    async def connect(self, remote: str) -> PeerSession:
        session_id = secrets.token_hex(16)
        session = PeerSession(remote=remote, session_id=session_id, role="offerer")
        session.transition(SessionState.SIGNALING)
        self.sessions[session_id] = session
        answer_fut: asyncio.Future = asyncio.get_running_loop().create_future()
        session._answer_fut = answer_fut
        local_cands = self.gather_candidates()
        try:
            await self.conn.signal(remote, {
                "session_id": session_id,
                "phase": "OFFER",
                "candidates": [c.to_wire() for c in local_cands],
            })
        except ProtocolError as exc:
            session._fail()
            raise ServiceNetError(f"remote {remote} offline", code=ERR_OFFLINE) from exc
        try:
            remote_cands = await asyncio.wait_for(
                answer_fut, self.config.handshake_timeout_s)
        except asyncio.TimeoutError:
            session._fail()
            raise ServiceNetError("handshake timed out", code=ERR_TIMEOUT)
        session.transition(SessionState.CHECKING)
        result = await self.check_pairs(session_id, remote, local_cands, remote_cands)
        if not result.ok:
            session._fail()
            raise ServiceNetError("all candidate pairs failed", code=ERR_UNREACHABLE)
        session.selected_pair = (result.local, result.remote)
        await self.conn.signal(remote, {
            "session_id": session_id,
            "phase": "CANDIDATE",
            "selected": {"local": result.local.to_wire(),
                         "remote": result.remote.to_wire()},
        })
        await self._open_channel(session, result.local, result.remote)
        session.transition(SessionState.CONNECTED)
        return session

    async def _open_channel(self, session: PeerSession, local: Candidate,
                            remote: Candidate) -> None:
        if local.kind == "host" and remote.kind == "host":
            reader, writer = await asyncio.open_connection(
                remote.host, remote.stream_port)
            writer.write(STREAM_MAGIC + bytes.fromhex(session.session_id)
                         + self.conn.pid.encode())
            await writer.drain()
            session.attach_channel(TcpChannel(reader, writer))
        else:
            session.attach_channel(self._relay_channel(session))

    def _relay_channel(self, session: PeerSession) -> RelayChannel:
        name = f"p2p:{session.session_id}"

        async def send_relay(channel_name: str, data: bytes) -> None:
            await self.conn.relay(session.remote, channel_name, data)

        return RelayChannel(send_relay, session.remote, name)

    # -- pair checking -----------------------------------------------------

    async def check_pairs(self, session_id: str, remote_pid: str,
                          local: list[Candidate],
                          remote: list[Candidate]) -> PairResult:
        """Probe pairs in descending priority-sum order; first echo wins."""
        pairs = sorted(itertools.product(local, remote),
                       key=lambda p: -(p[0].priority + p[1].priority))
        for l, r in pairs:
            if await self._probe_pair(session_id, remote_pid, l, r):
                return PairResult(True, l, r)
        return PairResult(False)

    async def _probe_pair(self, session_id: str, remote_pid: str,
                          local: Candidate, remote: Candidate) -> bool:
        sid_bytes = bytes.fromhex(session_id)
        for _ in range(self.config.probe_attempts):
            nonce = os.urandom(8)
            fut: asyncio.Future = asyncio.get_running_loop().create_future()
            self._probe_waiters[nonce] = fut
            try:
                self._send_probe(sid_bytes, nonce, remote_pid, local, remote)
                await asyncio.wait_for(fut, self.config.probe_interval_s)
                return True
            except asyncio.TimeoutError:
                continue
            finally:
                self._probe_waiters.pop(nonce, None)
        return False

    def _send_probe(self, sid_bytes: bytes, nonce: bytes, remote_pid: str,
                    local: Candidate, remote: Candidate) -> None:
        if self.config.drops(local, remote):
            return  # fault injection: packet silently dropped
        probe = make_probe(sid_bytes, nonce)
        if local.kind == "host" and remote.kind == "host":
            self._udp_transport.sendto(probe, (remote.host, remote.probe_port))
        else:
            asyncio.create_task(self._relay_probe(remote_pid, probe))

    async def _relay_probe(self, remote_pid: str, probe: bytes) -> None:
        try:
            await self.conn.relay(remote_pid, RELAY_PROBE_CHANNEL, probe)
        except (ProtocolError, Exception):
            pass  # treated as a lost probe

    def _resolve_probe(self, nonce: bytes) -> None:
        fut = self._probe_waiters.get(nonce)
        if fut is not None and not fut.done():
            fut.set_result(None)

    # -- inbound signaling -------------------------------------------------

    def _on_signal(self, from_pid: str, msg: dict) -> None:
        phase = msg.get("phase")
        session_id = msg.get("session_id", "")
        if phase == "OFFER":
            asyncio.create_task(self._handle_offer(from_pid, msg))
        elif phase == "ANSWER":
            session = self.sessions.get(session_id)
            if session is not None and hasattr(session, "_answer_fut"):
                fut = session._answer_fut
                if not fut.done():
                    fut.set_result([Candidate.from_wire(c)
                                    for c in msg.get("candidates", [])])
        elif phase == "CANDIDATE":
            self._handle_selected(session_id, msg)
        elif phase == "BYE":
            session = self.sessions.get(session_id)
            if session is not None:
                asyncio.create_task(session.close())

    async def _handle_offer(self, from_pid: str, msg: dict) -> None:
        session_id = msg.get("session_id", "")
        if self._glare_discard(from_pid):
            logger.info("glare: discarding offer from %s", from_pid)
            return
        session = PeerSession(remote=from_pid, session_id=session_id,
                              role="answerer")
        session.transition(SessionState.SIGNALING)
        session.remote_candidates = [Candidate.from_wire(c)
                                     for c in msg.get("candidates", [])]
        self.sessions[session_id] = session
        if self.on_incoming_session:
            self.on_incoming_session(session)
        try:
            await self.conn.signal(from_pid, {
                "session_id": session_id,
                "phase": "ANSWER",
                "candidates": [c.to_wire() for c in self.gather_candidates()],
            })
        except ProtocolError:
            session._fail()
            return
        session.transition(SessionState.CHECKING)
        asyncio.create_task(self._answerer_timeout(session))

    def _glare_discard(self, from_pid: str) -> bool:
        """Simultaneous dials: the lexicographically lower PID stays the
        offerer, so it discards the other side's offer."""
        my_pid = self.conn.pid or ""
        if my_pid >= from_pid:
            return False
        return any(s.remote == from_pid and s.role == "offerer"
                   and s.state in (SessionState.SIGNALING, SessionState.CHECKING)
                   for s in self.sessions.values())

    async def _answerer_timeout(self, session: PeerSession) -> None:
        try:
            await asyncio.wait_for(session.connected.wait(),
                                   self.config.handshake_timeout_s)
        except asyncio.TimeoutError:
            logger.info("answerer handshake timed out for %s", session.remote)
            session._fail()

    def _handle_selected(self, session_id: str, msg: dict) -> None:
        session = self.sessions.get(session_id)
        if session is None:
            return
        sel = msg.get("selected", {})
        # The offerer's local candidate is our remote and vice versa.
        remote_c = Candidate.from_wire(sel.get("local", {}))
        local_c = Candidate.from_wire(sel.get("remote", {}))
        session.selected_pair = (local_c, remote_c)
        if local_c.kind == "host" and remote_c.kind == "host":
            channel = self._orphan_streams.pop(session_id, None)
            if channel is not None:
                session.attach_channel(channel)
                if session.state is SessionState.CHECKING:
                    session.transition(SessionState.CONNECTED)
            # else: the TCP accept will complete the transition.
        else:
            session.attach_channel(self._relay_channel(session))
            if session.state is SessionState.CHECKING:
                session.transition(SessionState.CONNECTED)

    # -- inbound streams and relay frames ---------------------------------

    async def _accept_stream(self, reader: asyncio.StreamReader,
                             writer: asyncio.StreamWriter) -> None:
        try:
            header = await asyncio.wait_for(
                reader.readexactly(len(STREAM_MAGIC) + 16 + 6), timeout=10)
        except (asyncio.IncompleteReadError, asyncio.TimeoutError):
            writer.close()
            return
        if header[:len(STREAM_MAGIC)] != STREAM_MAGIC:
            writer.close()
            return
        session_id = header[len(STREAM_MAGIC):len(STREAM_MAGIC) + 16].hex()
        channel = TcpChannel(reader, writer)
        session = self.sessions.get(session_id)
        if session is None or session.channel is not None:
            self._orphan_streams[session_id] = channel
            return
        session.attach_channel(channel)
        if session.state is SessionState.CHECKING:
            session.transition(SessionState.CONNECTED)

    def _on_relay(self, from_pid: str, channel_name: str, data: bytes) -> None:
        if channel_name == RELAY_PROBE_CHANNEL:
            parsed = parse_probe(data)
            if parsed is None:
                return
            is_echo, sid, nonce = parsed
            if is_echo:
                self._resolve_probe(nonce)
            else:
                asyncio.create_task(self._relay_probe(
                    from_pid, make_probe(sid, nonce, echo=True)))
        elif channel_name.startswith("p2p:"):
            session = self.sessions.get(channel_name[4:])
            if session is not None and data:
                session.handle_frame(data[0], data[1:])

    # -- teardown ----------------------------------------------------------

    async def close_session(self, session: PeerSession) -> None:
        try:
            await self.conn.signal(session.remote, {
                "session_id": session.session_id, "phase": "BYE"})
        except (ProtocolError, Exception):
            pass
        await session.close()
        self.sessions.pop(session.session_id, None)
