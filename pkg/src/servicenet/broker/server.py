"""The broker server.

One WebSocket endpoint serves peer management (register/login/directory),
signaling + relay forwarding, and the pub/sub router. The broker holds
minimal persistent state (the identity registry) and an in-memory
PID -> connection map; every error triggered by a client request is
reported back to that client as a structured ERROR frame while the
server keeps running.
"""

from __future__ import annotations

import asyncio
import base64
import json
import logging
import time
from dataclasses import dataclass, field
from random import Random

from websockets.asyncio.server import serve
from websockets.exceptions import ConnectionClosed

from servicenet.broker.pool import DbPool
from servicenet.broker.registry import DuplicateEmail, Registry, make_record
from servicenet.errors import (
    ERR_BAD_FRAME,
    ERR_DEVICE,
    ERR_OFFLINE,
    ERR_SENDER,
    ERR_SESSION,
    ERR_TOO_LARGE,
    ERR_UNKNOWN,
    ServiceNetError,
    ValidationError,
)
from servicenet.model import identity as ids
from servicenet.pubsub.router import Envelope, Router
from servicenet.pubsub.subject import Subject, SubjectPattern

logger = logging.getLogger(__name__)

DIRECTORY_CAP = 50_000


@dataclass
class Session:
    pid: str
    tid: str
    nickname: str
    connected_at: float
    last_seen: float
    out_q: asyncio.Queue = field(default_factory=asyncio.Queue)

    def send_frame(self, frame: dict | None) -> None:
        self.out_q.put_nowait(frame)


class BrokerServer:
    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        db_path: str = ":memory:",
        pool_capacity: int = 500,
        db_delay_ms: float = 0.0,
        heartbeat_secs: float = 15.0,
        directory_cap: int = DIRECTORY_CAP,
        rng: Random | None = None,
    ):
        self.host = host
        self.port = port
        self.pool = DbPool(capacity=pool_capacity, delay_s=db_delay_ms / 1000.0)
        self.registry = Registry(db_path)
        self.router = Router()
        self.heartbeat_secs = heartbeat_secs
        self.directory_cap = directory_cap
        self._rng = rng or Random()
        self._sessions: dict[str, Session] = {}          # pid -> session
        self._by_tid: dict[str, Session] = {}
        self._taken_pids = self.registry.all_pids()
        self._nicknames = {}
        self._server = None
        self._reaper: asyncio.Task | None = None
        self.metrics = {
            "registers": 0, "logins": 0, "fetches": 0, "publishes": 0,
            "relays": 0, "errors": 0, "transport_faults": 0,
            "queries_register": 0, "queries_login": 0,
        }

    # -- lifecycle ---------------------------------------------------------

    async def start(self) -> None:
        self._server = await serve(self._handle, self.host, self.port,
                                   max_size=2 * 1024 * 1024)
        self.port = self._server.sockets[0].getsockname()[1]
        self._reaper = asyncio.create_task(self._reap_loop())
        logger.info("broker listening on ws://%s:%d", self.host, self.port)

    async def stop(self) -> None:
        if self._reaper:
            self._reaper.cancel()
        if self._server:
            self._server.close()
            await self._server.wait_closed()
        self.registry.close()

    @property
    def url(self) -> str:
        return f"ws://{self.host}:{self.port}"

    @property
    def session_count(self) -> int:
        return len(self._sessions)

    # -- connection handling ----------------------------------------------

    async def _handle(self, ws) -> None:
        session: Session | None = None
        writer: asyncio.Task | None = None

        def bind(new: Session) -> None:
            nonlocal session, writer
            if writer is None:
                writer = asyncio.create_task(self._write_loop(ws, new.out_q))
            else:
                # Connection re-authenticated: move the writer's queue over.
                new.out_q = session.out_q
                if self._sessions.get(session.pid) is session:
                    self._remove_session(session)
            session = new

        try:
            async for raw in ws:
                try:
                    frame = json.loads(raw)
                    ftype = frame["type"]
                    seq = frame.get("seq")
                except (ValueError, KeyError, TypeError):
                    await self._send_now(ws, session,
                                         self._error(None, ERR_BAD_FRAME, "unparseable frame"))
                    continue
                if session is not None:
                    session.last_seen = time.monotonic()
                try:
                    reply = await self._dispatch(ftype, frame, session, bind)
                except ServiceNetError as exc:
                    self.metrics["errors"] += 1
                    reply = self._error(seq, exc.code, exc.detail)
                except Exception:
                    self.metrics["transport_faults"] += 1
                    logger.exception("internal error handling %s", ftype)
                    reply = self._error(seq, "ERR_INTERNAL", "internal error")
                if reply is not None:
                    reply["seq"] = seq
                    await self._send_now(ws, session, reply)
                if ftype == "DISCONNECT":
                    break
        except ConnectionClosed:
            pass
        finally:
            if session is not None:
                self._remove_session(session)
                session.send_frame(None)
            if writer is not None:
                try:
                    await asyncio.wait_for(writer, timeout=5)
                except (asyncio.TimeoutError, asyncio.CancelledError, Exception):
                    writer.cancel()

    async def _write_loop(self, ws, out_q: asyncio.Queue) -> None:
        # Single writer per connection keeps per-direction FIFO order.
        while True:
            frame = await out_q.get()
            if frame is None:
                try:
                    await ws.close()
                except ConnectionClosed:
                    pass
                return
            try:
                await ws.send(json.dumps(frame))
            except ConnectionClosed:
                return

    async def _send_now(self, ws, session: Session | None, frame: dict) -> None:
        if session is not None:
            session.send_frame(frame)
        else:
            try:
                await ws.send(json.dumps(frame))
            except ConnectionClosed:
                pass

    @staticmethod
    def _error(seq, code: str, detail: str = "") -> dict:
        return {"type": "ERROR", "code": code, "seq": seq, "detail": detail}

    # -- dispatch ----------------------------------------------------------

    async def _dispatch(self, ftype: str, frame: dict, session: Session | None,
                        bind) -> dict | None:
        if ftype == "REGISTER":
            return await self._op_register(frame, bind, session)
        if ftype == "LOGIN":
            return await self._op_login(frame, bind, session)
        if ftype == "PING":
            return {"type": "PONG"}
        if ftype == "STATS":
            return {"type": "STATS", "stats": self.stats()}
        if ftype == "DISCONNECT":
            if session is not None:
                self._remove_session(session)
            return {"type": "ACK"}
        # Everything below requires a live session.
        if session is None or self._by_tid.get(session.tid) is not session:
            raise ServiceNetError("no live session", code=ERR_SESSION)
        if ftype == "FETCH_PEERS":
            return self._op_fetch_peers(session)
        if ftype == "SIGNAL":
            return self._op_forward(session, frame, "SIGNAL", ("msg",))
        if ftype == "RELAY":
            return self._op_forward(session, frame, "RELAY", ("data_b64", "channel"))
        if ftype == "SUB":
            return self._op_sub(session, frame)
        if ftype == "UNSUB":
            return self._op_unsub(session, frame)
        if ftype == "PUB":
            return self._op_pub(session, frame)
        raise ServiceNetError(f"unknown frame type {ftype!r}", code=ERR_BAD_FRAME)

    # -- peer management ---------------------------------------------------

    async def _op_register(self, frame: dict, bind, current: Session | None) -> dict:
        email = frame.get("email", "")
        nickname = frame.get("nickname", "")
        uuid_b64 = frame.get("uuid", "")
        if not ids.valid_email(email):
            raise ValidationError(f"bad email {email!r}")
        if not nickname:
            raise ValidationError("nickname must be non-empty")
        uuid = base64.b64decode(uuid_b64)
        if len(uuid) != 16:
            raise ValidationError("uuid must be 128 bits")
        pid = ids.mint_pid(self._taken_pids, self._rng)
        record = make_record(pid, nickname, email, uuid)
        self.metrics["queries_register"] += 1
        await self.pool.run_query(lambda: self.registry.insert(record))
        self._taken_pids.add(pid)
        self._nicknames[pid] = nickname
        tid = self._install_session(pid, nickname, bind, current)
        self.metrics["registers"] += 1
        return {"type": "REGISTERED", "pid": pid, "tid": tid}

    async def _op_login(self, frame: dict, bind, current: Session | None) -> dict:
        credential = frame.get("credential", "")
        uuid = base64.b64decode(frame.get("uuid", ""))
        if not credential:
            raise ValidationError("credential must be non-empty")

        def lookup():
            if ids.valid_pid(credential.strip().upper()):
                return self.registry.by_pid(credential.strip().upper())
            return self.registry.by_email(credential)

        # Signup verification, then the actual login lookup: 2 queries.
        self.metrics["queries_login"] += 1
        record = await self.pool.run_query(lookup)
        if record is None:
            raise ServiceNetError(f"unknown credential {credential!r}", code=ERR_UNKNOWN)
        self.metrics["queries_login"] += 1
        record = await self.pool.run_query(lookup)
        if record.uuid != uuid:
            raise ServiceNetError("device binding mismatch", code=ERR_DEVICE)
        tid = self._install_session(record.pid, record.nickname, bind, current)
        self.metrics["logins"] += 1
        return {"type": "LOGGED_IN", "pid": record.pid, "tid": tid}

    def _install_session(self, pid: str, nickname: str, bind,
                         current: Session | None) -> str:
        old = self._sessions.get(pid)
        if old is not None:
            self._remove_session(old)
            if old is not current:
                # Same account on another connection loses its seat.
                old.send_frame(self._error(None, "ERR_EVICTED", "newer login wins"))
                old.send_frame(None)
        now = time.monotonic()
        session = Session(pid=pid, tid=ids.mint_tid(), nickname=nickname,
                          connected_at=now, last_seen=now)
        bind(session)
        self._sessions[pid] = session
        self._by_tid[session.tid] = session
        return session.tid

    def _remove_session(self, session: Session) -> None:
        if self._sessions.get(session.pid) is session:
            del self._sessions[session.pid]
        self._by_tid.pop(session.tid, None)
        self.router.drop_session(session.tid)

    def _op_fetch_peers(self, session: Session) -> dict:
        self.metrics["fetches"] += 1
        if len(self._sessions) > self.directory_cap:
            raise ServiceNetError(f"directory over {self.directory_cap} entries",
                                  code=ERR_TOO_LARGE)
        peers = [
            {"pid": s.pid, "nickname": s.nickname, "online": True}
            for s in self._sessions.values()
        ]
        return {"type": "PEERS", "peers": peers}

    # -- signaling / relay -------------------------------------------------

    def _op_forward(self, session: Session, frame: dict, out_type: str,
                    fields: tuple[str, ...]) -> dict:
        to = frame.get("to", "")
        target = self._sessions.get(to)
        if target is None:
            raise ServiceNetError(f"peer {to} offline", code=ERR_OFFLINE)
        out = {"type": out_type, "from": session.pid}
        for f in fields:
            if f in frame:
                out[f] = frame[f]
        target.send_frame(out)
        self.metrics["relays"] += 1
        return {"type": "ACK"}

    # -- pub/sub -----------------------------------------------------------

    def _op_sub(self, session: Session, frame: dict) -> dict:
        try:
            pattern = SubjectPattern.parse(frame.get("pattern", ""))
        except ValidationError as exc:
            raise ServiceNetError(exc.detail, code="ERR_PATTERN") from exc

        def deliver(sid: int, env: Envelope) -> None:
            session.send_frame({"type": "MSG", "sid": sid, "envelope": env.to_wire()})

        sid = self.router.subscribe(session.tid, pattern, deliver)
        return {"type": "SUBBED", "sid": sid}

    def _op_unsub(self, session: Session, frame: dict) -> dict:
        try:
            self.router.unsubscribe(session.tid, int(frame.get("sid", -1)))
        except ValidationError as exc:
            raise ServiceNetError(exc.detail, code="ERR_SID") from exc
        return {"type": "UNSUBBED"}

    def _op_pub(self, session: Session, frame: dict) -> dict:
        sender = frame.get("sender", session.pid)
        if sender != session.pid:
            raise ServiceNetError("sender must match session PID", code=ERR_SENDER)
        payload = base64.b64decode(frame.get("payload_b64") or "")
        try:
            envelope = Envelope(
                id=frame.get("id") or ids.mint_tid(),
                subject=Subject.parse(frame.get("subject", "")),
                sender=session.pid,
                attrs=dict(frame.get("attrs") or {}),
                payload=payload,
                sent_at=time.time(),
            )
        except ValidationError as exc:
            code = "ERR_SIZE" if "payload" in exc.detail else exc.code
            raise ServiceNetError(exc.detail, code=code) from exc
        delivered = self.router.publish(envelope)
        self.metrics["publishes"] += 1
        return {"type": "PUBBED", "delivered": delivered}

    # -- maintenance -------------------------------------------------------

    async def _reap_loop(self) -> None:
        while True:
            await asyncio.sleep(self.heartbeat_secs)
            deadline = time.monotonic() - 3 * self.heartbeat_secs
            for session in list(self._sessions.values()):
                if session.last_seen < deadline:
                    logger.info("reaping silent session %s", session.pid)
                    self._remove_session(session)
                    session.send_frame(None)

    def stats(self) -> dict:
        return {
            **self.metrics,
            "sessions": len(self._sessions),
            "subscriptions": self.router.subscription_count,
            "registry_count": self.registry.count(),
            "pool": {
                "capacity": self.pool.capacity,
                "in_use": self.pool.in_use,
                "max_in_use": self.pool.max_in_use,
                "acquisitions": self.pool.acquisitions,
                "queued": self.pool.queued,
            },
        }
