"""The peer application core.

Ties together the broker connection, the local store, the filter
gateway and the P2P transport into the marketplace workflow:
publish a wanted, receive geo-scoped requests, quote, accept, chat
over a direct connection, rate.

Every message published or surfaced to the application is piped
through the filter gateway first; workflow subjects the peer itself
subscribes to (quote boards, ratings) get implicit filters so the
gateway stays sound without the user listing them.
"""

from __future__ import annotations

import asyncio
import json
import logging
import os
import secrets
import time
from dataclasses import dataclass
from typing import AsyncIterator

from servicenet.client.connection import BrokerConnection
from servicenet.client.filters import Filter, FilterGateway, PeerProfile
from servicenet.client.store import (
    Quote,
    Rating,
    Store,
    StoredChatMessage,
    Wanted,
    new_id,
    now_utc,
    ts_from_str,
    ts_to_str,
)
from servicenet.errors import (
    ERR_FILTERED,
    ERR_STATE,
    ProtocolError,
    ServiceNetError,
    ValidationError,
)
from servicenet.model.geo import GeoPoint
from servicenet.model.identity import generate_uuid
from servicenet.pubsub.router import Envelope
from servicenet.transport.candidates import TransportConfig
from servicenet.transport.chat import ChatMessage
from servicenet.transport.manager import P2PManager
from servicenet.transport.session import PeerSession

logger = logging.getLogger(__name__)

SUBJECT_REQUEST = "svc.request"
SUBJECT_QUOTE = "svc.quote"
SUBJECT_RATING = "svc.rating"


def _device_uuid(store_path: str, fingerprint: bytes | None = None) -> bytes:
    """Load or mint the device-bound secret next to the store file."""
    token_path = store_path + ".device"
    if os.path.exists(token_path):
        with open(token_path, "rb") as f:
            return bytes.fromhex(f.read().decode().strip())
    uuid = generate_uuid(fingerprint or os.urandom(16), time.time())
    with open(token_path, "w") as f:
        f.write(uuid.hex())
    return uuid


@dataclass
class QuoteView:
    quote: Quote
    provider_rating: float | None


class PeerApp:
    def __init__(self, store_path: str, broker_url: str,
                 location: GeoPoint | None = None,
                 filters: list[Filter] | None = None,
                 transport: TransportConfig | None = None,
                 device_fingerprint: bytes | None = None):
        self.store = Store(store_path)
        self.uuid = _device_uuid(store_path, device_fingerprint)
        self.conn = BrokerConnection(broker_url)
        self.location = location
        self.gateway = FilterGateway(PeerProfile(pid="", location=location),
                                     list(filters or []))
        # Outbound defaults to allow-all; callers may tighten it, and a
        # tightened set can block the peer's own publishes (ERR_FILTERED).
        self.outbound = FilterGateway(self.gateway.profile,
                                      [Filter.parse("svc.>")])
        self.p2p = P2PManager(self.conn, transport or TransportConfig())
        self.nickname = ""
        self._event_queues: list[asyncio.Queue] = []
        self._watching = False
        self._chat_sessions: dict[str, PeerSession] = {}
        self.conn.on_msg = self._on_msg

    # -- lifecycle ---------------------------------------------------------

    async def start(self) -> None:
        await self.conn.connect()
        await self.p2p.start()
        self.p2p.on_incoming_session = self._on_incoming_session

    async def stop(self) -> None:
        await self.p2p.stop()
        await self.conn.disconnect()
        self.store.close()

    @property
    def pid(self) -> str | None:
        return self.conn.pid

    # -- identity ----------------------------------------------------------

    async def register(self, email: str, nickname: str) -> tuple[str, str]:
        pid, tid = await self.conn.register(email, nickname, self.uuid)
        self.nickname = nickname
        await self._after_login()
        return pid, tid

    async def login(self, credential: str) -> tuple[str, str]:
        pid, tid = await self.conn.login(credential, self.uuid)
        await self._after_login()
        return pid, tid

    async def _after_login(self) -> None:
        self.gateway.profile = PeerProfile(pid=self.conn.pid,
                                           nickname=self.nickname,
                                           location=self.location)
        self.outbound.profile = self.gateway.profile
        # Cache ratings published anywhere so quote ranking has data.
        self._add_internal_filter(f"{SUBJECT_RATING}.>")
        await self.conn.subscribe(f"{SUBJECT_RATING}.>")

    def _add_internal_filter(self, pattern: str) -> None:
        flt = Filter.parse(pattern)
        if flt not in self.gateway.filters:
            self.gateway.add(flt)

    # -- events ------------------------------------------------------------

    def subscribe_events(self) -> asyncio.Queue:
        q: asyncio.Queue = asyncio.Queue()
        self._event_queues.append(q)
        return q

    def _emit(self, event: str, data: dict) -> None:
        for q in self._event_queues:
            q.put_nowait({"event": event, **data})

    # -- watching requests -------------------------------------------------

    async def watch(self) -> None:
        """Subscribe to service requests; gateway-passed ones land in the
        inbox (store + events)."""
        if not self._watching:
            await self.conn.subscribe(f"{SUBJECT_REQUEST}.>")
            self._watching = True

    # -- inbound dispatch --------------------------------------------------

    def _on_msg(self, sid: int, env: Envelope) -> None:
        if not self.gateway.accept(env):
            return
        kind = env.attrs.get("kind")
        try:
            if kind == "wanted":
                self._ingest_wanted(env)
            elif kind == "quote":
                self._ingest_quote(env)
            elif kind == "accept":
                wid = str(env.attrs.get("wanted_id", ""))
                cached = self.store.wanted(wid)
                if cached is not None and cached.status == "OPEN":
                    self.store.set_wanted_status(wid, "ACCEPTED")
                self._emit("accepted", {
                    "wanted_id": env.attrs.get("wanted_id"),
                    "winner": env.attrs.get("winner"),
                    "quote_id": env.attrs.get("quote_id"),
                    "from": env.sender,
                })
            elif kind == "rating":
                self._ingest_rating(env)
        except (ValidationError, KeyError, ValueError) as exc:
            logger.warning("dropping malformed %s envelope: %s", kind, exc)

    def _ingest_wanted(self, env: Envelope) -> None:
        body = json.loads(env.payload.decode() or "{}")
        wanted = Wanted(
            wanted_id=str(env.attrs["wanted_id"]),
            requester=env.sender,
            category=env.subject.tokens[-1],
            description=body.get("description", ""),
            location=GeoPoint(float(env.attrs["lat"]), float(env.attrs["lon"])),
            remote_capable=bool(env.attrs.get("remote_capable")),
            budget_cents=int(body.get("budget_cents", 0)),
            currency=body.get("currency", "USD"),
            status="OPEN",
            created_at=now_utc(),
        )
        self.store.put(wanted)
        self._emit("request", {"wanted": wanted_to_dict(wanted)})

    def _ingest_quote(self, env: Envelope) -> None:
        body = json.loads(env.payload.decode() or "{}")
        quote = Quote(
            quote_id=str(env.attrs["quote_id"]),
            wanted_id=str(env.attrs["wanted_id"]),
            provider=env.sender,
            price_cents=int(env.attrs["price_cents"]),
            currency=str(env.attrs.get("currency", "USD")),
            note=body.get("note", ""),
            received_at=now_utc(),
        )
        wanted = self.store.wanted(quote.wanted_id)
        if wanted is None or wanted.requester != self.pid:
            return  # not ours
        if wanted.status != "OPEN":
            logger.info("dropping late quote for %s", quote.wanted_id)
            return
        self.store.put(quote)
        self._emit("quote", {"quote": quote_to_dict(quote)})

    def _ingest_rating(self, env: Envelope) -> None:
        body = json.loads(env.payload.decode() or "{}")
        rating = Rating(
            rating_id=str(env.attrs["rating_id"]),
            ratee=str(env.attrs["ratee"]),
            score=int(env.attrs["score"]),
            comment=body.get("comment", ""),
            created_at=now_utc(),
        )
        self.store.put(rating)

    # -- outbound (all gated) ----------------------------------------------

    async def _publish_gated(self, subject: str, attrs: dict,
                             payload: bytes) -> int:
        env = Envelope.new(subject, self.pid, attrs, payload, time.time())
        if not self.outbound.accept(env):
            raise ServiceNetError(f"outbound message blocked by filter: {subject}",
                                  code=ERR_FILTERED)
        return await self.conn.publish(subject, attrs, payload, msg_id=env.id)

    async def publish_wanted(self, category: str, description: str,
                             location: GeoPoint, remote_capable: bool,
                             budget_cents: int, currency: str = "USD") -> str:
        wanted = Wanted(
            wanted_id=new_id(), requester=self.pid, category=category,
            description=description, location=location,
            remote_capable=remote_capable, budget_cents=budget_cents,
            currency=currency, status="OPEN", created_at=now_utc(),
        )
        subject = f"{SUBJECT_REQUEST}.{category}"
        attrs = {
            "kind": "wanted",
            "wanted_id": wanted.wanted_id,
            "lat": location.lat,
            "lon": location.lon,
            "remote_capable": remote_capable,
        }
        payload = json.dumps({"description": description,
                              "budget_cents": budget_cents,
                              "currency": currency}).encode()
        # Outbound passes the gateway before anything is stored or sent.
        env = Envelope.new(subject, self.pid, attrs, payload, time.time())
        if not self.outbound.accept(env):
            raise ServiceNetError("wanted blocked by outbound filter",
                                  code=ERR_FILTERED)
        self.store.put(wanted)
        # Hear quotes and the acceptance notice for this wanted.
        self._add_internal_filter(f"{SUBJECT_QUOTE}.{wanted.wanted_id}")
        await self.conn.subscribe(f"{SUBJECT_QUOTE}.{wanted.wanted_id}")
        await self.conn.publish(subject, attrs, payload, msg_id=env.id)
        return wanted.wanted_id

    async def submit_quote(self, wanted_id: str, price_cents: int,
                           note: str = "", currency: str = "USD") -> str:
        wanted = self.store.wanted(wanted_id)
        if wanted is None or wanted.status != "OPEN":
            raise ServiceNetError(f"wanted {wanted_id} unknown or not open",
                                  code=ERR_STATE)
        quote = Quote(quote_id=new_id(), wanted_id=wanted_id, provider=self.pid,
                      price_cents=price_cents, currency=currency, note=note,
                      received_at=now_utc())
        self.store.put(quote)
        subject = f"{SUBJECT_QUOTE}.{wanted_id}"
        self._add_internal_filter(subject)
        await self.conn.subscribe(subject)  # hear the acceptance notice
        await self._publish_gated(subject, {
            "kind": "quote",
            "quote_id": quote.quote_id,
            "wanted_id": wanted_id,
            "price_cents": price_cents,
            "currency": currency,
        }, json.dumps({"note": note}).encode())
        return quote.quote_id

    def list_quotes(self, wanted_id: str) -> list[QuoteView]:
        """Ranked: price ascending, provider mean rating descending,
        arrival ascending. Advisory; the human picks."""
        quotes = self.store.quotes_for(wanted_id)
        views = [QuoteView(q, self.store.mean_rating(q.provider))
                 for q in quotes]
        return sorted(views, key=lambda v: (
            v.quote.price_cents,
            -(v.provider_rating if v.provider_rating is not None else 0.0),
            v.quote.received_at,
            v.quote.quote_id,
        ))

    async def accept_quote(self, quote_id: str) -> PeerSession:
        quote = self._find_quote(quote_id)
        wanted = self.store.wanted(quote.wanted_id)
        if wanted is None or wanted.requester != self.pid:
            raise ServiceNetError(f"quote {quote_id} is not on one of our wanteds",
                                  code=ERR_STATE)
        if wanted.status != "OPEN":
            raise ServiceNetError(f"wanted {wanted.wanted_id} already {wanted.status}",
                                  code=ERR_STATE)
        self.store.set_wanted_status(wanted.wanted_id, "ACCEPTED")
        await self._publish_gated(f"{SUBJECT_QUOTE}.{wanted.wanted_id}", {
            "kind": "accept",
            "wanted_id": wanted.wanted_id,
            "quote_id": quote.quote_id,
            "winner": quote.provider,
        }, b"")
        # Connection errors surface for retry; the wanted stays ACCEPTED.
        session = await self.connect_peer(quote.provider)
        return session

    def _find_quote(self, quote_id: str) -> Quote:
        for wanted in self.store.wanteds():
            for q in self.store.quotes_for(wanted.wanted_id):
                if q.quote_id == quote_id:
                    return q
        raise ServiceNetError(f"unknown quote {quote_id}", code=ERR_STATE)

    async def rate_peer(self, ratee: str, score: int, comment: str = "") -> str:
        rating = Rating(rating_id=new_id(), ratee=ratee, score=score,
                        comment=comment, created_at=now_utc())
        self.store.put(rating)
        await self._publish_gated(f"{SUBJECT_RATING}.{ratee}", {
            "kind": "rating",
            "rating_id": rating.rating_id,
            "ratee": ratee,
            "score": score,
        }, json.dumps({"comment": comment}).encode())
        return rating.rating_id

    # -- chat --------------------------------------------------------------

    async def connect_peer(self, remote: str) -> PeerSession:
        existing = self._chat_sessions.get(remote)
        if existing is not None and existing.state.value == "CONNECTED":
            return existing
        session = await self.p2p.connect(remote)
        self._setup_chat_session(session)
        return session

    def _on_incoming_session(self, session: PeerSession) -> None:
        self._setup_chat_session(session)

    def _setup_chat_session(self, session: PeerSession) -> None:
        self._chat_sessions[session.remote] = session
        session.chat_log = [to_chat_message(m)
                            for m in self.store.chat_history(session.remote)]
        session.on_message = lambda data: self._on_chat_data(session, data)
        session.on_chat_merged = lambda merged: self._store_thread(session.remote, merged)

    def _on_chat_data(self, session: PeerSession, data: bytes) -> None:
        try:
            frame = json.loads(data.decode())
            if frame.get("kind") != "chat":
                return
            msg = ChatMessage.from_wire(frame["msg"])
        except (ValueError, KeyError, ValidationError):
            logger.warning("dropping malformed chat frame from %s", session.remote)
            return
        self.store.put(StoredChatMessage(
            msg_id=msg.msg_id, thread=session.remote, author=msg.author,
            body=msg.body, lamport=msg.lamport,
            wall_time=now_utc()))
        session.chat_log.append(msg)
        self._emit("chat", {"peer": session.remote, "msg": msg.to_wire()})

    async def send_chat(self, remote: str, body: str) -> ChatMessage:
        session = await self.connect_peer(remote)
        history = self.store.chat_history(remote)
        lamport = max((m.lamport for m in history), default=0) + 1
        msg = ChatMessage.new(self.pid, body, lamport, time.time())
        await session.send(json.dumps({"kind": "chat", "msg": msg.to_wire()}).encode())
        self.store.put(StoredChatMessage(
            msg_id=msg.msg_id, thread=remote, author=msg.author, body=msg.body,
            lamport=msg.lamport, wall_time=now_utc()))
        session.chat_log.append(msg)
        return msg

    async def sync_chat(self, remote: str) -> list[ChatMessage]:
        session = await self.connect_peer(remote)
        merged = await session.sync_chat(session.chat_log)
        self._store_thread(remote, merged)
        return merged

    def _store_thread(self, remote: str, merged: list[ChatMessage]) -> None:
        for m in merged:
            self.store.put(StoredChatMessage(
                msg_id=m.msg_id, thread=remote, author=m.author, body=m.body,
                lamport=m.lamport, wall_time=now_utc()))


def to_chat_message(m: StoredChatMessage) -> ChatMessage:
    return ChatMessage(msg_id=m.msg_id, author=m.author, body=m.body,
                       lamport=m.lamport, wall_time=m.wall_time.timestamp())


def wanted_to_dict(w: Wanted) -> dict:
    return {
        "wanted_id": w.wanted_id, "requester": w.requester, "category": w.category,
        "description": w.description, "lat": w.location.lat, "lon": w.location.lon,
        "remote_capable": w.remote_capable, "budget_cents": w.budget_cents,
        "currency": w.currency, "status": w.status,
        "created_at": ts_to_str(w.created_at),
    }


def quote_to_dict(q: Quote) -> dict:
    return {
        "quote_id": q.quote_id, "wanted_id": q.wanted_id, "provider": q.provider,
        "price_cents": q.price_cents, "currency": q.currency, "note": q.note,
        "received_at": ts_to_str(q.received_at),
    }
