"""Local WebSocket control API (`/app`).

The browser client holds no business logic: every action round-trips
through this API, and server-pushed events mirror what the peer core's
gateway accepted. Command frames are
`{"cmd": ..., "seq": N, ...}` answered by
`{"type":"RESULT","seq":N,"ok":true,"data":...}` or
`{"type":"RESULT","seq":N,"ok":false,"code":"ERR_*","detail":...}`;
events are `{"type":"EVENT","event":...,...}`.
"""

from __future__ import annotations

import asyncio
import json
import logging

from websockets.asyncio.server import serve
from websockets.exceptions import ConnectionClosed

from servicenet.client.app import PeerApp, quote_to_dict, wanted_to_dict
from servicenet.errors import ProtocolError, ServiceNetError, ValidationError
from servicenet.model.geo import GeoPoint

logger = logging.getLogger(__name__)


class ControlServer:
    def __init__(self, app: PeerApp, host: str = "127.0.0.1", port: int = 0):
        self.app = app
        self.host = host
        self.port = port
        self._server = None
        self._clients: set = set()
        self._pump: asyncio.Task | None = None

    async def start(self) -> None:
        self._server = await serve(self._handle, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        self._pump = asyncio.create_task(self._pump_events())
        logger.info("control API on ws://%s:%d/app", self.host, self.port)

    async def stop(self) -> None:
        if self._pump:
            self._pump.cancel()
        if self._server:
            self._server.close()
            await self._server.wait_closed()

    @property
    def url(self) -> str:
        return f"ws://{self.host}:{self.port}/app"

    async def _pump_events(self) -> None:
        q = self.app.subscribe_events()
        while True:
            event = await q.get()
            frame = json.dumps({"type": "EVENT", **event})
            for ws in list(self._clients):
                try:
                    await ws.send(frame)
                except ConnectionClosed:
                    self._clients.discard(ws)

    async def _handle(self, ws) -> None:
        self._clients.add(ws)
        try:
            async for raw in ws:
                try:
                    frame = json.loads(raw)
                    cmd = frame["cmd"]
                    seq = frame.get("seq")
                except (ValueError, KeyError):
                    await ws.send(json.dumps({
                        "type": "RESULT", "seq": None, "ok": False,
                        "code": "ERR_BAD_FRAME", "detail": "unparseable command"}))
                    continue
                try:
                    data = await self._run(cmd, frame)
                    reply = {"type": "RESULT", "seq": seq, "ok": True, "data": data}
                except (ServiceNetError, ProtocolError) as exc:
                    reply = {"type": "RESULT", "seq": seq, "ok": False,
                             "code": exc.code, "detail": exc.detail}
                except Exception as exc:
                    logger.exception("control command %s failed", cmd)
                    reply = {"type": "RESULT", "seq": seq, "ok": False,
                             "code": "ERR_INTERNAL", "detail": str(exc)}
                await ws.send(json.dumps(reply))
        except ConnectionClosed:
            pass
        finally:
            self._clients.discard(ws)

    async def _run(self, cmd: str, frame: dict):
        app = self.app
        if cmd == "status":
            return {"pid": app.pid, "tid": app.conn.tid,
                    "nickname": app.nickname,
                    "connected": app.conn.connected}
        if cmd == "register":
            pid, tid = await app.register(frame["email"], frame["nickname"])
            return {"pid": pid, "tid": tid, "nickname": app.nickname}
        if cmd == "login":
            pid, tid = await app.login(frame["credential"])
            return {"pid": pid, "tid": tid, "nickname": app.nickname}
        if cmd == "watch":
            await app.watch()
            return {}
        if cmd == "post_wanted":
            wanted_id = await app.publish_wanted(
                category=frame["category"],
                description=frame.get("description", ""),
                location=GeoPoint(float(frame["lat"]), float(frame["lon"])),
                remote_capable=bool(frame.get("remote_capable")),
                budget_cents=int(frame.get("budget_cents", 0)),
                currency=frame.get("currency", "USD"),
            )
            return {"wanted_id": wanted_id}
        if cmd == "list_wanteds":
            return {"wanteds": [wanted_to_dict(w) for w in app.store.wanteds(
                requester=frame.get("requester"))]}
        if cmd == "inbox":
            wanteds = [w for w in app.store.wanteds()
                       if w.requester != app.pid]
            return {"wanteds": [wanted_to_dict(w) for w in wanteds]}
        if cmd == "submit_quote":
            quote_id = await app.submit_quote(
                frame["wanted_id"], int(frame["price_cents"]),
                frame.get("note", ""), frame.get("currency", "USD"))
            return {"quote_id": quote_id}
        if cmd == "list_quotes":
            views = app.list_quotes(frame["wanted_id"])
            return {"quotes": [
                {**quote_to_dict(v.quote), "provider_rating": v.provider_rating}
                for v in views]}
        if cmd == "accept_quote":
            session = await app.accept_quote(frame["quote_id"])
            return {"peer": session.remote, "state": session.state.value}
        if cmd == "send_chat":
            msg = await app.send_chat(frame["peer"], frame["body"])
            return {"msg": msg.to_wire()}
        if cmd == "chat_history":
            history = app.store.chat_history(frame["peer"])
            return {"msgs": [{"msg_id": m.msg_id, "author": m.author,
                              "body": m.body, "lamport": m.lamport}
                             for m in history]}
        if cmd == "rate":
            rating_id = await app.rate_peer(frame["peer"], int(frame["score"]),
                                            frame.get("comment", ""))
            return {"rating_id": rating_id}
        if cmd == "peers":
            return {"peers": await app.conn.fetch_peers()}
        raise ValidationError(f"unknown command {cmd!r}")
