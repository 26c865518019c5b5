"""In-process message router: subscriptions in, matching envelopes out.

The router is a pure transmitter: at-most-once delivery, no persistence,
no replay. It knows nothing about transports; each subscription carries
a deliver callback supplied by the hosting server.
"""

from __future__ import annotations

import base64
import itertools
import secrets
from dataclasses import dataclass, field
from typing import Callable

from servicenet.errors import ValidationError
from servicenet.pubsub.subject import Subject, SubjectPattern, match_subject

MAX_PAYLOAD_BYTES = 64 * 1024

DeliverFn = Callable[[int, "Envelope"], None]


@dataclass(frozen=True)
class Envelope:
    """A routed message."""

    id: str                      # 128-bit hex
    subject: Subject
    sender: str                  # PID
    attrs: dict[str, object]     # flat string->scalar map, lowercase keys
    payload: bytes
    sent_at: float

    def __post_init__(self):
        if len(self.payload) > MAX_PAYLOAD_BYTES:
            raise ValidationError(f"payload {len(self.payload)} bytes exceeds cap")
        for key, value in self.attrs.items():
            if key != key.lower():
                raise ValidationError(f"attr key not lowercase: {key!r}")
            if not isinstance(value, (str, int, float, bool)):
                raise ValidationError(f"attr {key!r} is not a scalar")

    @classmethod
    def new(cls, subject: str, sender: str, attrs: dict[str, object] | None = None,
            payload: bytes = b"", sent_at: float = 0.0) -> "Envelope":
        return cls(
            id=secrets.token_hex(16),
            subject=Subject.parse(subject),
            sender=sender,
            attrs=dict(attrs or {}),
            payload=payload,
            sent_at=sent_at,
        )

    def to_wire(self) -> dict:
        return {
            "id": self.id,
            "subject": str(self.subject),
            "sender": self.sender,
            "attrs": self.attrs,
            "payload_b64": base64.b64encode(self.payload).decode(),
            "sent_at": self.sent_at,
        }

    @classmethod
    def from_wire(cls, d: dict) -> "Envelope":
        return cls(
            id=d["id"],
            subject=Subject.parse(d["subject"]),
            sender=d["sender"],
            attrs=dict(d.get("attrs") or {}),
            payload=base64.b64decode(d.get("payload_b64") or ""),
            sent_at=float(d.get("sent_at") or 0.0),
        )


@dataclass
class Subscription:
    sid: int
    tid: str
    pattern: SubjectPattern
    deliver: DeliverFn = field(repr=False, default=lambda sid, env: None)


class Router:
    """Subscription table plus matching/delivery.

    Duplicate overlapping subscriptions each get their own copy of a
    matching message; deduplication per session is deliberately not done.
    """

    def __init__(self):
        self._subs: dict[int, Subscription] = {}
        self._by_tid: dict[str, set[int]] = {}
        self._next_sid = itertools.count(1)

    def subscribe(self, tid: str, pattern: SubjectPattern, deliver: DeliverFn) -> int:
        sid = next(self._next_sid)
        self._subs[sid] = Subscription(sid=sid, tid=tid, pattern=pattern, deliver=deliver)
        self._by_tid.setdefault(tid, set()).add(sid)
        return sid

    def unsubscribe(self, tid: str, sid: int) -> None:
        sub = self._subs.get(sid)
        if sub is None or sub.tid != tid:
            raise ValidationError(f"unknown subscription {sid}")
        del self._subs[sid]
        self._by_tid[tid].discard(sid)

    def drop_session(self, tid: str) -> None:
        """Remove every subscription owned by a dead session."""
        for sid in self._by_tid.pop(tid, set()):
            self._subs.pop(sid, None)

    def publish(self, envelope: Envelope) -> int:
        """Deliver to every matching live subscription; returns the count."""
        delivered = 0
        for sub in list(self._subs.values()):
            if match_subject(sub.pattern, envelope.subject):
                sub.deliver(sub.sid, envelope)
                delivered += 1
        return delivered

    @property
    def subscription_count(self) -> int:
        return len(self._subs)
