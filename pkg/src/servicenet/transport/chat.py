"""Chat messages and history merging.

Histories are sets keyed by message id; merging is a set union ordered
by (lamport, author PID), which makes it commutative, associative and
idempotent: both sides of a sync converge to the identical sequence.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass

from servicenet.errors import ValidationError

MAX_BODY_BYTES = 4096


@dataclass(frozen=True)
class ChatMessage:
    msg_id: str       # 128-bit hex
    author: str       # PID
    body: str
    lamport: int
    wall_time: float

    def __post_init__(self):
        if len(self.body.encode()) > MAX_BODY_BYTES:
            raise ValidationError("chat body over 4 KiB")
        if self.lamport < 0:
            raise ValidationError("lamport must be non-negative")

    @classmethod
    def new(cls, author: str, body: str, lamport: int, wall_time: float) -> "ChatMessage":
        return cls(msg_id=secrets.token_hex(16), author=author, body=body,
                   lamport=lamport, wall_time=wall_time)

    def to_wire(self) -> dict:
        return {"msg_id": self.msg_id, "author": self.author, "body": self.body,
                "lamport": self.lamport, "wall_time": self.wall_time}

    @classmethod
    def from_wire(cls, d: dict) -> "ChatMessage":
        return cls(msg_id=str(d["msg_id"]), author=str(d["author"]),
                   body=str(d["body"]), lamport=int(d["lamport"]),
                   wall_time=float(d.get("wall_time", 0.0)))


def sort_key(m: ChatMessage) -> tuple:
    return (m.lamport, m.author, m.msg_id)


def merge_histories(*histories: list[ChatMessage]) -> list[ChatMessage]:
    """Union by msg_id, ordered by (lamport, author)."""
    by_id: dict[str, ChatMessage] = {}
    for history in histories:
        for m in history:
            by_id.setdefault(m.msg_id, m)
    return sorted(by_id.values(), key=sort_key)


def next_lamport(history: list[ChatMessage]) -> int:
    return max((m.lamport for m in history), default=0) + 1
