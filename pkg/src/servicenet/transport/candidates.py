"""Connection candidates and transport configuration.

Host candidates are direct addresses on local interfaces; the relay
candidate routes through the broker and is always constructible while
the broker session lives, so connectivity has a guaranteed fallback.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

HOST_PRIORITY = 126
RELAY_PRIORITY = 0


@dataclass(frozen=True)
class Candidate:
    kind: str                    # "host" | "relay"
    host: str = ""               # empty for relay
    probe_port: int = 0          # UDP port answering probes
    stream_port: int = 0         # TCP port accepting data-channel streams

    @property
    def priority(self) -> int:
        return HOST_PRIORITY if self.kind == "host" else RELAY_PRIORITY

    def to_wire(self) -> dict:
        return {"kind": self.kind, "host": self.host,
                "probe_port": self.probe_port, "stream_port": self.stream_port}

    @classmethod
    def from_wire(cls, d: dict) -> "Candidate":
        return cls(kind=d["kind"], host=d.get("host", ""),
                   probe_port=int(d.get("probe_port", 0)),
                   stream_port=int(d.get("stream_port", 0)))

    @classmethod
    def relay(cls) -> "Candidate":
        return cls(kind="relay")


# Fault-injection hook: returns True to drop an outgoing probe or stream
# connect for the given (local, remote) pair.
PairFilter = Callable[[Candidate, Candidate], bool]


@dataclass
class TransportConfig:
    host_interfaces: list[str] = field(default_factory=lambda: ["127.0.0.1"])
    host_enabled: bool = True
    probe_attempts: int = 3
    probe_interval_s: float = 0.5
    handshake_timeout_s: float = 10.0
    pair_filter: PairFilter | None = None

    def drops(self, local: Candidate, remote: Candidate) -> bool:
        return self.pair_filter is not None and self.pair_filter(local, remote)
