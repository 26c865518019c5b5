"""Direct peer-to-peer sessions: broker-relayed signaling, candidate
pair checking with relay fallback, ordered data channels, chat sync."""

from servicenet.transport.candidates import Candidate, TransportConfig
from servicenet.transport.chat import ChatMessage, merge_histories
from servicenet.transport.manager import P2PManager
from servicenet.transport.session import PeerSession, SessionState

__all__ = [
    "Candidate",
    "TransportConfig",
    "ChatMessage",
    "merge_histories",
    "P2PManager",
    "PeerSession",
    "SessionState",
]
