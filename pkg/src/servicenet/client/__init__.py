"""Peer-side application core: broker connection, local store, filter
gateway, marketplace workflow, control API and CLI."""

from servicenet.client.connection import BrokerConnection
from servicenet.client.filters import Filter, FilterGateway, PeerProfile
from servicenet.client.store import Store, PeerRecord, Wanted, Quote, Rating, StoredChatMessage

__all__ = [
    "BrokerConnection",
    "Filter",
    "FilterGateway",
    "PeerProfile",
    "Store",
    "PeerRecord",
    "Wanted",
    "Quote",
    "Rating",
    "StoredChatMessage",
]
