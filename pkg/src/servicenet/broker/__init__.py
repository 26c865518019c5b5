"""Rendezvous broker: registration, sessions, signaling relay, routing."""

from servicenet.broker.pool import DbPool
from servicenet.broker.registry import Registry, RegistryRecord
from servicenet.broker.server import BrokerServer

__all__ = ["DbPool", "Registry", "RegistryRecord", "BrokerServer"]
