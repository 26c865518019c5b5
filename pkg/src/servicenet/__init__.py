"""ServiceNet: a peer-to-peer service docking network.

A rendezvous broker with subject-based pub/sub routing, broker-assisted
P2P connection establishment, a marketplace peer client, and a load
harness for benchmarking the broker.
"""

__version__ = "0.1.0"
