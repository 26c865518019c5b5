"""Domain types shared by every ServiceNet module: identifiers and geodesy."""

from servicenet.model.geo import EARTH_RADIUS_KM, GeoPoint, haversine_km
from servicenet.model.identity import (
    PID_ALPHABET,
    PID_LENGTH,
    PeerIdentity,
    format_pid,
    generate_uuid,
    mint_pid,
    mint_tid,
    parse_pid,
    valid_email,
    valid_pid,
)

__all__ = [
    "EARTH_RADIUS_KM",
    "GeoPoint",
    "haversine_km",
    "PID_ALPHABET",
    "PID_LENGTH",
    "PeerIdentity",
    "format_pid",
    "generate_uuid",
    "mint_pid",
    "mint_tid",
    "parse_pid",
    "valid_email",
    "valid_pid",
]
