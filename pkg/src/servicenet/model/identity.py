"""Peer identifiers.

Three id kinds with different lifetimes:

* UUID: a 128-bit secret derived from the device; binds an account to a
  device and is shared only with the broker.
* PID: a short, human-readable permanent id minted once at registration.
* TID: a per-session token, regenerated on every login.
"""

from __future__ import annotations

import hashlib
import os
import re
import secrets
from dataclasses import dataclass
from random import Random

from servicenet.errors import CapacityError, ValidationError

# Crockford base32 (no I, L, O, U), unambiguous when read aloud.
PID_ALPHABET = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"
PID_LENGTH = 6
_PID_RE = re.compile(r"^[0-9A-HJKMNP-TV-Z]{6}$")
_TID_RE = re.compile(r"^[0-9a-f]{32}$")

# Process-wide salt: uuids are deterministic within one process given the
# same (fingerprint, timestamp), but not forgeable across processes.
_PROCESS_SALT = os.urandom(16)

NICKNAME_MAX_CHARS = 64


def generate_uuid(device_fingerprint: bytes, now: float, salt: bytes | None = None) -> bytes:
    """Derive the 128-bit device-binding token from fingerprint and time."""
    if not device_fingerprint:
        raise ValidationError("device fingerprint must be non-empty")
    key = salt if salt is not None else _PROCESS_SALT
    h = hashlib.blake2b(digest_size=16, key=key)
    h.update(device_fingerprint)
    h.update(b"\x00")
    h.update(repr(now).encode())
    return h.digest()


def valid_pid(value: str) -> bool:
    return bool(_PID_RE.match(value))


def parse_pid(value: str) -> str:
    """Normalize and validate a PID string (case-insensitive on input)."""
    v = value.strip().upper()
    if not valid_pid(v):
        raise ValidationError(f"not a valid PID: {value!r}")
    return v


def format_pid(value: str) -> str:
    if not valid_pid(value):
        raise ValidationError(f"not a valid PID: {value!r}")
    return value


def mint_pid(
    taken: set[str],
    rng: Random | None = None,
    alphabet: str = PID_ALPHABET,
    length: int = PID_LENGTH,
) -> str:
    """Mint a fresh PID not present in `taken`.

    Random draws with a retry loop; falls back to exhaustive enumeration
    when the namespace is nearly full (only reachable with the reduced
    alphabets used in tests).
    """
    namespace = len(alphabet) ** length
    if len(taken) >= namespace:
        raise CapacityError("PID namespace exhausted")
    rng = rng if rng is not None else Random(secrets.randbits(64))
    for _ in range(64):
        pid = "".join(rng.choice(alphabet) for _ in range(length))
        if pid not in taken:
            return pid
    # Dense namespace: enumerate the remainder.
    free = _enumerate_free(taken, alphabet, length)
    return rng.choice(free)


def _enumerate_free(taken: set[str], alphabet: str, length: int) -> list[str]:
    def gen(prefix: str) -> list[str]:
        if len(prefix) == length:
            return [prefix] if prefix not in taken else []
        out = []
        for ch in alphabet:
            out.extend(gen(prefix + ch))
        return out

    free = gen("")
    if not free:
        raise CapacityError("PID namespace exhausted")
    return free


def mint_tid(rng: Random | None = None) -> str:
    """Mint a 128-bit session token as 32 lowercase hex chars."""
    if rng is None:
        return secrets.token_hex(16)
    return f"{rng.getrandbits(128):032x}"


def valid_tid(value: str) -> bool:
    return bool(_TID_RE.match(value))


def valid_email(value: str) -> bool:
    """Shape check only: exactly one `@` with non-empty sides."""
    if value.count("@") != 1:
        return False
    local, domain = value.split("@")
    return bool(local) and bool(domain)


@dataclass(frozen=True)
class PeerIdentity:
    """A peer's full identity as known to itself and the broker."""

    uuid: bytes
    pid: str
    nickname: str
    email: str

    def __post_init__(self):
        if len(self.uuid) != 16:
            raise ValidationError("uuid must be 128 bits")
        if not valid_pid(self.pid):
            raise ValidationError(f"bad PID {self.pid!r}")
        if not self.nickname or len(self.nickname) > NICKNAME_MAX_CHARS:
            raise ValidationError("nickname must be 1..64 chars")
        if not valid_email(self.email):
            raise ValidationError(f"bad email {self.email!r}")
