"""Error codes and exception types shared across ServiceNet modules.

Server-side failures are reported back to the requesting client as
structured ``ERROR`` frames carrying one of the ``ERR_*`` codes below;
the server itself keeps serving.
"""

from __future__ import annotations

# Wire-level error codes (the `code` field of an ERROR frame).
ERR_DUPLICATE = "ERR_DUPLICATE"      # email already registered
ERR_UNKNOWN = "ERR_UNKNOWN"          # unknown login credential
ERR_DEVICE = "ERR_DEVICE"            # uuid does not match the stored device binding
ERR_SESSION = "ERR_SESSION"          # stale or missing session
ERR_OFFLINE = "ERR_OFFLINE"          # relay target has no live session
ERR_PATTERN = "ERR_PATTERN"          # malformed subject pattern
ERR_SID = "ERR_SID"                  # unknown or foreign subscription id
ERR_SIZE = "ERR_SIZE"                # payload exceeds the envelope size cap
ERR_SENDER = "ERR_SENDER"            # envelope sender does not match the session
ERR_STATE = "ERR_STATE"              # operation illegal in the current state
ERR_EVICTED = "ERR_EVICTED"          # session replaced by a newer login
ERR_TOO_LARGE = "ERR_TOO_LARGE"      # directory response over the hard cap
ERR_FILTERED = "ERR_FILTERED"        # outbound message rejected by the local gateway
ERR_TIMEOUT = "ERR_TIMEOUT"          # handshake or request deadline exceeded
ERR_UNREACHABLE = "ERR_UNREACHABLE"  # every candidate pair failed
ERR_BAD_FRAME = "ERR_BAD_FRAME"      # unparseable or incomplete frame


class ServiceNetError(Exception):
    """Base class; carries a wire error code."""

    code = "ERR_INTERNAL"

    def __init__(self, detail: str = "", code: str | None = None):
        super().__init__(detail or self.code)
        self.detail = detail
        if code is not None:
            self.code = code


class ValidationError(ServiceNetError):
    code = "ERR_VALIDATION"


class CapacityError(ServiceNetError):
    code = "ERR_CAPACITY"


class StorageError(ServiceNetError):
    code = "ERR_STORAGE"


class ProtocolError(ServiceNetError):
    """Raised client-side when the broker answers with an ERROR frame."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(detail, code=code)
