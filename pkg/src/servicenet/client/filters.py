"""The local filter gateway.

Every message a peer publishes or might see is piped through the gateway
first. A message passes when some filter's subject pattern matches and
all of that filter's attribute predicates hold. Geo scoping is one such
predicate (`within_km`); remote-capable requests bypass it, since remote
work ignores distance.

Missing attributes referenced by a predicate fail closed: the message is
rejected and counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from servicenet.errors import ValidationError
from servicenet.model.geo import GeoPoint, haversine_km
from servicenet.pubsub.router import Envelope
from servicenet.pubsub.subject import SubjectPattern, match_subject

DEFAULT_RADIUS_KM = 25.0

_OPS = {"eq", "lt", "le", "gt", "ge", "within_km"}


@dataclass(frozen=True)
class Predicate:
    key: str
    op: str
    value: object

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValidationError(f"unknown predicate op {self.op!r}")


@dataclass(frozen=True)
class Filter:
    pattern: SubjectPattern
    predicates: tuple[Predicate, ...] = ()

    @classmethod
    def parse(cls, text: str) -> "Filter":
        """Parse `pattern[;key op value]...`; `within_km R` is shorthand
        for a location predicate against the peer's own position."""
        parts = [p.strip() for p in text.split(";") if p.strip()]
        if not parts:
            raise ValidationError("empty filter")
        pattern = SubjectPattern.parse(parts[0])
        preds = []
        for part in parts[1:]:
            words = part.split()
            if len(words) == 2 and words[0] == "within_km":
                preds.append(Predicate("location", "within_km", float(words[1])))
            elif len(words) == 3:
                key, op, raw = words
                preds.append(Predicate(key, op, _coerce(raw)))
            else:
                raise ValidationError(f"bad predicate {part!r}")
        return cls(pattern=pattern, predicates=tuple(preds))

    def __str__(self) -> str:
        segs = [str(self.pattern)]
        for p in self.predicates:
            if p.op == "within_km":
                segs.append(f"within_km {p.value}")
            else:
                segs.append(f"{p.key} {p.op} {p.value}")
        return ";".join(segs)


def _coerce(raw: str) -> object:
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


@dataclass(frozen=True)
class PeerProfile:
    """What the gateway knows about its own peer."""

    pid: str
    nickname: str = ""
    location: GeoPoint | None = None


def _truthy(value: object) -> bool:
    if isinstance(value, str):
        return value.lower() == "true"
    return bool(value)


def _check_predicate(pred: Predicate, env: Envelope, profile: PeerProfile) -> bool | None:
    """True/False, or None when a referenced attribute is missing."""
    if pred.op == "within_km":
        if _truthy(env.attrs.get("remote_capable", False)):
            return True
        if "lat" not in env.attrs or "lon" not in env.attrs:
            return None
        if profile.location is None:
            return None
        try:
            origin = GeoPoint(float(env.attrs["lat"]), float(env.attrs["lon"]))
        except (ValidationError, TypeError, ValueError):
            return None
        return haversine_km(origin, profile.location) <= float(pred.value)

    if pred.key not in env.attrs:
        return None
    actual = env.attrs[pred.key]
    expected = pred.value
    if pred.op == "eq":
        if isinstance(expected, bool) or isinstance(actual, bool):
            return _truthy(actual) == _truthy(expected)
        return str(actual) == str(expected)
    try:
        a, b = float(actual), float(expected)
    except (TypeError, ValueError):
        return None
    return {"lt": a < b, "le": a <= b, "gt": a > b, "ge": a >= b}[pred.op]


def gateway_accept(envelope: Envelope, filters: list[Filter],
                   profile: PeerProfile) -> bool:
    """True iff some filter matches the subject and all its predicates hold."""
    for flt in filters:
        if not match_subject(flt.pattern, envelope.subject):
            continue
        results = [_check_predicate(p, envelope, profile) for p in flt.predicates]
        if all(r is True for r in results):
            return True
    return False


@dataclass
class FilterGateway:
    """Stateful wrapper tracking accept/reject counts."""

    profile: PeerProfile
    filters: list[Filter] = field(default_factory=list)
    accepted: int = 0
    rejected: int = 0
    rejected_missing_attr: int = 0

    def add(self, flt: Filter) -> None:
        self.filters.append(flt)

    def accept(self, envelope: Envelope) -> bool:
        ok = gateway_accept(envelope, self.filters, self.profile)
        if ok:
            self.accepted += 1
        else:
            self.rejected += 1
            if self._any_missing(envelope):
                self.rejected_missing_attr += 1
        return ok

    def _any_missing(self, envelope: Envelope) -> bool:
        for flt in self.filters:
            if not match_subject(flt.pattern, envelope.subject):
                continue
            for p in flt.predicates:
                if _check_predicate(p, envelope, self.profile) is None:
                    return True
        return False
