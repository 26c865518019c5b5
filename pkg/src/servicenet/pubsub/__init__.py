"""Subject-based publish/subscribe routing."""

from servicenet.pubsub.subject import Subject, SubjectPattern, match_subject
from servicenet.pubsub.router import Envelope, Router, Subscription, MAX_PAYLOAD_BYTES

__all__ = [
    "Subject",
    "SubjectPattern",
    "match_subject",
    "Envelope",
    "Router",
    "Subscription",
    "MAX_PAYLOAD_BYTES",
]
