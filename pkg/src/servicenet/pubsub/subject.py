"""Subjects and subject patterns.

A subject is a dot-separated token path (`svc.request.plumbing`). A
pattern is a subject where a token may be `*` (exactly one token) or a
final `>` (one or more trailing tokens).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from servicenet.errors import ValidationError

_TOKEN_RE = re.compile(r"^[A-Za-z0-9_-]+$")
MAX_SUBJECT_BYTES = 255


@dataclass(frozen=True)
class Subject:
    tokens: tuple[str, ...]

    @classmethod
    def parse(cls, text: str) -> "Subject":
        if not text or len(text.encode()) > MAX_SUBJECT_BYTES:
            raise ValidationError(f"bad subject length: {text!r}")
        tokens = text.split(".")
        for tok in tokens:
            if not _TOKEN_RE.match(tok):
                raise ValidationError(f"bad subject token {tok!r} in {text!r}")
        return cls(tuple(tokens))

    def __str__(self) -> str:
        return ".".join(self.tokens)


@dataclass(frozen=True)
class SubjectPattern:
    tokens: tuple[str, ...]

    @classmethod
    def parse(cls, text: str) -> "SubjectPattern":
        if not text or len(text.encode()) > MAX_SUBJECT_BYTES:
            raise ValidationError(f"bad pattern length: {text!r}")
        tokens = text.split(".")
        for i, tok in enumerate(tokens):
            if tok == "*":
                continue
            if tok == ">":
                if i != len(tokens) - 1:
                    raise ValidationError(f"'>' must be the last token: {text!r}")
                continue
            if not _TOKEN_RE.match(tok):
                raise ValidationError(f"bad pattern token {tok!r} in {text!r}")
        return cls(tuple(tokens))

    def __str__(self) -> str:
        return ".".join(self.tokens)


def match_subject(pattern: SubjectPattern, subject: Subject) -> bool:
    """True iff the pattern matches the subject.

    `*` consumes exactly one token; a trailing `>` consumes one or more
    remaining tokens.
    """
    pt, st = pattern.tokens, subject.tokens
    for i, tok in enumerate(pt):
        if tok == ">":
            return len(st) > i  # at least one token left
        if i >= len(st):
            return False
        if tok != "*" and tok != st[i]:
            return False
    return len(st) == len(pt)
