import re
from random import Random

import pytest
from hypothesis import given, strategies as st

from servicenet.errors import CapacityError, ValidationError
from servicenet.model.identity import (
    PID_ALPHABET, PID_LENGTH, PeerIdentity, generate_uuid, mint_pid,
    mint_tid, parse_pid, valid_email, valid_pid, valid_tid,
)

PID_RE = re.compile(r"^[0-9A-HJKMNP-TV-Z]{6}$")


def test_alphabet_is_crockford_base32():
    assert len(PID_ALPHABET) == 32
    for ch in "ILOU":
        assert ch not in PID_ALPHABET
    assert PID_LENGTH == 6


def test_minted_pids_match_grammar():
    rng = Random(7)
    taken = set()
    for _ in range(500):
        pid = mint_pid(taken, rng)
        assert PID_RE.match(pid)
        assert valid_pid(pid)
        taken.add(pid)
    assert len(taken) == 500


def test_mint_pid_dense_namespace_enumerates():
    taken = set()
    rng = Random(1)
    # 2-char alphabet, length 3 -> 8 slots total; fill all but one.
    for _ in range(7):
        taken.add(mint_pid(taken, rng, alphabet="AB", length=3))
    last = mint_pid(taken, rng, alphabet="AB", length=3)
    assert last not in taken
    taken.add(last)
    with pytest.raises(CapacityError):
        mint_pid(taken, rng, alphabet="AB", length=3)


def test_parse_pid_normalizes_case():
    rng = Random(3)
    pid = mint_pid(set(), rng)
    assert parse_pid(pid.lower()) == pid
    with pytest.raises(ValidationError):
        parse_pid("ILOU00")
    with pytest.raises(ValidationError):
        parse_pid("ABC")


def test_tid_is_128_bit_hex():
    tid = mint_tid()
    assert re.match(r"^[0-9a-f]{32}$", tid)
    assert valid_tid(tid)
    assert mint_tid() != tid
    assert mint_tid(Random(5)) == mint_tid(Random(5))


def test_generate_uuid_is_deterministic_with_fixed_salt():
    salt = b"\x01" * 16
    a = generate_uuid(b"device-a", 1000.0, salt=salt)
    assert len(a) == 16
    assert a == generate_uuid(b"device-a", 1000.0, salt=salt)
    assert a != generate_uuid(b"device-b", 1000.0, salt=salt)
    assert a != generate_uuid(b"device-a", 1000.5, salt=salt)


def test_generate_uuid_rejects_empty_fingerprint():
    with pytest.raises(ValidationError):
        generate_uuid(b"", 0.0)


@given(st.binary(min_size=1, max_size=64), st.binary(min_size=1, max_size=64),
       st.floats(allow_nan=False, allow_infinity=False))
def test_distinct_fingerprints_distinct_tokens(fp_a, fp_b, now):
    salt = b"\x02" * 16
    if fp_a != fp_b:
        assert generate_uuid(fp_a, now, salt=salt) != generate_uuid(fp_b, now, salt=salt)


def test_valid_email():
    assert valid_email("a@b")
    assert valid_email("lily@example.com")
    assert not valid_email("a@")
    assert not valid_email("@b")
    assert not valid_email("a@b@c")
    assert not valid_email("plain")


def test_peer_identity_validation():
    uuid = generate_uuid(b"d", 1.0, salt=b"s")
    pid = mint_pid(set(), Random(0))
    ident = PeerIdentity(uuid=uuid, pid=pid, nickname="Lily", email="lily@example.com")
    assert ident.pid == pid
    with pytest.raises(ValidationError):
        PeerIdentity(uuid=uuid, pid="bad", nickname="x", email="a@b")
    with pytest.raises(ValidationError):
        PeerIdentity(uuid=uuid, pid=pid, nickname="x" * 65, email="a@b")
    with pytest.raises(ValidationError):
        PeerIdentity(uuid=uuid, pid=pid, nickname="x", email="nope")
    with pytest.raises(ValidationError):
        PeerIdentity(uuid=b"short", pid=pid, nickname="x", email="a@b")
