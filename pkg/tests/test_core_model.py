from __future__ import annotations

import hashlib
import json
import random
from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cspsim import errors as E
from cspsim.canonical import b64decode_strict, canonical_json, parse_canonical
from cspsim.model import AssetInstance, AssetProfile, AssetState, EscrowTerms, HolderKind, KeyRecord, KeyStatus, \
    SignedAssetProfile
from cspsim.profiles import canonicalize_profile, profile_hash, sign_profile, verify_profile

from helpers import authority_registry, key, profile, signed

VECTORS = Path(__file__).parent / "vectors"

# Digests taken with sha256sum over the hand-written bytes in tests/vectors.
REFERENCE_DIGEST = "5d27db433efe48715fde79bddd84b13dafeea6e0876e46c5f369cf1b0611d36a"
UNICODE_DIGEST = "3f0e9cbac51d1bc270cb3414b73ef7c7602f2ff8fd1ce6f3d1bf7debed8af7ff"


def test_reference_profile_golden_vector():
    expected = (VECTORS / "reference_profile.canonical.json").read_bytes()
    assert canonicalize_profile(profile()) == expected
    assert profile_hash(profile()) == REFERENCE_DIGEST == hashlib.sha256(expected).hexdigest()


def test_unicode_profile_golden_vector():
    p = profile(asset_code='EUR"X', circulation_systems=("ledger-β",), denomination="1 €\n\x01", issue_date=0,
                issuing_authority="Émetteur", jurisdictions=("FR",), profile_id="P-ü", validation_urls=())
    expected = (VECTORS / "unicode_profile.canonical.json").read_bytes()
    assert canonicalize_profile(p) == expected
    assert profile_hash(p) == UNICODE_DIGEST


def test_field_order_does_not_matter():
    obj = profile().to_json()
    shuffled = dict(reversed(list(obj.items())))
    assert canonicalize_profile(AssetProfile.from_json(shuffled)) == canonicalize_profile(profile())


@pytest.mark.parametrize("field", ["jurisdictions", "circulation_systems"])
def test_empty_required_list_is_field_invalid(field):
    with pytest.raises(E.FieldInvalid):
        canonicalize_profile(profile(**{field: ()}))


def test_canonical_json_rejects_floats_and_noncanonical_input():
    with pytest.raises(E.FieldInvalid):
        canonical_json({"x": 1.5})
    with pytest.raises(ValueError):
        parse_canonical(b'{"b":1, "a":2}')
    with pytest.raises(ValueError):
        parse_canonical(b'{"a":1.0}')
    assert parse_canonical(b'{"a":[1,"x"],"b":null}') == {"a": [1, "x"], "b": None}


def test_b64_strict_rejects_alternate_spellings():
    assert b64decode_strict("AAE=") == b"\x00\x01"
    for bad in ("AAF=", "AAE", "AA E=", 5):
        with pytest.raises(ValueError):
            b64decode_strict(bad)


def test_sign_then_verify_roundtrip():
    sp = signed()
    assert verify_profile(sp, authority_registry()) is None
    assert sp.profile_hash == REFERENCE_DIGEST


def test_flipped_payload_byte_is_rejected():
    sp = signed()
    tampered = replace(sp, profile=replace(sp.profile, denomination="2 unit"))
    with pytest.raises(E.HashMismatch):
        verify_profile(tampered, authority_registry())
    # keep the hash consistent so only the signature can catch it
    rehashed = replace(tampered, profile_hash=profile_hash(tampered.profile))
    with pytest.raises(E.SignatureInvalid):
        verify_profile(rehashed, authority_registry())


def test_altered_hash_field_is_hash_mismatch():
    sp = signed()
    with pytest.raises(E.HashMismatch):
        verify_profile(replace(sp, profile_hash="0" * 64), authority_registry())


@pytest.mark.parametrize("status", [KeyStatus.REVOKED, KeyStatus.ROTATED])
def test_sign_with_inactive_authority_is_key_invalid(status):
    with pytest.raises(E.KeyInvalid):
        sign_profile(profile(), key("pa-1").secret, authority_registry(status))


def test_sign_with_wrong_secret_or_kind_is_key_invalid():
    with pytest.raises(E.KeyInvalid):
        sign_profile(profile(), key("mallory").secret, authority_registry())
    wrong_kind = {"pa-1": KeyRecord("pa-1", key("pa-1").public_key, HolderKind.CSP)}
    with pytest.raises(E.KeyInvalid):
        sign_profile(profile(), key("pa-1").secret, wrong_kind)


def test_revoked_after_signing_is_key_revoked():
    sp = signed()
    with pytest.raises(E.KeyRevoked):
        verify_profile(sp, authority_registry(KeyStatus.REVOKED))


def test_unknown_authority_is_key_unknown():
    with pytest.raises(E.KeyUnknown):
        verify_profile(signed(), {})


def test_signed_profile_json_roundtrip():
    sp = signed()
    again = SignedAssetProfile.from_json(json.loads(canonical_json(sp.to_json())))
    assert again == sp


def test_key_record_status_rules():
    pub = key("x").public_key
    with pytest.raises(E.FieldInvalid):
        KeyRecord("x", pub, HolderKind.CUSTOMER, KeyStatus.ROTATED)
    with pytest.raises(E.FieldInvalid):
        KeyRecord("x", pub, HolderKind.CUSTOMER, KeyStatus.REVOKED, successor="y")
    rec = KeyRecord("x", pub, HolderKind.CUSTOMER, KeyStatus.ROTATED, successor="y")
    assert KeyRecord.from_json(rec.to_json()) == rec


def test_asset_instance_and_escrow_invariants():
    with pytest.raises(E.FieldInvalid):
        EscrowTerms("e", "b", created_at=5, expiry_at=5, condition_tag="")
    terms = EscrowTerms("e", "b", created_at=5, expiry_at=6, condition_tag="")
    with pytest.raises(E.FieldInvalid):
        AssetInstance("a", "h", "o", AssetState.ESCROWED)
    with pytest.raises(E.FieldInvalid):
        AssetInstance("a", "h", "o", AssetState.LIVE, terms)
    assert not terms.expired(5) and terms.expired(6)


texts = st.text(min_size=1, max_size=12)
profiles = st.builds(
    AssetProfile,
    profile_id=texts, asset_code=texts, issuing_authority=texts, denomination=texts,
    issue_date=st.integers(min_value=0, max_value=10**9),
    circulation_systems=st.lists(texts, min_size=1, max_size=3).map(tuple),
    jurisdictions=st.lists(texts, min_size=1, max_size=3).map(tuple),
    validation_urls=st.lists(texts, max_size=3).map(tuple),
    authority_key_id=st.just("pa-1"),
)


@settings(max_examples=200, deadline=None)
@given(profiles)
def test_canonicalization_is_idempotent(p):
    data = canonicalize_profile(p)
    again = AssetProfile.from_json(parse_canonical(data))
    assert canonicalize_profile(again) == data
    assert profile_hash(again) == profile_hash(p)


def test_signature_soundness_fuzz():
    """10,000 random single-byte mutations of signed profiles are all rejected."""
    rng = random.Random(7)
    registry = authority_registry()
    base = [signed(profile(profile_id=f"P{i}", denomination=f"{i} unit")) for i in range(10)]
    accepted = []
    for i in range(10_000):
        sp = base[i % len(base)]
        doc = bytearray(canonical_json(sp.to_json()))
        pos = rng.randrange(len(doc))
        doc[pos] = (doc[pos] + rng.randrange(1, 256)) % 256
        try:
            verify_profile(SignedAssetProfile.from_json(parse_canonical(bytes(doc))), registry)
        except (ValueError, E.CspError):
            continue
        accepted.append(pos)
    assert accepted == []
