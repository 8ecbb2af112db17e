"""Asset profile canonicalization, signing and verification."""

from __future__ import annotations

from typing import Mapping

from .canonical import canonical_json, sha256_hex
from .crypto import DEFAULT_SCHEME, SignatureScheme
from .errors import HashMismatch, KeyInvalid, KeyRevoked, KeyUnknown, SignatureInvalid
from .model import AssetProfile, HolderKind, KeyRecord, KeyStatus, SignedAssetProfile


def canonicalize_profile(profile: AssetProfile) -> bytes:
    """Canonical bytes of a profile; raises FieldInvalid on a bad profile."""
    profile.validate()
    return canonical_json(profile.to_json())


def profile_hash(profile: AssetProfile) -> str:
    return sha256_hex(canonicalize_profile(profile))


def sign_profile(
    profile: AssetProfile,
    authority_secret: bytes,
    registry: Mapping[str, KeyRecord],
    scheme: SignatureScheme = DEFAULT_SCHEME,
) -> SignedAssetProfile:
    """Sign ``profile`` as its Profile Authority.

    The key named by ``profile.authority_key_id`` must be an ACTIVE
    PROFILE_AUTHORITY record whose public key matches ``authority_secret``.
    """
    record = registry.get(profile.authority_key_id)
    if record is None:
        raise KeyInvalid(f"authority key {profile.authority_key_id} not registered")
    if record.holder_kind is not HolderKind.PROFILE_AUTHORITY:
        raise KeyInvalid(f"key {record.key_id} is not a profile authority key")
    if record.status is not KeyStatus.ACTIVE:
        raise KeyInvalid(f"key {record.key_id} is {record.status.value}")
    if scheme.public_key(authority_secret) != record.public_key:
        raise KeyInvalid("secret does not match the registered public key")
    payload = canonicalize_profile(profile)
    return SignedAssetProfile(profile, scheme.sign(authority_secret, payload), sha256_hex(payload))


def verify_profile(
    sp: SignedAssetProfile,
    registry: Mapping[str, KeyRecord],
    scheme: SignatureScheme = DEFAULT_SCHEME,
) -> None:
    """Return None if ``sp`` is valid, otherwise raise the specific error.

    Signatures made under a key that has since been revoked or rotated are
    rejected; there is no timestamping authority to vouch for them.
    """
    payload = canonicalize_profile(sp.profile)
    if sha256_hex(payload) != sp.profile_hash:
        raise HashMismatch("profile_hash does not match the profile content")
    record = registry.get(sp.profile.authority_key_id)
    if record is None or record.holder_kind is not HolderKind.PROFILE_AUTHORITY:
        raise KeyUnknown(f"no profile authority key {sp.profile.authority_key_id}")
    if record.status is not KeyStatus.ACTIVE:
        raise KeyRevoked(f"authority key {record.key_id} is {record.status.value}")
    if not scheme.verify(record.public_key, payload, sp.signature):
        raise SignatureInvalid("profile signature does not verify")
