"""Signing keys and the signature scheme interface.

The reference scheme is Ed25519 (via ``cryptography``). Signing is
deterministic, so a scenario replays to byte-identical signatures. Keys for
simulated parties are derived from a scenario key seed plus the key id.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)


class SignatureScheme:
    """Interface every signature scheme implements."""

    name = "abstract"

    def public_key(self, secret: bytes) -> bytes:
        raise NotImplementedError

    def sign(self, secret: bytes, message: bytes) -> bytes:
        raise NotImplementedError

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        raise NotImplementedError


@lru_cache(maxsize=4096)
def _private(secret: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(secret)


@lru_cache(maxsize=4096)
def _public(public_key: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(public_key)


# Both caches memoize pure functions; simulated nodes re-check the same
# quorum certificates and transactions many times.
@lru_cache(maxsize=1 << 16)
def _ed_sign(secret: bytes, message: bytes) -> bytes:
    return _private(secret).sign(message)


@lru_cache(maxsize=1 << 17)
def _ed_verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        _public(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


class Ed25519Scheme(SignatureScheme):
    name = "ed25519"

    def public_key(self, secret: bytes) -> bytes:
        return _private(secret).public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    def sign(self, secret: bytes, message: bytes) -> bytes:
        return _ed_sign(secret, message)

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        if len(public_key) != 32 or len(signature) != 64:
            return False
        return _ed_verify(public_key, message, signature)


ED25519 = Ed25519Scheme()
DEFAULT_SCHEME: SignatureScheme = ED25519


@dataclass(frozen=True)
class KeyPair:
    key_id: str
    secret: bytes = field(repr=False)
    public_key: bytes

    def sign(self, message: bytes, scheme: SignatureScheme | None = None) -> bytes:
        return (scheme or DEFAULT_SCHEME).sign(self.secret, message)


def derive_keypair(key_seed: str, key_id: str, scheme: SignatureScheme | None = None) -> KeyPair:
    """Derive a reproducible key pair for ``key_id`` from a scenario key seed."""
    secret = hashlib.sha256(f"cspsim/key/{key_seed}/{key_id}".encode()).digest()
    return KeyPair(key_id, secret, (scheme or DEFAULT_SCHEME).public_key(secret))


def verify_signature(public_key: bytes, message: bytes, signature: bytes,
                     scheme: SignatureScheme | None = None) -> bool:
    return (scheme or DEFAULT_SCHEME).verify(public_key, message, signature)
