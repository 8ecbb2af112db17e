"""Domain types shared across the package.

All types are frozen dataclasses. Digests are lowercase hex strings, public
keys and signatures are raw bytes. ``to_json``/``from_json`` give the
external (canonical-JSON-ready) form; ``from_json`` is strict about the key
set so tampered documents fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable

from .canonical import b64decode_strict, b64encode, check_hex_digest
from .errors import FieldInvalid


class HolderKind(str, Enum):
    CUSTOMER = "CUSTOMER"
    CSP = "CSP"
    PROFILE_AUTHORITY = "PROFILE_AUTHORITY"
    ISSUER = "ISSUER"
    ACQUIRER = "ACQUIRER"


class KeyStatus(str, Enum):
    ACTIVE = "ACTIVE"
    ROTATED = "ROTATED"
    REVOKED = "REVOKED"


class AssetState(str, Enum):
    LIVE = "LIVE"
    ESCROWED = "ESCROWED"
    EGRESSED = "EGRESSED"


def expect_keys(obj: Any, keys: Iterable[str], what: str) -> dict:
    """Check ``obj`` is a dict with exactly ``keys``; raise FieldInvalid otherwise."""
    if not isinstance(obj, dict):
        raise FieldInvalid(f"{what}: expected object")
    want = set(keys)
    if set(obj) != want:
        raise FieldInvalid(f"{what}: keys {sorted(obj)} != {sorted(want)}")
    return obj


def _str(value: Any, what: str, *, empty: bool = False) -> str:
    if not isinstance(value, str) or (not empty and not value):
        raise FieldInvalid(f"{what} must be a non-empty string")
    return value


def _int(value: Any, what: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise FieldInvalid(f"{what} must be an integer")
    return value


def _str_list(value: Any, what: str) -> tuple[str, ...]:
    if not isinstance(value, (list, tuple)):
        raise FieldInvalid(f"{what} must be a list")
    return tuple(_str(v, what) for v in value)


PROFILE_FIELDS = (
    "profile_id",
    "asset_code",
    "issuing_authority",
    "denomination",
    "issue_date",
    "circulation_systems",
    "jurisdictions",
    "validation_urls",
    "authority_key_id",
)


@dataclass(frozen=True)
class AssetProfile:
    """Prospectus metadata defining an asset type.

    ``denomination`` is a label only; nothing in the infrastructure parses
    it. There is deliberately no amount or price field.
    """

    profile_id: str
    asset_code: str
    issuing_authority: str
    denomination: str
    issue_date: int
    circulation_systems: tuple[str, ...]
    jurisdictions: tuple[str, ...]
    validation_urls: tuple[str, ...]
    authority_key_id: str

    def validate(self) -> None:
        for name in ("profile_id", "asset_code", "issuing_authority", "denomination", "authority_key_id"):
            _str(getattr(self, name), name)
        _int(self.issue_date, "issue_date")
        if self.issue_date < 0:
            raise FieldInvalid("issue_date must be >= 0")
        if not self.jurisdictions:
            raise FieldInvalid("jurisdictions must be non-empty")
        if not self.circulation_systems:
            raise FieldInvalid("circulation_systems must be non-empty")
        for name in ("circulation_systems", "jurisdictions"):
            _str_list(getattr(self, name), name)
        _str_list(self.validation_urls, "validation_urls")

    def to_json(self) -> dict:
        return {
            "profile_id": self.profile_id,
            "asset_code": self.asset_code,
            "issuing_authority": self.issuing_authority,
            "denomination": self.denomination,
            "issue_date": self.issue_date,
            "circulation_systems": list(self.circulation_systems),
            "jurisdictions": list(self.jurisdictions),
            "validation_urls": list(self.validation_urls),
            "authority_key_id": self.authority_key_id,
        }

    @classmethod
    def from_json(cls, obj: Any) -> AssetProfile:
        obj = expect_keys(obj, PROFILE_FIELDS, "profile")
        profile = cls(
            profile_id=obj["profile_id"],
            asset_code=obj["asset_code"],
            issuing_authority=obj["issuing_authority"],
            denomination=obj["denomination"],
            issue_date=obj["issue_date"],
            circulation_systems=_str_list(obj["circulation_systems"], "circulation_systems"),
            jurisdictions=_str_list(obj["jurisdictions"], "jurisdictions"),
            validation_urls=_str_list(obj["validation_urls"], "validation_urls"),
            authority_key_id=obj["authority_key_id"],
        )
        profile.validate()
        return profile


@dataclass(frozen=True)
class SignedAssetProfile:
    profile: AssetProfile
    signature: bytes
    profile_hash: str

    def to_json(self) -> dict:
        return {
            "profile": self.profile.to_json(),
            "signature": b64encode(self.signature),
            "profile_hash": self.profile_hash,
        }

    @classmethod
    def from_json(cls, obj: Any) -> SignedAssetProfile:
        obj = expect_keys(obj, ("profile", "signature", "profile_hash"), "signed profile")
        try:
            signature = b64decode_strict(obj["signature"])
            profile_hash = check_hex_digest(obj["profile_hash"])
        except ValueError as exc:
            raise FieldInvalid(str(exc)) from None
        return cls(AssetProfile.from_json(obj["profile"]), signature, profile_hash)


@dataclass(frozen=True)
class KeyRecord:
    """A registered public key.

    ``holder`` names the party owning the key (stable across rotation);
    ``sponsor`` is the onboarding CSP for customer keys.
    """

    key_id: str
    public_key: bytes
    holder_kind: HolderKind
    status: KeyStatus = KeyStatus.ACTIVE
    successor: str | None = None
    holder: str = ""
    sponsor: str | None = None

    def __post_init__(self) -> None:
        if self.status is KeyStatus.ROTATED and not self.successor:
            raise FieldInvalid(f"key {self.key_id}: ROTATED record needs a successor")
        if self.status is not KeyStatus.ROTATED and self.successor is not None:
            raise FieldInvalid(f"key {self.key_id}: only ROTATED records carry a successor")

    @property
    def active(self) -> bool:
        return self.status is KeyStatus.ACTIVE

    def to_json(self) -> dict:
        return {
            "key_id": self.key_id,
            "public_key": b64encode(self.public_key),
            "holder_kind": self.holder_kind.value,
            "status": self.status.value,
            "successor": self.successor,
            "holder": self.holder,
            "sponsor": self.sponsor,
        }

    @classmethod
    def from_json(cls, obj: Any) -> KeyRecord:
        obj = expect_keys(
            obj, ("key_id", "public_key", "holder_kind", "status", "successor", "holder", "sponsor"), "key record"
        )
        try:
            return cls(
                key_id=_str(obj["key_id"], "key_id"),
                public_key=b64decode_strict(obj["public_key"]),
                holder_kind=HolderKind(obj["holder_kind"]),
                status=KeyStatus(obj["status"]),
                successor=obj["successor"],
                holder=_str(obj["holder"], "holder", empty=True),
                sponsor=obj["sponsor"],
            )
        except ValueError as exc:
            raise FieldInvalid(str(exc)) from None


@dataclass(frozen=True)
class Jurisdiction:
    code: str
    permitted_profile_hashes: frozenset[str] = frozenset()
    permitted_asset_codes: frozenset[str] = frozenset()

    def permits(self, profile_hash: str, asset_code: str) -> bool:
        return profile_hash in self.permitted_profile_hashes or asset_code in self.permitted_asset_codes


@dataclass(frozen=True)
class EscrowTerms:
    escrow_id: str
    beneficiary_key_id: str
    created_at: int
    expiry_at: int
    condition_tag: str

    def __post_init__(self) -> None:
        if self.expiry_at <= self.created_at:
            raise FieldInvalid("escrow expiry_at must be after created_at")

    def expired(self, now: int) -> bool:
        # Inclusive boundary: release strictly before expiry, revert at or after.
        return now >= self.expiry_at

    def to_json(self) -> dict:
        return {
            "escrow_id": self.escrow_id,
            "beneficiary_key_id": self.beneficiary_key_id,
            "created_at": self.created_at,
            "expiry_at": self.expiry_at,
            "condition_tag": self.condition_tag,
        }


@dataclass(frozen=True)
class EgressNote:
    dest_domain_id: str
    session_id: str
    tx_id: str


@dataclass(frozen=True)
class AssetInstance:
    asset_id: str
    profile_hash: str
    owner_key_id: str
    state: AssetState = AssetState.LIVE
    escrow: EscrowTerms | None = None
    provenance: str = ""
    egress: EgressNote | None = field(default=None)

    def __post_init__(self) -> None:
        if (self.state is AssetState.ESCROWED) != (self.escrow is not None):
            raise FieldInvalid(f"asset {self.asset_id}: ESCROWED iff escrow present")

    def to_json(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "profile_hash": self.profile_hash,
            "owner_key_id": self.owner_key_id,
            "state": self.state.value,
            "escrow": self.escrow.to_json() if self.escrow else None,
            "provenance": self.provenance,
            "egress": None
            if self.egress is None
            else {
                "dest_domain_id": self.egress.dest_domain_id,
                "session_id": self.egress.session_id,
                "tx_id": self.egress.tx_id,
            },
        }
