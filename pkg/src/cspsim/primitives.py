"""Contract primitives as pure validators/appliers over a state table.

Every ``apply_*`` function takes a :class:`StateTable` and a signed
:class:`PrimitiveTx` and returns a new table, or raises a
:class:`~cspsim.errors.CspError` naming the violated rule. Nothing here
reads an asset's denomination or code; assets are distinct instances with
no amount field.

Logical time: transactions in block ``h`` execute with
``state.next_logical_time == h``. An escrow is expired once
``next_logical_time >= expiry_at``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Any, Iterable, Mapping

from . import errors as E
from .canonical import b64decode_strict, b64encode, canonical_json
from .crypto import KeyPair, verify_signature
from .model import (
    AssetInstance,
    AssetState,
    EgressNote,
    EscrowTerms,
    HolderKind,
    KeyRecord,
    KeyStatus,
    SignedAssetProfile,
    expect_keys,
)
from .profiles import verify_profile


class TxKind(str, Enum):
    TRANSFER = "TRANSFER"
    ESCROW_CREATE = "ESCROW_CREATE"
    ESCROW_RELEASE = "ESCROW_RELEASE"
    ESCROW_REVERT = "ESCROW_REVERT"
    INGRESS = "INGRESS"
    EGRESS = "EGRESS"
    KEY_OP = "KEY_OP"
    ASSET_TYPE_OP = "ASSET_TYPE_OP"


PAYLOAD_FIELDS: dict[TxKind, tuple[str, ...]] = {
    TxKind.TRANSFER: ("asset_id", "to_key_id"),
    TxKind.ESCROW_CREATE: ("asset_id", "beneficiary_key_id", "expiry_at", "condition_tag"),
    TxKind.ESCROW_RELEASE: ("escrow_id", "condition_tag"),
    TxKind.ESCROW_REVERT: ("escrow_id",),
    TxKind.INGRESS: ("profile_hash", "asset_id", "owner_key_id", "session_id"),
    TxKind.EGRESS: ("asset_id", "dest_domain_id", "session_id"),
    TxKind.KEY_OP: ("op", "holder_kind", "key_id", "public_key", "holder", "new_key_id", "new_public_key"),
    TxKind.ASSET_TYPE_OP: ("op", "profile_hash", "signed_profile"),
}


@dataclass(frozen=True)
class PrimitiveTx:
    tx_id: str
    domain_id: str
    kind: TxKind
    payload: Mapping[str, Any]
    submitter_key_id: str
    signature: bytes = b""

    def body(self) -> dict:
        return {
            "tx_id": self.tx_id,
            "domain_id": self.domain_id,
            "kind": self.kind.value,
            "payload": dict(self.payload),
            "submitter_key_id": self.submitter_key_id,
        }

    @cached_property
    def signing_bytes(self) -> bytes:
        return canonical_json(self.body())

    def to_json(self) -> dict:
        out = self.body()
        out["signature"] = b64encode(self.signature)
        return out

    @classmethod
    def from_json(cls, obj: Any) -> PrimitiveTx:
        obj = expect_keys(
            obj, ("tx_id", "domain_id", "kind", "payload", "submitter_key_id", "signature"), "tx"
        )
        try:
            kind = TxKind(obj["kind"])
            signature = b64decode_strict(obj["signature"])
        except ValueError as exc:
            raise E.FieldInvalid(str(exc)) from None
        payload = expect_keys(obj["payload"], PAYLOAD_FIELDS[kind], f"{kind.value} payload")
        for name in ("tx_id", "domain_id", "submitter_key_id"):
            if not isinstance(obj[name], str) or not obj[name]:
                raise E.FieldInvalid(f"tx.{name} must be a non-empty string")
        return cls(obj["tx_id"], obj["domain_id"], kind, payload, obj["submitter_key_id"], signature)


def make_tx(
    domain_id: str, kind: TxKind, payload: Mapping[str, Any], signer: KeyPair, tx_id: str
) -> PrimitiveTx:
    """Build and sign a transaction with ``signer``."""
    payload = dict(payload)
    expect_keys(payload, PAYLOAD_FIELDS[kind], f"{kind.value} payload")
    unsigned = PrimitiveTx(tx_id, domain_id, kind, payload, signer.key_id)
    return replace(unsigned, signature=signer.sign(unsigned.signing_bytes))


@dataclass(frozen=True)
class StateTable:
    """Derived state of one domain's ledger.

    ``authorities`` is the domain's Profile Authority registry; it is
    configuration, fixed for the life of the ledger.
    """

    domain_id: str
    assets: Mapping[str, AssetInstance] = field(default_factory=dict)
    keys: Mapping[str, KeyRecord] = field(default_factory=dict)
    asset_types: frozenset[str] = frozenset()
    next_logical_time: int = 0
    authorities: Mapping[str, KeyRecord] = field(default_factory=dict, compare=False)

    def with_asset(self, asset: AssetInstance) -> StateTable:
        assets = dict(self.assets)
        assets[asset.asset_id] = asset
        return replace(self, assets=assets)

    def with_keys(self, *records: KeyRecord) -> StateTable:
        keys = dict(self.keys)
        for record in records:
            keys[record.key_id] = record
        return replace(self, keys=keys)

    def find_escrow(self, escrow_id: str) -> AssetInstance | None:
        for asset in self.assets.values():
            if asset.escrow is not None and asset.escrow.escrow_id == escrow_id:
                return asset
        return None

    def pending_escrow_expiry(self) -> int | None:
        """Earliest expiry among escrows not yet expired, if any."""
        now = self.next_logical_time
        pending = [
            a.escrow.expiry_at for a in self.assets.values() if a.escrow and a.escrow.expiry_at > now
        ]
        return min(pending) if pending else None

    def to_json(self) -> dict:
        return {
            "domain_id": self.domain_id,
            "assets": {k: a.to_json() for k, a in sorted(self.assets.items())},
            "keys": {k: r.to_json() for k, r in sorted(self.keys.items())},
            "asset_types": sorted(self.asset_types),
            "next_logical_time": self.next_logical_time,
        }


# signature and authority helpers


def _signer(state: StateTable, tx: PrimitiveTx) -> KeyRecord:
    record = state.keys.get(tx.submitter_key_id)
    if record is None:
        raise E.KeyUnknown(f"submitter key {tx.submitter_key_id} not registered")
    if record.status is not KeyStatus.ACTIVE:
        raise E.KeyRevoked(f"submitter key {tx.submitter_key_id} is {record.status.value}")
    if not verify_signature(record.public_key, tx.signing_bytes, tx.signature):
        raise E.SignatureInvalid(f"tx {tx.tx_id} signature does not verify")
    return record


def _csp_signer(state: StateTable, tx: PrimitiveTx) -> KeyRecord:
    record = _signer(state, tx)
    if record.holder_kind is not HolderKind.CSP:
        raise E.NotCSP(f"{tx.submitter_key_id} is not a CSP key of {state.domain_id}")
    return record


def controls(state: StateTable, signer_key_id: str, owner_key_id: str) -> bool:
    """True if ``signer_key_id`` is ``owner_key_id`` or its rotation successor.

    Rotation never moves ownership; the successor key may sign on behalf of
    assets still held under a predecessor id, so those can be transferred
    explicitly.
    """
    key_id: str | None = owner_key_id
    seen = set()
    while key_id is not None and key_id not in seen:
        if key_id == signer_key_id:
            return True
        seen.add(key_id)
        record = state.keys.get(key_id)
        key_id = record.successor if record is not None else None
    return False


def _asset(state: StateTable, asset_id: str) -> AssetInstance:
    asset = state.assets.get(asset_id)
    if asset is None:
        raise E.AssetUnknown(f"asset {asset_id} not in {state.domain_id}")
    return asset


def _active_customer(state: StateTable, key_id: str) -> KeyRecord | None:
    record = state.keys.get(key_id)
    if record is None or record.status is not KeyStatus.ACTIVE:
        return None
    return record


# primitives


def apply_transfer(state: StateTable, asset_id: str, to_key_id: str, tx: PrimitiveTx) -> StateTable:
    signer = _signer(state, tx)
    asset = _asset(state, asset_id)
    if asset.state is not AssetState.LIVE:
        raise E.AssetNotLive(f"asset {asset_id} is {asset.state.value}")
    if not controls(state, signer.key_id, asset.owner_key_id):
        raise E.NotOwner(f"{signer.key_id} does not own {asset_id}")
    recipient = _active_customer(state, to_key_id)
    if recipient is None:
        raise E.RecipientUnknown(f"recipient {to_key_id} not an active key here")
    if recipient.holder_kind is not HolderKind.CUSTOMER:
        raise E.RecipientNotCustomer(f"recipient {to_key_id} is {recipient.holder_kind.value}")
    return state.with_asset(replace(asset, owner_key_id=to_key_id))


def apply_escrow_create(
    state: StateTable,
    asset_id: str,
    beneficiary_key_id: str,
    expiry_at: int,
    tx: PrimitiveTx,
    condition_tag: str = "",
) -> StateTable:
    signer = _signer(state, tx)
    asset = _asset(state, asset_id)
    if asset.state is not AssetState.LIVE:
        raise E.AssetNotLive(f"asset {asset_id} is {asset.state.value}")
    if not controls(state, signer.key_id, asset.owner_key_id):
        raise E.NotOwner(f"{signer.key_id} does not own {asset_id}")
    beneficiary = _active_customer(state, beneficiary_key_id)
    if beneficiary is None or beneficiary.holder_kind not in (HolderKind.CUSTOMER, HolderKind.CSP):
        raise E.BeneficiaryUnknown(f"beneficiary {beneficiary_key_id} unknown or inactive")
    if not isinstance(expiry_at, int) or expiry_at <= state.next_logical_time:
        raise E.ExpiryInPast(f"expiry {expiry_at} <= logical time {state.next_logical_time}")
    terms = EscrowTerms(
        escrow_id=tx.tx_id,
        beneficiary_key_id=beneficiary_key_id,
        created_at=state.next_logical_time,
        expiry_at=expiry_at,
        condition_tag=condition_tag,
    )
    return state.with_asset(replace(asset, state=AssetState.ESCROWED, escrow=terms))


def apply_escrow_release(
    state: StateTable, escrow_id: str, tx: PrimitiveTx, condition_tag: str = ""
) -> StateTable:
    signer = _signer(state, tx)
    asset = state.find_escrow(escrow_id)
    if asset is None:
        raise E.EscrowUnknown(f"no open escrow {escrow_id}")
    terms = asset.escrow
    if terms.expired(state.next_logical_time):
        raise E.EscrowExpired(f"escrow {escrow_id} expired at {terms.expiry_at}")
    if not controls(state, signer.key_id, terms.beneficiary_key_id):
        raise E.NotBeneficiary(f"{signer.key_id} is not the beneficiary of {escrow_id}")
    if condition_tag != terms.condition_tag:
        raise E.ConditionMismatch(f"condition tag mismatch for {escrow_id}")
    return state.with_asset(
        replace(asset, owner_key_id=terms.beneficiary_key_id, state=AssetState.LIVE, escrow=None)
    )


def apply_escrow_revert(state: StateTable, escrow_id: str, tx: PrimitiveTx) -> StateTable:
    signer = _signer(state, tx)
    asset = state.find_escrow(escrow_id)
    if asset is None:
        raise E.EscrowUnknown(f"no open escrow {escrow_id}")
    terms = asset.escrow
    if not terms.expired(state.next_logical_time):
        raise E.EscrowNotExpired(f"escrow {escrow_id} open until {terms.expiry_at}")
    if not (
        controls(state, signer.key_id, asset.owner_key_id)
        or controls(state, signer.key_id, terms.beneficiary_key_id)
    ):
        raise E.NotOwner(f"{signer.key_id} is neither owner nor beneficiary of {escrow_id}")
    return state.with_asset(replace(asset, state=AssetState.LIVE, escrow=None))


def apply_ingress(
    state: StateTable,
    profile_hash: str,
    asset_id: str,
    owner_key_id: str,
    tx: PrimitiveTx,
) -> StateTable:
    _csp_signer(state, tx)
    if profile_hash not in state.asset_types:
        raise E.AssetTypeNotAdmitted(f"profile {profile_hash[:12]} not admitted in {state.domain_id}")
    if asset_id in state.assets:
        raise E.DuplicateAssetId(f"asset id {asset_id} already used")
    owner = _active_customer(state, owner_key_id)
    if owner is None or owner.holder_kind is not HolderKind.CUSTOMER:
        raise E.OwnerUnknown(f"owner {owner_key_id} is not an active customer")
    asset = AssetInstance(asset_id, profile_hash, owner_key_id, AssetState.LIVE, None, tx.tx_id)
    return state.with_asset(asset)


def apply_egress(
    state: StateTable, asset_id: str, dest_domain_id: str, session_id: str, tx: PrimitiveTx
) -> StateTable:
    signer = _csp_signer(state, tx)
    asset = _asset(state, asset_id)
    if asset.state is not AssetState.ESCROWED or asset.escrow.beneficiary_key_id != signer.key_id:
        raise E.AssetNotLocked(f"asset {asset_id} is not locked to {signer.key_id}")
    if asset.escrow.condition_tag != session_id:
        raise E.SessionMismatch(f"asset {asset_id} is locked under another session")
    note = EgressNote(dest_domain_id, session_id, tx.tx_id)
    return state.with_asset(replace(asset, state=AssetState.EGRESSED, escrow=None, egress=note))


def _key_op_authorized(state: StateTable, signer: KeyRecord, subject: KeyRecord | None,
                       holder_kind: HolderKind, subject_key_id: str) -> None:
    if signer.holder_kind is not HolderKind.CSP:
        raise E.Unauthorized(f"{signer.key_id} may not manage keys")
    if holder_kind is HolderKind.CUSTOMER:
        if subject is not None and subject.sponsor != signer.holder:
            raise E.Unauthorized(f"{signer.holder} did not onboard {subject.key_id}")
    elif holder_kind is HolderKind.CSP:
        if signer.key_id == subject_key_id:
            raise E.Unauthorized("a CSP key cannot authorize an operation on itself")
    else:
        raise E.Unauthorized(f"key kind {holder_kind.value} is not managed in a domain")


def apply_key_op(state: StateTable, op: str, holder_kind: HolderKind | str, subject: Mapping[str, Any],
                 tx: PrimitiveTx) -> StateTable:
    """REGISTER, ROTATE or REVOKE a CUSTOMER or CSP key.

    ``subject`` carries ``key_id``, ``public_key`` (base64, REGISTER),
    ``holder`` (REGISTER), ``new_key_id`` and ``new_public_key`` (ROTATE).
    At logical time 0 a CSP key may register itself, which is how a domain's
    founding CSP keys enter the genesis block.
    """
    holder_kind = HolderKind(holder_kind)
    key_id = subject["key_id"]
    existing = state.keys.get(key_id)

    if op == "REGISTER":
        if existing is not None:
            raise E.BadTransition(f"key {key_id} already registered")
        try:
            public_key = b64decode_strict(subject["public_key"])
        except (ValueError, TypeError):
            raise E.PayloadInvalid("REGISTER needs a base64 public_key") from None
        bootstrap = (
            holder_kind is HolderKind.CSP
            and state.next_logical_time == 0
            and tx.submitter_key_id == key_id
        )
        if bootstrap:
            if not verify_signature(public_key, tx.signing_bytes, tx.signature):
                raise E.SignatureInvalid("bootstrap registration must be self-signed")
            signer = None
        else:
            signer = _signer(state, tx)
            _key_op_authorized(state, signer, None, holder_kind, key_id)
        holder = subject.get("holder") or ""
        sponsor = None
        if holder_kind is HolderKind.CUSTOMER:
            sponsor = signer.holder
            for other in state.keys.values():
                if other.holder == holder and other.holder_kind is HolderKind.CUSTOMER and other.sponsor != sponsor:
                    raise E.Unauthorized(f"customer {holder} already belongs to {other.sponsor}")
        record = KeyRecord(key_id, public_key, holder_kind, KeyStatus.ACTIVE, None, holder, sponsor)
        return state.with_keys(record)

    if op not in ("ROTATE", "REVOKE"):
        raise E.PayloadInvalid(f"unknown key op {op!r}")
    signer = _signer(state, tx)
    if existing is None:
        raise E.KeyUnknown(f"key {key_id} not registered")
    if existing.holder_kind is not holder_kind:
        raise E.PayloadInvalid(f"key {key_id} is {existing.holder_kind.value}, not {holder_kind.value}")
    _key_op_authorized(state, signer, existing, holder_kind, key_id)
    if existing.status is not KeyStatus.ACTIVE:
        raise E.BadTransition(f"cannot {op.lower()} a {existing.status.value} key")
    if op == "REVOKE":
        return state.with_keys(replace(existing, status=KeyStatus.REVOKED))
    new_key_id = subject.get("new_key_id")
    if not isinstance(new_key_id, str) or not new_key_id:
        raise E.PayloadInvalid("ROTATE needs new_key_id")
    if new_key_id in state.keys:
        raise E.BadTransition(f"key {new_key_id} already registered")
    try:
        new_public = b64decode_strict(subject["new_public_key"])
    except (ValueError, TypeError):
        raise E.PayloadInvalid("ROTATE needs a base64 new_public_key") from None
    successor = KeyRecord(new_key_id, new_public, holder_kind, KeyStatus.ACTIVE, None,
                          existing.holder, existing.sponsor)
    return state.with_keys(replace(existing, status=KeyStatus.ROTATED, successor=new_key_id), successor)


def apply_asset_type_op(state: StateTable, op: str, profile_hash: str, tx: PrimitiveTx,
                        signed_profile: Any = None) -> StateTable:
    _csp_signer(state, tx)
    if op == "ADD":
        try:
            sp = signed_profile if isinstance(signed_profile, SignedAssetProfile) else \
                SignedAssetProfile.from_json(signed_profile)
            verify_profile(sp, state.authorities)
        except E.CspError as exc:
            raise E.ProfileInvalid(f"{type(exc).__name__}: {exc}") from None
        if sp.profile_hash != profile_hash:
            raise E.ProfileInvalid("payload profile_hash does not match the signed profile")
        return replace(state, asset_types=state.asset_types | {profile_hash})
    if op == "REMOVE":
        if profile_hash not in state.asset_types:
            raise E.TypeUnknown(f"profile {profile_hash[:12]} not admitted")
        for asset in state.assets.values():
            if asset.profile_hash == profile_hash and asset.state is not AssetState.EGRESSED:
                raise E.TypeInUse(f"asset {asset.asset_id} of that type is {asset.state.value}")
        return replace(state, asset_types=state.asset_types - {profile_hash})
    raise E.PayloadInvalid(f"unknown asset type op {op!r}")


def apply_tx(state: StateTable, tx: PrimitiveTx) -> StateTable:
    """Validate and apply one transaction of any kind."""
    if tx.domain_id != state.domain_id:
        raise E.DomainMismatch(f"tx for {tx.domain_id} applied to {state.domain_id}")
    p = tx.payload
    expect = PAYLOAD_FIELDS[tx.kind]
    if set(p) != set(expect):
        raise E.PayloadInvalid(f"{tx.kind.value} payload keys {sorted(p)}")
    kind = tx.kind
    if kind is TxKind.TRANSFER:
        return apply_transfer(state, p["asset_id"], p["to_key_id"], tx)
    if kind is TxKind.ESCROW_CREATE:
        return apply_escrow_create(state, p["asset_id"], p["beneficiary_key_id"], p["expiry_at"], tx,
                                   p["condition_tag"])
    if kind is TxKind.ESCROW_RELEASE:
        return apply_escrow_release(state, p["escrow_id"], tx, p["condition_tag"])
    if kind is TxKind.ESCROW_REVERT:
        return apply_escrow_revert(state, p["escrow_id"], tx)
    if kind is TxKind.INGRESS:
        return apply_ingress(state, p["profile_hash"], p["asset_id"], p["owner_key_id"], tx)
    if kind is TxKind.EGRESS:
        return apply_egress(state, p["asset_id"], p["dest_domain_id"], p["session_id"], tx)
    if kind is TxKind.KEY_OP:
        return apply_key_op(state, p["op"], p["holder_kind"], p, tx)
    return apply_asset_type_op(state, p["op"], p["profile_hash"], tx, p["signed_profile"])


def apply_txs(state: StateTable, txs: Iterable[PrimitiveTx]) -> StateTable:
    for tx in txs:
        state = apply_tx(state, tx)
    return state


# cost and fee model

DEFAULT_OP_COSTS: dict[TxKind, int] = {
    TxKind.TRANSFER: 10,
    TxKind.ESCROW_CREATE: 15,
    TxKind.ESCROW_RELEASE: 15,
    TxKind.ESCROW_REVERT: 15,
    TxKind.INGRESS: 25,
    TxKind.EGRESS: 25,
    TxKind.KEY_OP: 5,
    TxKind.ASSET_TYPE_OP: 20,
}


@dataclass(frozen=True)
class OpCostTable:
    costs: Mapping[TxKind, int] = field(default_factory=lambda: dict(DEFAULT_OP_COSTS))

    def __post_init__(self) -> None:
        for kind in TxKind:
            cost = self.costs.get(kind)
            if not isinstance(cost, int) or isinstance(cost, bool) or cost <= 0:
                raise E.FieldInvalid(f"cost for {kind.value} must be a positive integer")

    @classmethod
    def from_json(cls, obj: Mapping[str, int]) -> OpCostTable:
        costs = dict(DEFAULT_OP_COSTS)
        for name, value in obj.items():
            try:
                costs[TxKind(name)] = value
            except ValueError:
                raise E.FieldInvalid(f"unknown tx kind {name!r}") from None
        return cls(costs)


DEFAULT_COSTS = OpCostTable()


def op_cost(kind: TxKind | str, table: OpCostTable = DEFAULT_COSTS) -> int:
    return table.costs[TxKind(kind)]


def total_cost(txs: Iterable[PrimitiveTx], table: OpCostTable = DEFAULT_COSTS) -> int:
    return sum(table.costs[tx.kind] for tx in txs)


@dataclass(frozen=True)
class FeeTier:
    name: str
    monthly_included_invocations: int
    per_extra_invocation_fee: int


@dataclass(frozen=True)
class FeeSchedule:
    tiers: tuple[FeeTier, ...]
    assignment: Mapping[str, str] = field(default_factory=dict)

    def tier(self, name: str) -> FeeTier:
        for tier in self.tiers:
            if tier.name == name:
                return tier
        raise E.CustomerUnassigned(f"no tier named {name!r}")


def invoke_fee(schedule: FeeSchedule, customer: str, running_count: int) -> int:
    """Fee for the ``running_count``-th (1-based) invocation this period."""
    tier_name = schedule.assignment.get(customer)
    if tier_name is None:
        raise E.CustomerUnassigned(f"customer {customer} has no tier")
    tier = schedule.tier(tier_name)
    if running_count <= tier.monthly_included_invocations:
        return 0
    return tier.per_extra_invocation_fee
