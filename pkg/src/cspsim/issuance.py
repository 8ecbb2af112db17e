"""Issuer and Acquirer roles at the value boundary (the 4-corners loop).

Value lives here and only here, as an opaque ``external_reference`` on a
:class:`ValueClaim`. What crosses into a domain is an ingress request that
names a profile hash and an owner, nothing else.

Claim lifecycle: RESERVED -> REPRESENTED (ingress committed) -> REDEEMED
(settlement done). Settlement records go PENDING -> SETTLED.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping

from . import errors as E
from .gateway import TransferReceipt, verify_receipt
from .ledger import Ledger
from .model import AssetState, KeyRecord, SignedAssetProfile
from .primitives import PrimitiveTx, TxKind, make_tx
from .crypto import KeyPair
from .profiles import verify_profile


class ClaimStatus(str, Enum):
    RESERVED = "RESERVED"
    REPRESENTED = "REPRESENTED"
    REDEEMED = "REDEEMED"


class SettlementStatus(str, Enum):
    PENDING = "PENDING"
    SETTLED = "SETTLED"


@dataclass(frozen=True)
class Issuer:
    issuer_id: str
    authority: str


@dataclass(frozen=True)
class Acquirer:
    acquirer_id: str


@dataclass(frozen=True)
class ValueClaim:
    claim_id: str
    issuer_id: str
    profile_hash: str
    external_reference: str
    status: ClaimStatus = ClaimStatus.RESERVED

    def to_json(self) -> dict:
        return {
            "claim_id": self.claim_id,
            "issuer_id": self.issuer_id,
            "profile_hash": self.profile_hash,
            "external_reference": self.external_reference,
            "status": self.status.value,
        }


@dataclass(frozen=True)
class IngressRequest:
    """What an issuer hands to a CSP: no value, just type and owner."""

    claim_id: str
    domain_id: str
    profile_hash: str
    asset_id: str
    owner_key_id: str

    def to_tx(self, csp_key: KeyPair) -> PrimitiveTx:
        payload = {"profile_hash": self.profile_hash, "asset_id": self.asset_id,
                   "owner_key_id": self.owner_key_id, "session_id": ""}
        return make_tx(self.domain_id, TxKind.INGRESS, payload, csp_key, f"issue:{self.claim_id}")


@dataclass(frozen=True)
class EgressProof:
    domain_id: str
    egress_tx_id: str


@dataclass(frozen=True)
class SettlementRecord:
    record_id: str
    acquirer_id: str
    issuer_id: str
    claim_id: str
    asset_id: str
    reference: str
    status: SettlementStatus = SettlementStatus.PENDING

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "acquirer_id": self.acquirer_id,
            "issuer_id": self.issuer_id,
            "claim_id": self.claim_id,
            "asset_id": self.asset_id,
            "reference": self.reference,
            "status": self.status.value,
        }


@dataclass
class ClaimRegistry:
    """Off-ledger book of claims and settlements kept by the issuers/acquirers."""

    claims: dict[str, ValueClaim] = field(default_factory=dict)
    requests: dict[str, IngressRequest] = field(default_factory=dict)
    asset_claims: dict[str, str] = field(default_factory=dict)
    records: dict[str, SettlementRecord] = field(default_factory=dict)

    def reserve(self, claim: ValueClaim) -> ValueClaim:
        if claim.claim_id in self.claims:
            raise E.ClaimNotReserved(f"claim {claim.claim_id} already exists")
        claim = replace(claim, status=ClaimStatus.RESERVED)
        self.claims[claim.claim_id] = claim
        return claim

    def claim_for_asset(self, asset_id: str) -> ValueClaim | None:
        """Resolve an asset, possibly session-qualified by transfers, to its claim."""
        while True:
            cid = self.asset_claims.get(asset_id)
            if cid is not None:
                return self.claims[cid]
            if ":" not in asset_id:
                return None
            asset_id = asset_id.split(":", 1)[1]

    def to_json(self) -> dict:
        return {
            "claims": [c.to_json() for _, c in sorted(self.claims.items())],
            "settlements": [r.to_json() for _, r in sorted(self.records.items())],
        }


def issue_asset(issuer: Issuer, sp: SignedAssetProfile, claim_id: str, target_customer: str, domain_id: str,
                registry: ClaimRegistry, authorities: Mapping[str, KeyRecord]) -> IngressRequest:
    """Turn a RESERVED claim into an ingress request for a CSP of ``domain_id``."""
    claim = registry.claims.get(claim_id)
    if claim is None or claim.status is not ClaimStatus.RESERVED or claim_id in registry.requests:
        raise E.ClaimNotReserved(f"claim {claim_id} is not an unused reservation")
    try:
        verify_profile(sp, authorities)
    except E.CspError as exc:
        raise E.ProfileInvalid(f"{type(exc).__name__}: {exc}") from None
    if claim.issuer_id != issuer.issuer_id or sp.profile.issuing_authority != issuer.authority:
        raise E.IssuerUnauthorized(f"{issuer.issuer_id} cannot issue under {sp.profile.issuing_authority}")
    if claim.profile_hash != sp.profile_hash:
        raise E.ProfileInvalid("claim names a different profile")
    request = IngressRequest(claim_id, domain_id, sp.profile_hash, f"claim:{claim_id}", target_customer)
    registry.requests[claim_id] = request
    return request


def confirm(registry: ClaimRegistry, claim_id: str, ledger: Ledger) -> ValueClaim:
    """Mark a claim REPRESENTED once its ingress is on the ledger."""
    claim = registry.claims[claim_id]
    request = registry.requests.get(claim_id)
    if claim.status is not ClaimStatus.RESERVED or request is None:
        raise E.ClaimNotReserved(f"claim {claim_id} has no pending ingress")
    if ledger.domain_id != request.domain_id or ledger.tx(f"issue:{claim_id}") is None:
        raise E.TxMissing(f"ingress for claim {claim_id} not committed on {request.domain_id}")
    claim = replace(claim, status=ClaimStatus.REPRESENTED)
    registry.claims[claim_id] = claim
    registry.asset_claims[request.asset_id] = claim_id
    return claim


def redeem_asset(acquirer: Acquirer, proof: TransferReceipt | EgressProof, registry: ClaimRegistry,
                 ledgers: Mapping[str, Ledger]) -> SettlementRecord:
    """Open a PENDING settlement for the claim behind a transferred or egressed asset."""
    try:
        if isinstance(proof, TransferReceipt):
            verify_receipt(proof, ledgers[proof.source_domain], ledgers[proof.dest_domain])
            asset_id = f"{proof.session_id}:{ledgers[proof.source_domain].tx(proof.egress_tx_id).payload['asset_id']}"
            reference = proof.session_id
        else:
            ledger = ledgers[proof.domain_id]
            tx = ledger.tx(proof.egress_tx_id)
            if tx is None or tx.kind is not TxKind.EGRESS:
                raise E.TxMissing(f"no egress {proof.egress_tx_id} on {proof.domain_id}")
            asset = ledger.state.assets.get(tx.payload["asset_id"])
            if asset is None or asset.state is not AssetState.EGRESSED:
                raise E.AssetNotLocked("egress proof names an asset that is not egressed")
            asset_id = tx.payload["asset_id"]
            reference = proof.egress_tx_id
    except (E.CspError, KeyError) as exc:
        raise E.ProofInvalid(f"{type(exc).__name__}: {exc}") from None
    claim = registry.claim_for_asset(asset_id)
    if claim is None:
        raise E.ProofInvalid(f"asset {asset_id} traces to no claim")
    if claim.status is ClaimStatus.REDEEMED or any(r.claim_id == claim.claim_id for r in registry.records.values()):
        raise E.AlreadyRedeemed(f"claim {claim.claim_id} already redeemed")
    if claim.status is not ClaimStatus.REPRESENTED:
        raise E.ProofInvalid(f"claim {claim.claim_id} is {claim.status.value}")
    record = SettlementRecord(f"settle:{claim.claim_id}", acquirer.acquirer_id, claim.issuer_id, claim.claim_id,
                              asset_id, reference)
    registry.records[record.record_id] = record
    return record


def settle(issuer: Issuer, acquirer: Acquirer, record_ids: list[str], registry: ClaimRegistry) -> list[SettlementRecord]:
    """Issuer acknowledges PENDING records; their claims become REDEEMED."""
    records = [registry.records[r] for r in record_ids]
    for record in records:
        if record.issuer_id != issuer.issuer_id or record.acquirer_id != acquirer.acquirer_id:
            raise E.IssuerMismatch(f"record {record.record_id} is between {record.issuer_id} and "
                                   f"{record.acquirer_id}")
    out = []
    for record in records:
        if record.status is SettlementStatus.SETTLED:
            out.append(record)
            continue
        record = replace(record, status=SettlementStatus.SETTLED)
        registry.records[record.record_id] = record
        registry.claims[record.claim_id] = replace(registry.claims[record.claim_id], status=ClaimStatus.REDEEMED)
        out.append(record)
    return out
