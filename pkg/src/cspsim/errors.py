"""Exception hierarchy.

Every failure is a subclass of :class:`CspError` named after the condition
it signals, so callers and tests can match on the exact cause.
"""

from __future__ import annotations


class CspError(Exception):
    """Base class for all library errors."""


class PrimitiveError(CspError):
    """A primitive transaction failed validation against a state table."""


class TxInvalid(CspError):
    """A transaction inside a block failed primitive validation."""

    def __init__(self, tx_id: str, cause: Exception):
        super().__init__(f"tx {tx_id}: {type(cause).__name__}: {cause}")
        self.tx_id = tx_id
        self.cause = cause


class ChainInvalid(CspError):
    """Raised by ``verify_chain`` carrying the first failing height and cause."""

    def __init__(self, height: int, cause: str, detail: str = ""):
        super().__init__(f"height {height}: {cause}" + (f" ({detail})" if detail else ""))
        self.height = height
        self.cause = cause


class ScenarioInvalid(CspError):
    """Scenario failed to parse or validate; ``path`` locates the field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# core model


class FieldInvalid(CspError):
    pass


class KeyInvalid(CspError):
    pass


class SignatureInvalid(CspError):
    pass


class HashMismatch(CspError):
    pass


class KeyUnknown(CspError):
    pass


class KeyRevoked(CspError):
    pass


# ledger


class HeightGap(CspError):
    pass


class PrevHashMismatch(CspError):
    pass


class QuorumInsufficient(CspError):
    pass


class CustomerUnknown(CspError):
    pass


class DomainMismatch(CspError):
    pass


# primitives


class AssetUnknown(PrimitiveError):
    pass


class NotOwner(PrimitiveError):
    pass


class AssetNotLive(PrimitiveError):
    pass


class RecipientUnknown(PrimitiveError):
    pass


class RecipientNotCustomer(PrimitiveError):
    pass


class ExpiryInPast(PrimitiveError):
    pass


class BeneficiaryUnknown(PrimitiveError):
    pass


class EscrowUnknown(PrimitiveError):
    pass


class EscrowExpired(PrimitiveError):
    pass


class ConditionMismatch(PrimitiveError):
    pass


class NotBeneficiary(PrimitiveError):
    pass


class EscrowNotExpired(PrimitiveError):
    pass


class NotCSP(PrimitiveError):
    pass


class AssetTypeNotAdmitted(PrimitiveError):
    pass


class DuplicateAssetId(PrimitiveError):
    pass


class OwnerUnknown(PrimitiveError):
    pass


class AssetNotLocked(PrimitiveError):
    pass


class SessionMismatch(PrimitiveError):
    pass


class Unauthorized(PrimitiveError):
    pass


class BadTransition(PrimitiveError):
    pass


class ProfileInvalid(PrimitiveError):
    pass


class TypeInUse(PrimitiveError):
    pass


class TypeUnknown(PrimitiveError):
    pass


class DuplicateTx(PrimitiveError):
    pass


class PayloadInvalid(PrimitiveError):
    pass


# fees, consensus, community


class CustomerUnassigned(CspError):
    pass


class EmptyRoster(CspError):
    pass


class AllZeroMetrics(CspError):
    pass


# gateway


class NoCommonProtocol(CspError):
    pass


class ProfileUnsupported(CspError):
    pass


class JurisdictionDenied(CspError):
    pass


class PhaseViolation(CspError):
    pass


class SessionUnknown(CspError):
    pass


class LogCorrupt(CspError):
    pass


class TxMissing(CspError):
    pass


# issuer / acquirer


class ClaimNotReserved(CspError):
    pass


class IssuerUnauthorized(CspError):
    pass


class ProofInvalid(CspError):
    pass


class AlreadyRedeemed(CspError):
    pass


class IssuerMismatch(CspError):
    pass


# simnet, reports


class SrcCrashed(CspError):
    pass


class PlanInvalid(CspError):
    pass


class ReportCorrupt(CspError):
    pass
