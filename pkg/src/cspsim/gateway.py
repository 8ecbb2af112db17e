"""Cross-domain transfer gateways.

Two-phase commit with the source gateway as coordinator. Its durable
COMMITTED record is the commit point. The destination never aborts on its
own once it has logged PREPARED; it keeps inquiring (re-sending
PREPARE_ACK) until the source answers with COMMIT or ABORT.

Every decision-log append happens before any message that depends on it is
sent, so a crash between the two loses at most a retransmission. A
``crash_hook`` lets the simulator crash a gateway right after a chosen
append.

Source flow::

    START       -> INIT, send NEGOTIATE
    NEGOTIATE_ACK -> NEGOTIATED, VALIDATED, submit lock (ESCROW_CREATE)
    lock commits  -> LOCKED, send PREPARE
    PREPARE_ACK   -> PREPARED, COMMITTED, send COMMIT
    COMMIT_ACK    -> submit EGRESS
    egress commits -> FINALIZED, send FINALIZE (carries the receipt)

Destination flow::

    NEGOTIATE   -> INIT, NEGOTIATED, send NEGOTIATE_ACK
    PREPARE     -> VALIDATED, PREPARED, send PREPARE_ACK
    COMMIT      -> COMMITTED, submit INGRESS; once committed send COMMIT_ACK
    FINALIZE    -> FINALIZED
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Mapping

from . import errors as E
from .canonical import b64decode_strict, b64encode, canonical_json
from .crypto import KeyPair, verify_signature
from .ledger import Ledger
from .model import (
    HolderKind,
    Jurisdiction,
    KeyRecord,
    KeyStatus,
    SignedAssetProfile,
    expect_keys,
)
from .primitives import PrimitiveTx, TxKind, make_tx
from .profiles import verify_profile


class Phase(str, Enum):
    INIT = "INIT"
    NEGOTIATED = "NEGOTIATED"
    VALIDATED = "VALIDATED"
    LOCKED = "LOCKED"
    PREPARED = "PREPARED"
    COMMITTED = "COMMITTED"
    FINALIZED = "FINALIZED"
    ABORTED = "ABORTED"


_RANK = {p: i for i, p in enumerate(Phase) if p is not Phase.ABORTED}


class Role(str, Enum):
    SOURCE = "SOURCE"
    DEST = "DEST"


MESSAGE_KINDS = (
    "NEGOTIATE", "NEGOTIATE_ACK", "PREPARE", "PREPARE_ACK",
    "COMMIT", "COMMIT_ACK", "FINALIZE", "ABORT",
)


def check_transition(old: Phase | None, new: Phase) -> None:
    """Forward-only moves; ABORTED only from a phase before COMMITTED."""
    if old is None:
        if new is not Phase.INIT:
            raise E.PhaseViolation(f"a log must start with INIT, not {new.value}")
        return
    if old is Phase.ABORTED:
        raise E.PhaseViolation(f"no transition out of ABORTED (to {new.value})")
    if new is Phase.ABORTED:
        if _RANK[old] >= _RANK[Phase.COMMITTED]:
            raise E.PhaseViolation(f"cannot abort after {old.value}")
        return
    if _RANK[new] <= _RANK[old]:
        raise E.PhaseViolation(f"{old.value} -> {new.value} is not forward")


# capabilities, negotiation and validation


@dataclass(frozen=True)
class GatewayCapabilities:
    gateway_node_id: str
    domain_id: str
    supported_protocols: frozenset[tuple[str, int]]
    supported_profile_hashes: frozenset[str]
    jurisdiction: Jurisdiction

    def __post_init__(self) -> None:
        if not self.supported_protocols:
            raise E.FieldInvalid(f"gateway {self.gateway_node_id} supports no protocol")

    def to_json(self) -> dict:
        j = self.jurisdiction
        return {
            "gateway_node_id": self.gateway_node_id,
            "domain_id": self.domain_id,
            "supported_protocols": sorted([name, ver] for name, ver in self.supported_protocols),
            "supported_profile_hashes": sorted(self.supported_profile_hashes),
            "jurisdiction": {
                "code": j.code,
                "permitted_profile_hashes": sorted(j.permitted_profile_hashes),
                "permitted_asset_codes": sorted(j.permitted_asset_codes),
            },
        }

    @classmethod
    def from_json(cls, obj: Any) -> GatewayCapabilities:
        obj = expect_keys(obj, ("gateway_node_id", "domain_id", "supported_protocols",
                                "supported_profile_hashes", "jurisdiction"), "capabilities")
        j = expect_keys(obj["jurisdiction"], ("code", "permitted_profile_hashes", "permitted_asset_codes"),
                        "jurisdiction")
        return cls(
            obj["gateway_node_id"],
            obj["domain_id"],
            frozenset((name, ver) for name, ver in obj["supported_protocols"]),
            frozenset(obj["supported_profile_hashes"]),
            Jurisdiction(j["code"], frozenset(j["permitted_profile_hashes"]), frozenset(j["permitted_asset_codes"])),
        )


def negotiate(local: GatewayCapabilities, remote: GatewayCapabilities) -> tuple[str, int]:
    """Greatest common (protocol name, version) in lexicographic order."""
    common = local.supported_protocols & remote.supported_protocols
    if not common:
        raise E.NoCommonProtocol(f"{local.gateway_node_id} and {remote.gateway_node_id} share no protocol")
    return max(common)


def validate_transfer(sp: SignedAssetProfile, dest: GatewayCapabilities,
                      registry: Mapping[str, KeyRecord] | None = None) -> None:
    """Check (i) the destination supports the asset type, then (ii) its jurisdiction admits it.

    With a ``registry`` the signed profile is verified first; any failure
    there is reported as ProfileInvalid.
    """
    if registry is not None:
        try:
            verify_profile(sp, registry)
        except E.CspError as exc:
            raise E.ProfileInvalid(f"{type(exc).__name__}: {exc}") from None
    if sp.profile_hash not in dest.supported_profile_hashes:
        raise E.ProfileUnsupported(f"{dest.gateway_node_id} does not support {sp.profile_hash[:12]}")
    if not dest.jurisdiction.permits(sp.profile_hash, sp.profile.asset_code):
        raise E.JurisdictionDenied(f"jurisdiction {dest.jurisdiction.code} does not admit {sp.profile.asset_code}")


# decision log


@dataclass(frozen=True)
class LogRecord:
    session_id: str
    seq: int
    role: Role
    phase: Phase
    tick: int
    gateway: str
    key_id: str
    data: Mapping[str, Any] = field(default_factory=dict)
    signature: bytes = b""

    def body(self) -> dict:
        return {
            "session_id": self.session_id,
            "seq": self.seq,
            "role": self.role.value,
            "phase": self.phase.value,
            "tick": self.tick,
            "gateway": self.gateway,
            "key_id": self.key_id,
            "data": dict(self.data),
        }

    def signed_by(self, key: KeyPair) -> LogRecord:
        return replace(self, signature=key.sign(canonical_json(self.body())))

    def verify(self, public_key: bytes) -> bool:
        return verify_signature(public_key, canonical_json(self.body()), self.signature)

    def to_json(self) -> dict:
        out = self.body()
        out["signature"] = b64encode(self.signature)
        return out

    @classmethod
    def from_json(cls, obj: Any) -> LogRecord:
        obj = expect_keys(obj, ("session_id", "seq", "role", "phase", "tick", "gateway", "key_id", "data",
                                "signature"), "log record")
        try:
            return cls(obj["session_id"], obj["seq"], Role(obj["role"]), Phase(obj["phase"]), obj["tick"],
                       obj["gateway"], obj["key_id"], obj["data"], b64decode_strict(obj["signature"]))
        except (ValueError, TypeError) as exc:
            raise E.LogCorrupt(str(exc)) from None


class DecisionLog:
    """Append-only, signed phase records of one session at one gateway."""

    def __init__(self, records: list[LogRecord] | None = None):
        self.records: list[LogRecord] = []
        for record in records or []:
            self._check(record)
            self.records.append(record)

    def _check(self, record: LogRecord) -> None:
        if record.seq != len(self.records):
            raise E.LogCorrupt(f"record seq {record.seq} != {len(self.records)}")
        if self.records and (record.session_id != self.records[0].session_id
                             or record.role is not self.records[0].role):
            raise E.LogCorrupt("record belongs to another session or role")
        try:
            check_transition(self.last_phase, record.phase)
        except E.PhaseViolation as exc:
            raise E.LogCorrupt(str(exc)) from None

    def append(self, record: LogRecord) -> None:
        check_transition(self.last_phase, record.phase)
        if record.seq != len(self.records):
            raise E.LogCorrupt(f"record seq {record.seq} != {len(self.records)}")
        self.records.append(record)

    @property
    def last_phase(self) -> Phase | None:
        return self.records[-1].phase if self.records else None

    def has(self, phase: Phase) -> bool:
        return any(r.phase is phase for r in self.records)

    def find(self, phase: Phase) -> LogRecord | None:
        for r in self.records:
            if r.phase is phase:
                return r
        return None

    def __len__(self) -> int:
        return len(self.records)

    def to_lines(self) -> list[dict]:
        return [r.to_json() for r in self.records]


# receipts


@dataclass(frozen=True)
class TransferReceipt:
    session_id: str
    source_domain: str
    egress_tx_id: str
    dest_domain: str
    ingress_tx_id: str
    source_key_id: str
    dest_key_id: str
    source_sig: bytes = b""
    dest_sig: bytes = b""

    def body(self) -> dict:
        return {
            "session_id": self.session_id,
            "source_domain": self.source_domain,
            "egress_tx_id": self.egress_tx_id,
            "dest_domain": self.dest_domain,
            "ingress_tx_id": self.ingress_tx_id,
            "source_key_id": self.source_key_id,
            "dest_key_id": self.dest_key_id,
        }

    def signing_bytes(self) -> bytes:
        return canonical_json({"type": "RECEIPT", **self.body()})

    def to_json(self) -> dict:
        out = self.body()
        out["source_sig"] = b64encode(self.source_sig)
        out["dest_sig"] = b64encode(self.dest_sig)
        return out

    @classmethod
    def from_json(cls, obj: Any) -> TransferReceipt:
        obj = expect_keys(obj, ("session_id", "source_domain", "egress_tx_id", "dest_domain", "ingress_tx_id",
                                "source_key_id", "dest_key_id", "source_sig", "dest_sig"), "receipt")
        try:
            return cls(obj["session_id"], obj["source_domain"], obj["egress_tx_id"], obj["dest_domain"],
                       obj["ingress_tx_id"], obj["source_key_id"], obj["dest_key_id"],
                       b64decode_strict(obj["source_sig"]), b64decode_strict(obj["dest_sig"]))
        except ValueError as exc:
            raise E.FieldInvalid(str(exc)) from None


def _csp_key(ledger: Ledger, key_id: str) -> KeyRecord:
    record = ledger.state.keys.get(key_id)
    if record is None or record.holder_kind is not HolderKind.CSP:
        raise E.SignatureInvalid(f"{key_id} is not a CSP key of {ledger.domain_id}")
    return record


def verify_receipt(r: TransferReceipt, source_ledger: Ledger, dest_ledger: Ledger) -> None:
    """Return None if ``r`` is backed by both ledgers; raise otherwise."""
    egress = source_ledger.tx(r.egress_tx_id)
    ingress = dest_ledger.tx(r.ingress_tx_id)
    if egress is None or egress.kind is not TxKind.EGRESS or source_ledger.domain_id != r.source_domain:
        raise E.TxMissing(f"egress {r.egress_tx_id} not on {r.source_domain}")
    if ingress is None or ingress.kind is not TxKind.INGRESS or dest_ledger.domain_id != r.dest_domain:
        raise E.TxMissing(f"ingress {r.ingress_tx_id} not on {r.dest_domain}")
    if egress.payload["session_id"] != r.session_id or ingress.payload["session_id"] != r.session_id:
        raise E.SessionMismatch(f"receipt session {r.session_id} does not match the ledger txs")
    src_key = _csp_key(source_ledger, r.source_key_id)
    dst_key = _csp_key(dest_ledger, r.dest_key_id)
    message = r.signing_bytes()
    if not verify_signature(src_key.public_key, message, r.source_sig):
        raise E.SignatureInvalid("source gateway signature does not verify")
    if not verify_signature(dst_key.public_key, message, r.dest_sig):
        raise E.SignatureInvalid("destination gateway signature does not verify")


# sessions


@dataclass(frozen=True)
class GatewayConfig:
    lock_ttl: int = 100
    msg_timeout: int = 10
    commit_window: int = 80
    block_interval: int = 5

    def __post_init__(self) -> None:
        if self.lock_ttl < 4 * self.msg_timeout:
            raise E.FieldInvalid("lock_ttl must be at least 4x msg_timeout")
        if not 0 < self.commit_window < self.lock_ttl:
            raise E.FieldInvalid("commit_window must be positive and below lock_ttl")

    @property
    def lock_blocks(self) -> int:
        """Lock lifetime in blocks (ledger logical time units)."""
        return -(-self.lock_ttl // self.block_interval)


@dataclass(frozen=True)
class SessionParams:
    session_id: str
    originator_key_id: str
    beneficiary_key_id: str
    asset_id: str
    signed_profile: SignedAssetProfile
    source_domain: str
    dest_domain: str
    source_gateway: str
    dest_gateway: str
    lock_tx: PrimitiveTx | None = None

    @property
    def profile_hash(self) -> str:
        return self.signed_profile.profile_hash

    @property
    def dest_asset_id(self) -> str:
        return f"{self.session_id}:{self.asset_id}"

    @property
    def lock_tx_id(self) -> str:
        return f"{self.session_id}:lock"

    @property
    def egress_tx_id(self) -> str:
        return f"{self.session_id}:egress"

    @property
    def ingress_tx_id(self) -> str:
        return f"{self.session_id}:ingress"

    @property
    def revert_tx_id(self) -> str:
        return f"{self.session_id}:revert"

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "originator_key_id": self.originator_key_id,
            "beneficiary_key_id": self.beneficiary_key_id,
            "asset_id": self.asset_id,
            "signed_profile": self.signed_profile.to_json(),
            "source_domain": self.source_domain,
            "dest_domain": self.dest_domain,
            "source_gateway": self.source_gateway,
            "dest_gateway": self.dest_gateway,
            "lock_tx": None if self.lock_tx is None else self.lock_tx.to_json(),
        }

    @classmethod
    def from_json(cls, obj: Any) -> SessionParams:
        obj = expect_keys(obj, ("session_id", "originator_key_id", "beneficiary_key_id", "asset_id",
                                "signed_profile", "source_domain", "dest_domain", "source_gateway",
                                "dest_gateway", "lock_tx"), "session params")
        lock = obj["lock_tx"]
        return cls(obj["session_id"], obj["originator_key_id"], obj["beneficiary_key_id"], obj["asset_id"],
                   SignedAssetProfile.from_json(obj["signed_profile"]), obj["source_domain"], obj["dest_domain"],
                   obj["source_gateway"], obj["dest_gateway"], None if lock is None else PrimitiveTx.from_json(lock))


@dataclass
class TransferSession:
    """Volatile view of one session; rebuilt from the decision log on recovery."""

    params: SessionParams
    role: Role
    log: DecisionLog
    phase: Phase = Phase.INIT
    negotiated: tuple[str, int] | None = None
    deadline: int = 0
    next_retry: int = 0
    dest_sig: bytes | None = None
    receipt: TransferReceipt | None = None
    abort_reason: str = ""

    @property
    def session_id(self) -> str:
        return self.params.session_id

    @property
    def peer(self) -> str:
        return self.params.dest_gateway if self.role is Role.SOURCE else self.params.source_gateway


class CrashNow(Exception):
    """Raised by a crash hook to stop a gateway right after a log append."""


@dataclass
class GatewayContext:
    node_id: str
    domain_id: str
    key: KeyPair
    caps: GatewayCapabilities
    ledger: Ledger
    directory: Mapping[str, tuple[str, bytes]]
    config: GatewayConfig = GatewayConfig()
    crash_hook: Callable[[LogRecord], None] | None = None


@dataclass
class GatewayOutput:
    messages: list[tuple[str, dict]] = field(default_factory=list)
    commands: list[PrimitiveTx] = field(default_factory=list)


def _append(ctx: GatewayContext, s: TransferSession, phase: Phase, now: int, **data: Any) -> LogRecord:
    record = LogRecord(s.session_id, len(s.log), s.role, phase, now, ctx.node_id, ctx.key.key_id, data)
    record = record.signed_by(ctx.key)
    s.log.append(record)
    s.phase = phase
    s.next_retry = now
    if ctx.crash_hook is not None:
        ctx.crash_hook(record)
    return record


def _send(ctx: GatewayContext, s: TransferSession, out: GatewayOutput, kind: str, **body: Any) -> None:
    msg = {"type": kind, "session_id": s.session_id, "phase": s.phase.value, "sender": ctx.node_id,
           "body": body}
    msg["sig"] = b64encode(ctx.key.sign(canonical_json(msg)))
    out.messages.append((s.peer, msg))


def check_message(msg: Mapping[str, Any], directory: Mapping[str, tuple[str, bytes]]) -> None:
    """Verify a gateway message's sender signature."""
    sender = msg.get("sender")
    entry = directory.get(sender)
    if entry is None:
        raise E.SignatureInvalid(f"unknown gateway {sender}")
    body = {k: v for k, v in msg.items() if k != "sig"}
    try:
        sig = b64decode_strict(msg["sig"])
    except (KeyError, ValueError):
        raise E.SignatureInvalid("message signature missing or malformed") from None
    if not verify_signature(entry[1], canonical_json(body), sig):
        raise E.SignatureInvalid(f"message from {sender} does not verify")


def _abort(ctx: GatewayContext, s: TransferSession, now: int, out: GatewayOutput, reason: str) -> None:
    s.abort_reason = reason
    _append(ctx, s, Phase.ABORTED, now, reason=reason)
    _send(ctx, s, out, "ABORT", reason=reason)
    s.next_retry = now + ctx.config.msg_timeout


def _receipt(ctx: GatewayContext, s: TransferSession) -> TransferReceipt:
    p = s.params
    src_key = ctx.key.key_id if s.role is Role.SOURCE else ctx.directory[p.source_gateway][0]
    dst_key = ctx.key.key_id if s.role is Role.DEST else ctx.directory[p.dest_gateway][0]
    return TransferReceipt(p.session_id, p.source_domain, p.egress_tx_id, p.dest_domain, p.ingress_tx_id,
                           src_key, dst_key)


def start_session(ctx: GatewayContext, params: SessionParams, now: int,
                  log: DecisionLog | None = None) -> tuple[TransferSession, GatewayOutput]:
    """Open a session at the source gateway and send NEGOTIATE.

    Pass the host's durable ``log`` so records survive a crash mid-call.
    """
    if params.source_gateway != ctx.node_id or params.lock_tx is None:
        raise E.FieldInvalid("source sessions need this gateway as source and a lock tx")
    s = TransferSession(params, Role.SOURCE, log if log is not None else DecisionLog(),
                        deadline=now + ctx.config.commit_window)
    out = GatewayOutput()
    _append(ctx, s, Phase.INIT, now, params=params.to_json(), deadline=s.deadline)
    _send(ctx, s, out, "NEGOTIATE", caps=ctx.caps.to_json(), params=params.to_json())
    s.next_retry = now + ctx.config.msg_timeout
    return s, out


def accept_session(ctx: GatewayContext, msg: Mapping[str, Any], now: int,
                   log: DecisionLog | None = None) -> tuple[TransferSession, GatewayOutput]:
    """Open a destination session from a NEGOTIATE message."""
    params = SessionParams.from_json(msg["body"]["params"])
    params = replace(params, lock_tx=None)
    if params.dest_gateway != ctx.node_id or params.session_id != msg["session_id"]:
        raise E.SessionUnknown(f"NEGOTIATE for {params.session_id} not addressed to {ctx.node_id}")
    if msg.get("sender") != params.source_gateway:
        raise E.SignatureInvalid(f"{msg.get('sender')} is not the source gateway of {params.session_id}")
    s = TransferSession(params, Role.DEST, log if log is not None else DecisionLog(),
                        deadline=now + ctx.config.commit_window)
    out = GatewayOutput()
    _append(ctx, s, Phase.INIT, now, params=params.to_json(), deadline=s.deadline)
    try:
        remote = GatewayCapabilities.from_json(msg["body"]["caps"])
        s.negotiated = negotiate(ctx.caps, remote)
    except E.CspError as exc:
        _abort(ctx, s, now, out, type(exc).__name__)
        return s, out
    _append(ctx, s, Phase.NEGOTIATED, now, protocol=list(s.negotiated))
    _send(ctx, s, out, "NEGOTIATE_ACK", caps=ctx.caps.to_json(), protocol=list(s.negotiated))
    return s, out


def session_step(ctx: GatewayContext, s: TransferSession, event: Mapping[str, Any], now: int) -> GatewayOutput:
    """Advance one session by a peer message or a ``{"type": "TICK"}`` event.

    Raises PhaseViolation when a message is illegal in the current phase;
    the caller treats that as a dropped message.
    """
    out = GatewayOutput()
    kind = event["type"]
    if kind == "TICK":
        _tick(ctx, s, now, out)
        return out
    if event.get("session_id") != s.session_id:
        raise E.SessionUnknown(f"message for {event.get('session_id')} delivered to {s.session_id}")
    if event.get("sender") != s.peer:
        raise E.SignatureInvalid(f"{event.get('sender')} is not the peer of {s.session_id}")
    handler = _SOURCE if s.role is Role.SOURCE else _DEST
    fn = handler.get(kind)
    if fn is None:
        raise E.PhaseViolation(f"{s.role.value} gateway does not accept {kind}")
    fn(ctx, s, event, now, out)
    return out


# source side


def _src_negotiate_ack(ctx, s, msg, now, out):
    if s.phase is not Phase.INIT:
        if s.phase is Phase.ABORTED:
            _send(ctx, s, out, "ABORT", reason=s.abort_reason)
        return
    try:
        remote = GatewayCapabilities.from_json(msg["body"]["caps"])
        s.negotiated = negotiate(ctx.caps, remote)
        if list(s.negotiated) != list(msg["body"]["protocol"]):
            raise E.NoCommonProtocol("peer picked a different protocol")
    except E.CspError as exc:
        _abort(ctx, s, now, out, type(exc).__name__)
        return
    _append(ctx, s, Phase.NEGOTIATED, now, protocol=list(s.negotiated))
    try:
        validate_transfer(s.params.signed_profile, remote, ctx.ledger.state.authorities)
    except E.CspError as exc:
        _abort(ctx, s, now, out, type(exc).__name__)
        return
    _append(ctx, s, Phase.VALIDATED, now)
    out.commands.append(s.params.lock_tx)
    s.next_retry = now + ctx.config.msg_timeout


def _src_prepare_ack(ctx, s, msg, now, out):
    if s.phase is Phase.LOCKED:
        state = ctx.ledger.state
        expiry = s.params.lock_tx.payload["expiry_at"]
        guard = -(-(ctx.config.lock_ttl - ctx.config.commit_window) // ctx.config.block_interval)
        if now > s.deadline or state.next_logical_time + guard >= expiry:
            _abort(ctx, s, now, out, "CommitDeadline")
            return
        _append(ctx, s, Phase.PREPARED, now)
        _append(ctx, s, Phase.COMMITTED, now)
        _send(ctx, s, out, "COMMIT")
        s.next_retry = now + ctx.config.msg_timeout
    elif s.phase in (Phase.COMMITTED, Phase.FINALIZED):
        _send(ctx, s, out, "COMMIT")
    elif s.phase is Phase.ABORTED:
        _send(ctx, s, out, "ABORT", reason=s.abort_reason)
    else:
        raise E.PhaseViolation(f"PREPARE_ACK in {s.phase.value}")


def _src_commit_ack(ctx, s, msg, now, out):
    if s.phase is Phase.COMMITTED:
        if s.dest_sig is None:
            try:
                sig = b64decode_strict(msg["body"]["dest_sig"])
            except (KeyError, ValueError):
                raise E.SignatureInvalid("COMMIT_ACK without a receipt signature") from None
            receipt = _receipt(ctx, s)
            peer_key = ctx.directory[s.peer][1]
            if not verify_signature(peer_key, receipt.signing_bytes(), sig):
                raise E.SignatureInvalid("destination receipt signature does not verify")
            s.dest_sig = sig
            s.next_retry = now
            _src_drive(ctx, s, now, out)
    elif s.phase is Phase.FINALIZED:
        _send(ctx, s, out, "FINALIZE", receipt=s.receipt.to_json())
    else:
        raise E.PhaseViolation(f"COMMIT_ACK in {s.phase.value}")


def _src_abort(ctx, s, msg, now, out):
    if s.phase is Phase.ABORTED:
        return
    if _RANK[s.phase] >= _RANK[Phase.COMMITTED]:
        raise E.PhaseViolation(f"ABORT after {s.phase.value}")
    s.abort_reason = str(msg["body"].get("reason", "peer"))
    _append(ctx, s, Phase.ABORTED, now, reason="peer:" + s.abort_reason)
    s.next_retry = now + ctx.config.msg_timeout


def _egress_tx(ctx: GatewayContext, s: TransferSession) -> PrimitiveTx:
    p = s.params
    payload = {"asset_id": p.asset_id, "dest_domain_id": p.dest_domain, "session_id": p.session_id}
    return make_tx(ctx.domain_id, TxKind.EGRESS, payload, ctx.key, p.egress_tx_id)


def _revert_tx(ctx: GatewayContext, s: TransferSession) -> PrimitiveTx:
    return make_tx(ctx.domain_id, TxKind.ESCROW_REVERT, {"escrow_id": s.params.lock_tx_id}, ctx.key,
                   s.params.revert_tx_id)


def lock_outstanding(ledger: Ledger, params: SessionParams) -> bool:
    asset = ledger.state.assets.get(params.asset_id)
    return asset is not None and asset.escrow is not None and asset.escrow.escrow_id == params.lock_tx_id


def _src_drive(ctx: GatewayContext, s: TransferSession, now: int, out: GatewayOutput) -> None:
    """Observe the ledger and perform the phase's pending action."""
    cfg = ctx.config
    ledger = ctx.ledger
    p = s.params
    due = now >= s.next_retry
    if s.phase is Phase.ABORTED:
        if lock_outstanding(ledger, p) and ledger.state.next_logical_time >= p.lock_tx.payload["expiry_at"]:
            if due and p.revert_tx_id not in ledger.tx_index:
                out.commands.append(_revert_tx(ctx, s))
                s.next_retry = now + cfg.msg_timeout
        return
    if s.phase is Phase.FINALIZED:
        return
    if _RANK[s.phase] < _RANK[Phase.COMMITTED] and now > s.deadline:
        _abort(ctx, s, now, out, "CommitDeadline")
        return
    if s.phase is Phase.INIT:
        if due:
            _send(ctx, s, out, "NEGOTIATE", caps=ctx.caps.to_json(), params=p.to_json())
            s.next_retry = now + cfg.msg_timeout
    elif s.phase is Phase.VALIDATED:
        if p.lock_tx_id in ledger.tx_index and lock_outstanding(ledger, p):
            asset = ledger.state.assets[p.asset_id]
            if asset.escrow.beneficiary_key_id != ctx.key.key_id or asset.escrow.condition_tag != p.session_id:
                _abort(ctx, s, now, out, "LockMismatch")
                return
            _append(ctx, s, Phase.LOCKED, now, escrow_id=p.lock_tx_id)
            _send(ctx, s, out, "PREPARE", protocol=list(s.negotiated))
            s.next_retry = now + cfg.msg_timeout
        elif due and p.lock_tx_id not in ledger.tx_index:
            out.commands.append(p.lock_tx)
            s.next_retry = now + cfg.msg_timeout
    elif s.phase is Phase.LOCKED:
        if due:
            _send(ctx, s, out, "PREPARE", protocol=list(s.negotiated))
            s.next_retry = now + cfg.msg_timeout
    elif s.phase is Phase.COMMITTED:
        if s.dest_sig is None:
            # the receipt signature is volatile; after a restart ask again
            if due:
                _send(ctx, s, out, "COMMIT")
                s.next_retry = now + cfg.msg_timeout
        elif p.egress_tx_id in ledger.tx_index:
            receipt = _receipt(ctx, s)
            receipt = replace(receipt, source_sig=ctx.key.sign(receipt.signing_bytes()), dest_sig=s.dest_sig)
            s.receipt = receipt
            _append(ctx, s, Phase.FINALIZED, now, receipt=receipt.to_json())
            _send(ctx, s, out, "FINALIZE", receipt=receipt.to_json())
        elif due:
            out.commands.append(_egress_tx(ctx, s))
            s.next_retry = now + cfg.msg_timeout


# destination side


def _dst_negotiate(ctx, s, msg, now, out):
    if s.phase is Phase.NEGOTIATED:
        _send(ctx, s, out, "NEGOTIATE_ACK", caps=ctx.caps.to_json(), protocol=list(s.negotiated))
    elif s.phase is Phase.ABORTED:
        _send(ctx, s, out, "ABORT", reason=s.abort_reason)


def _dest_checks(ctx: GatewayContext, s: TransferSession) -> None:
    p = s.params
    validate_transfer(p.signed_profile, ctx.caps, ctx.ledger.state.authorities)
    state = ctx.ledger.state
    if p.profile_hash not in state.asset_types:
        raise E.ProfileUnsupported(f"profile {p.profile_hash[:12]} not admitted on {ctx.domain_id}")
    record = state.keys.get(p.beneficiary_key_id)
    if record is None or record.holder_kind is not HolderKind.CUSTOMER or record.status is not KeyStatus.ACTIVE:
        raise E.CustomerUnknown(f"beneficiary {p.beneficiary_key_id} not an active customer of {ctx.domain_id}")
    if p.dest_asset_id in state.assets and p.ingress_tx_id not in ctx.ledger.tx_index:
        raise E.DuplicateAssetId(f"asset id {p.dest_asset_id} already used")


def _dst_prepare(ctx, s, msg, now, out):
    if s.phase is Phase.NEGOTIATED:
        try:
            _dest_checks(ctx, s)
        except E.CspError as exc:
            _abort(ctx, s, now, out, type(exc).__name__)
            return
        _append(ctx, s, Phase.VALIDATED, now)
        _append(ctx, s, Phase.PREPARED, now)
        _send(ctx, s, out, "PREPARE_ACK")
        s.next_retry = now + ctx.config.msg_timeout
    elif s.phase is Phase.PREPARED:
        _send(ctx, s, out, "PREPARE_ACK")
    elif s.phase is Phase.ABORTED:
        _send(ctx, s, out, "ABORT", reason=s.abort_reason)
    elif s.phase is Phase.INIT:
        raise E.PhaseViolation("PREPARE before negotiation")


def _ingress_tx(ctx: GatewayContext, s: TransferSession) -> PrimitiveTx:
    p = s.params
    payload = {"profile_hash": p.profile_hash, "asset_id": p.dest_asset_id, "owner_key_id": p.beneficiary_key_id,
               "session_id": p.session_id}
    return make_tx(ctx.domain_id, TxKind.INGRESS, payload, ctx.key, p.ingress_tx_id)


def _dst_commit(ctx, s, msg, now, out):
    if s.phase is Phase.PREPARED:
        _append(ctx, s, Phase.COMMITTED, now)
        out.commands.append(_ingress_tx(ctx, s))
        s.next_retry = now + ctx.config.msg_timeout
    elif s.phase in (Phase.COMMITTED, Phase.FINALIZED):
        if s.params.ingress_tx_id in ctx.ledger.tx_index:
            _send_commit_ack(ctx, s, out)
    else:
        raise E.PhaseViolation(f"COMMIT in {s.phase.value}")


def _send_commit_ack(ctx: GatewayContext, s: TransferSession, out: GatewayOutput) -> None:
    receipt = _receipt(ctx, s)
    _send(ctx, s, out, "COMMIT_ACK", dest_sig=b64encode(ctx.key.sign(receipt.signing_bytes())))


def _dst_finalize(ctx, s, msg, now, out):
    if s.phase is Phase.FINALIZED:
        return
    if s.phase is not Phase.COMMITTED:
        raise E.PhaseViolation(f"FINALIZE in {s.phase.value}")
    receipt = TransferReceipt.from_json(msg["body"]["receipt"])
    expected = _receipt(ctx, s)
    if receipt.body() != expected.body():
        raise E.SessionMismatch("receipt does not describe this session")
    if not verify_signature(ctx.directory[s.peer][1], receipt.signing_bytes(), receipt.source_sig):
        raise E.SignatureInvalid("source receipt signature does not verify")
    s.receipt = receipt
    _append(ctx, s, Phase.FINALIZED, now, receipt=receipt.to_json())


def _dst_abort(ctx, s, msg, now, out):
    if s.phase is Phase.ABORTED:
        return
    if _RANK[s.phase] >= _RANK[Phase.COMMITTED]:
        raise E.PhaseViolation(f"ABORT after {s.phase.value}")
    s.abort_reason = str(msg["body"].get("reason", "peer"))
    _append(ctx, s, Phase.ABORTED, now, reason="peer:" + s.abort_reason)


def _dst_drive(ctx: GatewayContext, s: TransferSession, now: int, out: GatewayOutput) -> None:
    cfg = ctx.config
    due = now >= s.next_retry
    if s.phase in (Phase.INIT, Phase.NEGOTIATED, Phase.VALIDATED):
        if now > s.deadline:
            _abort(ctx, s, now, out, "PrepareDeadline")
    elif s.phase is Phase.PREPARED:
        # cooperative termination: ask the coordinator, never abort alone
        if due:
            _send(ctx, s, out, "PREPARE_ACK")
            s.next_retry = now + cfg.msg_timeout
    elif s.phase is Phase.COMMITTED:
        if not due:
            return
        if s.params.ingress_tx_id in ctx.ledger.tx_index:
            _send_commit_ack(ctx, s, out)
        else:
            out.commands.append(_ingress_tx(ctx, s))
        s.next_retry = now + cfg.msg_timeout


def _tick(ctx: GatewayContext, s: TransferSession, now: int, out: GatewayOutput) -> None:
    if s.role is Role.SOURCE:
        _src_drive(ctx, s, now, out)
    else:
        _dst_drive(ctx, s, now, out)


_SOURCE = {
    "NEGOTIATE_ACK": _src_negotiate_ack,
    "PREPARE_ACK": _src_prepare_ack,
    "COMMIT_ACK": _src_commit_ack,
    "ABORT": _src_abort,
}
_DEST = {
    "NEGOTIATE": _dst_negotiate,
    "PREPARE": _dst_prepare,
    "COMMIT": _dst_commit,
    "FINALIZE": _dst_finalize,
    "ABORT": _dst_abort,
}


# recovery


def recover_session(ctx: GatewayContext, log: DecisionLog, now: int) -> tuple[TransferSession, GatewayOutput]:
    """Rebuild a session from its durable log after a crash.

    Source below COMMITTED and destination below PREPARED abort. A
    destination at PREPARED resumes inquiring. COMMITTED or later rolls
    forward.
    """
    if not log.records or log.records[0].phase is not Phase.INIT:
        raise E.LogCorrupt("decision log is empty or does not start with INIT")
    first = log.records[0]
    for record in log.records:
        if not record.verify(ctx.key.public_key):
            raise E.LogCorrupt(f"record {record.seq} signature does not verify")
    try:
        params = SessionParams.from_json(first.data["params"])
        deadline = first.data["deadline"]
    except (KeyError, E.CspError) as exc:
        raise E.LogCorrupt(f"INIT record unreadable: {exc}") from None
    s = TransferSession(params, first.role, log, phase=log.last_phase, deadline=deadline, next_retry=now)
    neg = log.find(Phase.NEGOTIATED)
    if neg is not None:
        s.negotiated = tuple(neg.data["protocol"])
    fin = log.find(Phase.FINALIZED)
    if fin is not None:
        s.receipt = TransferReceipt.from_json(fin.data["receipt"])
    aborted = log.find(Phase.ABORTED)
    if aborted is not None:
        s.abort_reason = aborted.data.get("reason", "")
    out = GatewayOutput()
    if s.phase is Phase.ABORTED:
        return s, out
    if s.role is Role.SOURCE and _RANK[s.phase] < _RANK[Phase.COMMITTED]:
        _abort(ctx, s, now, out, "Recovered")
    elif s.role is Role.DEST and _RANK[s.phase] < _RANK[Phase.PREPARED]:
        _abort(ctx, s, now, out, "Recovered")
    else:
        _tick(ctx, s, now, out)
    return s, out


def session_settled(ctx: GatewayContext, s: TransferSession) -> bool:
    """True when the session needs no further action from this gateway."""
    if s.phase is Phase.FINALIZED:
        return True
    if s.phase is Phase.ABORTED:
        return s.role is Role.DEST or not lock_outstanding(ctx.ledger, s.params)
    return False


class Gateway:
    """A gateway host: durable decision logs plus volatile sessions."""

    def __init__(self, ctx: GatewayContext):
        self.ctx = ctx
        self.logs: dict[str, DecisionLog] = {}
        self.sessions: dict[str, TransferSession] | None = {}
        self.rejected = 0

    @property
    def node_id(self) -> str:
        return self.ctx.node_id

    @property
    def alive(self) -> bool:
        return self.sessions is not None

    def crash(self) -> None:
        self.sessions = None

    def recover(self, now: int) -> GatewayOutput:
        self.sessions = {}
        out = GatewayOutput()
        for sid in sorted(self.logs):
            s, o = recover_session(self.ctx, self.logs[sid], now)
            self.sessions[sid] = s
            out.messages += o.messages
            out.commands += o.commands
        return out

    def start(self, params: SessionParams, now: int) -> GatewayOutput:
        if params.session_id in self.logs:
            raise E.FieldInvalid(f"session {params.session_id} already exists")
        log = self.logs[params.session_id] = DecisionLog()
        s, out = start_session(self.ctx, params, now, log)
        self.sessions[params.session_id] = s
        return out

    def handle(self, msg: Mapping[str, Any], now: int) -> GatewayOutput:
        """Process one peer message; malformed or out-of-phase messages are dropped.

        :class:`CrashNow` from the crash hook propagates to the caller.
        """
        try:
            check_message(msg, self.ctx.directory)
            sid = msg["session_id"]
            s = self.sessions.get(sid)
            if s is None:
                if msg["type"] != "NEGOTIATE" or sid in self.logs:
                    raise E.SessionUnknown(f"no session {sid} at {self.node_id}")
                log = self.logs[sid] = DecisionLog()
                try:
                    s, out = accept_session(self.ctx, msg, now, log)
                except E.CspError:
                    if not log.records:
                        del self.logs[sid]
                    raise
                self.sessions[sid] = s
                return out
            return session_step(self.ctx, s, msg, now)
        except (E.PhaseViolation, E.SessionUnknown, E.SignatureInvalid, E.SessionMismatch, E.FieldInvalid,
                E.KeyInvalid):
            self.rejected += 1
            return GatewayOutput()

    def tick(self, now: int) -> GatewayOutput:
        out = GatewayOutput()
        for sid in sorted(self.sessions):
            o = session_step(self.ctx, self.sessions[sid], {"type": "TICK"}, now)
            out.messages += o.messages
            out.commands += o.commands
        return out

    def settled(self) -> bool:
        return all(session_settled(self.ctx, s) for s in (self.sessions or {}).values())
