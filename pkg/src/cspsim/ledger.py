"""Per-domain append-only, hash-chained, quorum-certified ledger."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Iterable, Mapping

from . import errors as E
from .canonical import (
    ZERO_HASH,
    b64decode_strict,
    b64encode,
    canonical_json,
    check_hex_digest,
    digest_of,
    parse_canonical,
)
from .crypto import verify_signature
from .model import AssetInstance, HolderKind, KeyRecord, expect_keys
from .primitives import PrimitiveTx, StateTable, apply_tx
from .roster import NodeRoster, quorum_size


def vote_message(domain_id: str, block_hash: str) -> bytes:
    """Bytes a node signs to vote for (and certify) a block."""
    return canonical_json({"domain_id": domain_id, "block_hash": block_hash, "type": "VOTE"})


@dataclass(frozen=True)
class LedgerBlock:
    height: int
    prev_hash: str
    txs: tuple[PrimitiveTx, ...]
    proposer: str
    quorum_cert: tuple[tuple[str, bytes], ...] = ()
    block_hash: str = ""

    def header(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "proposer": self.proposer,
            "txs": [tx.to_json() for tx in self.txs],
        }

    @cached_property
    def computed_hash(self) -> str:
        return digest_of(self.header())

    def to_json(self) -> dict:
        out = self.header()
        out["quorum_cert"] = [[node, b64encode(sig)] for node, sig in self.quorum_cert]
        out["block_hash"] = self.block_hash
        return out

    @classmethod
    def from_json(cls, obj: Any) -> LedgerBlock:
        obj = expect_keys(obj, ("height", "prev_hash", "proposer", "txs", "quorum_cert", "block_hash"), "block")
        try:
            height = obj["height"]
            if not isinstance(height, int) or isinstance(height, bool) or height < 0:
                raise ValueError("height must be a non-negative integer")
            cert = []
            for entry in obj["quorum_cert"]:
                if not isinstance(entry, list) or len(entry) != 2 or not isinstance(entry[0], str):
                    raise ValueError("bad quorum_cert entry")
                cert.append((entry[0], b64decode_strict(entry[1])))
            if not isinstance(obj["txs"], list) or not isinstance(obj["proposer"], str):
                raise ValueError("bad block body")
            return cls(
                height=height,
                prev_hash=check_hex_digest(obj["prev_hash"]),
                txs=tuple(PrimitiveTx.from_json(t) for t in obj["txs"]),
                proposer=obj["proposer"],
                quorum_cert=tuple(cert),
                block_hash=check_hex_digest(obj["block_hash"]),
            )
        except (ValueError, TypeError) as exc:
            raise E.FieldInvalid(f"block: {exc}") from None

    def with_cert(self, cert: Iterable[tuple[str, bytes]]) -> LedgerBlock:
        return replace(self, quorum_cert=tuple(sorted(cert)))


def build_block(height: int, prev_hash: str, txs: Iterable[PrimitiveTx], proposer: str) -> LedgerBlock:
    block = LedgerBlock(height, prev_hash, tuple(txs), proposer)
    return replace(block, block_hash=block.computed_hash)


def check_quorum_cert(block: LedgerBlock, roster: NodeRoster) -> None:
    """Every listed signer must be distinct, rostered and valid; at least a quorum."""
    seen = set()
    message = vote_message(roster.domain_id, block.block_hash)
    for node_id, sig in block.quorum_cert:
        node = roster.get(node_id)
        if node is None or node_id in seen:
            raise E.SignatureInvalid(f"certificate signer {node_id} not rostered or repeated")
        if not verify_signature(node.public_key, message, sig):
            raise E.SignatureInvalid(f"bad certificate signature from {node_id}")
        seen.add(node_id)
    need = quorum_size(len(roster))
    if len(seen) < need:
        raise E.QuorumInsufficient(f"{len(seen)} signatures, quorum is {need}")


@dataclass
class Ledger:
    """Single-writer chain plus its derived state table.

    ``state`` is an immutable snapshot that may be handed to readers.
    ``tx_index`` maps each committed tx id to ``(height, position)``.
    """

    domain_id: str
    roster: NodeRoster
    authorities: Mapping[str, KeyRecord] = field(default_factory=dict)
    blocks: list[LedgerBlock] = field(default_factory=list)
    state: StateTable = None
    tx_index: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.state is None:
            self.state = StateTable(self.domain_id, authorities=dict(self.authorities))

    @property
    def height(self) -> int:
        """Height of the tip block, -1 for an empty chain."""
        return len(self.blocks) - 1

    @property
    def tip_hash(self) -> str:
        return self.blocks[-1].block_hash if self.blocks else ZERO_HASH

    def tx(self, tx_id: str) -> PrimitiveTx | None:
        loc = self.tx_index.get(tx_id)
        return None if loc is None else self.blocks[loc[0]].txs[loc[1]]

    def fresh_copy(self) -> Ledger:
        return Ledger(self.domain_id, self.roster, self.authorities)


def apply_block_txs(chain: Ledger, block: LedgerBlock) -> StateTable:
    """Apply ``block``'s transactions to the tip state without committing."""
    state = chain.state
    seen = set()
    for tx in block.txs:
        if tx.tx_id in chain.tx_index or tx.tx_id in seen:
            raise E.TxInvalid(tx.tx_id, E.DuplicateTx(f"tx id {tx.tx_id} already committed"))
        seen.add(tx.tx_id)
        try:
            state = apply_tx(state, tx)
        except E.CspError as exc:
            raise E.TxInvalid(tx.tx_id, exc) from None
    return replace(state, next_logical_time=block.height + 1)


def check_block(chain: Ledger, block: LedgerBlock, *, check_cert: bool = True) -> StateTable:
    """Validate ``block`` as the next block of ``chain``; return the new state."""
    expected = chain.height + 1
    if block.height != expected:
        raise E.HeightGap(f"expected height {expected}, got {block.height}")
    if block.prev_hash != chain.tip_hash:
        raise E.PrevHashMismatch(f"prev_hash does not match tip at height {chain.height}")
    if block.computed_hash != block.block_hash:
        raise E.HashMismatch(f"block {block.height} hash does not match its contents")
    if check_cert:
        check_quorum_cert(block, chain.roster)
    return apply_block_txs(chain, block)


def append_block(chain: Ledger, block: LedgerBlock) -> Ledger:
    """Validate and append ``block``; raises on any violation, leaving ``chain`` unchanged."""
    state = check_block(chain, block)
    for pos, tx in enumerate(block.txs):
        chain.tx_index[tx.tx_id] = (block.height, pos)
    chain.blocks.append(block)
    chain.state = state
    return chain


_CAUSES = (
    E.HeightGap, E.PrevHashMismatch, E.HashMismatch, E.QuorumInsufficient,
    E.SignatureInvalid, E.TxInvalid,
)


def replay_blocks(domain_id: str, roster: NodeRoster, authorities: Mapping[str, KeyRecord],
                  blocks: Iterable[LedgerBlock]) -> Ledger:
    """Rebuild a ledger from blocks, raising ChainInvalid at the first bad height."""
    chain = Ledger(domain_id, roster, authorities)
    for index, block in enumerate(blocks):
        try:
            append_block(chain, block)
        except _CAUSES as exc:
            raise E.ChainInvalid(index, type(exc).__name__, str(exc)) from None
    return chain


def verify_chain(chain: Ledger) -> None:
    """Audit linkage, hashes, certificates and state of ``chain``.

    Returns None when everything checks out; otherwise raises
    :class:`ChainInvalid` with the first failing height and the cause.
    """
    replayed = replay_blocks(chain.domain_id, chain.roster, chain.authorities, chain.blocks)
    if replayed.state != chain.state:
        raise E.ChainInvalid(chain.height, "StateMismatch", "replay does not reproduce the state table")


def asset_state(chain: Ledger, asset_id: str) -> AssetInstance | None:
    return chain.state.assets.get(asset_id)


@dataclass(frozen=True)
class CustomerView:
    customer_key_id: str
    domain_id: str
    visible_assets: Mapping[str, AssetInstance]
    escrowed_in: frozenset[str]


def customer_view(chain: Ledger, customer_key_id: str) -> CustomerView:
    """Assets owned by, or escrowed to, one customer of this domain."""
    record = chain.state.keys.get(customer_key_id)
    if record is None or record.holder_kind is not HolderKind.CUSTOMER:
        raise E.CustomerUnknown(f"{customer_key_id} is not a customer of {chain.domain_id}")
    visible = {}
    escrowed_in = set()
    for asset_id, asset in chain.state.assets.items():
        if asset.owner_key_id == customer_key_id:
            visible[asset_id] = asset
        elif asset.escrow is not None and asset.escrow.beneficiary_key_id == customer_key_id:
            visible[asset_id] = asset
            escrowed_in.add(asset_id)
    return CustomerView(customer_key_id, chain.domain_id, visible, frozenset(escrowed_in))


def dump_ledger(chain: Ledger) -> str:
    """Newline-delimited canonical JSON, one block per line."""
    return "".join(canonical_json(b.to_json()).decode("utf-8") + "\n" for b in chain.blocks)


def parse_ledger_dump(text: str) -> list[LedgerBlock]:
    """Parse a dump; a malformed line raises ChainInvalid at that height."""
    blocks = []
    for index, line in enumerate(text.splitlines()):
        try:
            blocks.append(LedgerBlock.from_json(parse_canonical(line)))
        except (ValueError, E.CspError) as exc:
            raise E.ChainInvalid(index, "Malformed", str(exc)) from None
    return blocks


def load_ledger(text: str, roster: NodeRoster, authorities: Mapping[str, KeyRecord] | None = None) -> Ledger:
    return replay_blocks(roster.domain_id, roster, authorities or {}, parse_ledger_dump(text))
