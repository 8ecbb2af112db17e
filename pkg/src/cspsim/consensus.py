"""Crash-fault-tolerant quorum consensus for one contract domain.

One round per height: the scheduled proposer batches its mempool into a
block, followers fully validate it and vote, and the proposer turns a quorum
of votes into a certificate and broadcasts COMMIT. If a height stalls, nodes
move to the next view; the proposer of a later view first gathers a quorum
of NEW_VIEW messages and re-proposes the highest-view block any of them
voted for, which keeps a possibly-committed block from being replaced.

Lagging or restarted nodes catch up through STATUS gossip (each node pings
its ring successor) and SYNC_REQ/SYNC_RESP block transfer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from . import errors as E
from .crypto import KeyPair, verify_signature
from .ledger import Ledger, LedgerBlock, append_block, build_block, check_block, vote_message
from .primitives import PrimitiveTx, apply_tx
from .roster import NodeRoster, next_proposer, quorum_size

__all__ = [
    "ConsensusConfig",
    "ConsensusNode",
    "ConsensusState",
    "NodeRoster",
    "Phase",
    "StepResult",
    "consensus_step",
    "next_proposer",
    "quorum_size",
]

# STATUS gossip is background chatter; quiescence detection ignores it.
BACKGROUND_KINDS = frozenset({"STATUS"})
SYNC_BATCH = 64


class Phase(str, Enum):
    IDLE = "IDLE"
    PROPOSED = "PROPOSED"
    VOTED = "VOTED"
    COMMITTED = "COMMITTED"


@dataclass(frozen=True)
class ConsensusConfig:
    block_interval: int = 5
    view_timeout: int = 10
    status_every: int = 2
    max_block_txs: int = 64


@dataclass
class ConsensusState:
    """Volatile per-node state; lost on crash."""

    height: int
    view: int = 0
    view_started: int = 0
    phase: Phase = Phase.IDLE
    pending_txs: dict[str, tuple[int, PrimitiveTx]] = field(default_factory=dict)
    current_proposal: LedgerBlock | None = None
    votes: dict[str, bytes] = field(default_factory=dict)
    voted: tuple[int, LedgerBlock] | None = None
    proposed_view: int | None = None
    new_views: dict[int, dict[str, Any]] = field(default_factory=dict)
    timer_count: int = 0

    def mempool(self) -> list[PrimitiveTx]:
        """Pending transactions in FIFO order by (arrival tick, tx id)."""
        return [tx for _, tx in sorted(self.pending_txs.values(), key=lambda p: (p[0], p[1].tx_id))]


@dataclass
class StepResult:
    messages: list[tuple[str, dict]] = field(default_factory=list)
    committed: list[LedgerBlock] = field(default_factory=list)

    def send(self, dst: str, payload: dict) -> None:
        self.messages.append((dst, payload))


class ConsensusNode:
    """Event-driven consensus participant.

    The ledger is durable and survives :meth:`crash`; everything in
    :attr:`state` is volatile.
    """

    def __init__(self, node_id: str, keypair: KeyPair, roster: NodeRoster, ledger: Ledger,
                 config: ConsensusConfig = ConsensusConfig()):
        if roster.get(node_id) is None:
            raise E.DomainMismatch(f"{node_id} is not rostered in {roster.domain_id}")
        self.node_id = node_id
        self.keypair = keypair
        self.roster = roster
        self.domain_id = roster.domain_id
        self.ledger = ledger
        self.config = config
        self.quorum = quorum_size(len(roster))
        self.peers = [n for n in roster.node_ids if n != node_id]
        self.state: ConsensusState | None = ConsensusState(height=ledger.height + 1)
        # instrumentation
        self.domains_seen: set[str] = set()
        self.validated: set[str] = set()

    # lifecycle

    def crash(self) -> None:
        self.state = None

    def restart(self, now: int) -> StepResult:
        self.state = ConsensusState(height=self.ledger.height + 1, view_started=now)
        out = StepResult()
        for peer in self.peers:
            out.send(peer, self._msg("STATUS", height=self.ledger.height))
        return out

    @property
    def alive(self) -> bool:
        return self.state is not None

    # helpers

    def _msg(self, kind: str, **fields: Any) -> dict:
        return {"type": kind, "domain": self.domain_id, **fields}

    def _broadcast(self, out: StepResult, payload: dict) -> None:
        for peer in self.peers:
            out.send(peer, payload)

    def proposer(self, height: int, view: int) -> str:
        return next_proposer(self.roster, height, view)

    def has_work(self) -> bool:
        st = self.state
        return bool(
            st.pending_txs
            or st.voted is not None
            or self.ledger.state.pending_escrow_expiry() is not None
        )

    def _vote_info(self) -> list | None:
        voted = self.state.voted
        return None if voted is None else [voted[0], voted[1]]

    def _enter_view(self, view: int, now: int) -> None:
        st = self.state
        st.view = view
        st.view_started = now
        st.new_views.setdefault(view, {})[self.node_id] = self._vote_info()

    # transaction intake

    def submit(self, tx: PrimitiveTx, now: int, out: StepResult | None = None) -> StepResult:
        """Accept a transaction locally and gossip it to the domain."""
        out = out or StepResult()
        if self._add_tx(tx, now):
            self._broadcast(out, self._msg("SUBMIT_TX", tx=tx))
        return out

    def _add_tx(self, tx: PrimitiveTx, now: int) -> bool:
        st = self.state
        if tx.domain_id != self.domain_id:
            raise E.DomainMismatch(f"tx for {tx.domain_id} submitted to {self.domain_id}")
        if tx.tx_id in self.ledger.tx_index or tx.tx_id in st.pending_txs:
            return False
        st.pending_txs[tx.tx_id] = (now, tx)
        return True

    # main entry point

    def step(self, event: dict, now: int, src: str | None = None) -> StepResult:
        if self.state is None:
            raise RuntimeError(f"{self.node_id} is crashed")
        out = StepResult()
        kind = event["type"]
        if kind != "TIMER":
            domain = event.get("domain")
            self.domains_seen.add(domain)
            if domain != self.domain_id:
                raise E.DomainMismatch(f"{self.node_id} got a {domain} message")
        handler = getattr(self, "_on_" + kind.lower(), None)
        if handler is None:
            raise ValueError(f"unknown consensus event {kind}")
        handler(event, now, src, out)
        return out

    def _on_submit_tx(self, event: dict, now: int, src: str | None, out: StepResult) -> None:
        self._add_tx(event["tx"], now)

    def _prune_mempool(self) -> None:
        """Drop pending txs that no longer apply on top of the local tip, in FIFO order.

        Without this a tx rejected by the proposer (a double spend, say)
        would linger in follower mempools and trigger view changes forever.
        """
        st = self.state
        state = self.ledger.state
        for tx in st.mempool():
            if tx.tx_id in self.ledger.tx_index:
                del st.pending_txs[tx.tx_id]
                continue
            try:
                state = apply_tx(state, tx)
            except E.CspError:
                del st.pending_txs[tx.tx_id]

    def _on_timer(self, event: dict, now: int, src: str | None, out: StepResult) -> None:
        st = self.state
        st.timer_count += 1
        self._prune_mempool()
        if self.has_work() and now - st.view_started >= self.config.view_timeout:
            self._enter_view(st.view + 1, now)
            self._broadcast(out, self._new_view_msg())
        self._maybe_propose(now, out)
        if st.proposed_view == st.view and st.current_proposal is not None:
            for peer in self.peers:
                if peer not in st.votes:
                    out.send(peer, self._proposal_msg())
        if st.timer_count % self.config.status_every == 0 and self.peers:
            ring = self.roster.node_ids
            succ = ring[(ring.index(self.node_id) + 1) % len(ring)]
            out.send(succ, self._msg("STATUS", height=self.ledger.height))

    def _new_view_msg(self) -> dict:
        st = self.state
        return self._msg("NEW_VIEW", height=st.height, view=st.view, vote=self._vote_info(),
                         txs=st.mempool())

    def _proposal_msg(self) -> dict:
        st = self.state
        return self._msg("PROPOSAL", height=st.height, view=st.proposed_view, block=st.current_proposal)

    # proposing

    def _build_fresh(self, now: int) -> LedgerBlock | None:
        st = self.state
        state = self.ledger.state
        chosen = []
        for tx in st.mempool():
            if len(chosen) >= self.config.max_block_txs:
                break
            if tx.tx_id in self.ledger.tx_index:
                del st.pending_txs[tx.tx_id]
                continue
            try:
                state = apply_tx(state, tx)
            except E.CspError:
                del st.pending_txs[tx.tx_id]
                continue
            chosen.append(tx)
        if not chosen and self.ledger.state.pending_escrow_expiry() is None:
            return None
        return build_block(st.height, self.ledger.tip_hash, chosen, self.node_id)

    def _maybe_propose(self, now: int, out: StepResult) -> None:
        st = self.state
        if self.proposer(st.height, st.view) != self.node_id or st.proposed_view == st.view:
            return
        block = None
        if st.view == 0:
            if not self.has_work():
                return
            block = self._build_fresh(now)
        else:
            reports = st.new_views.get(st.view, {})
            if len(reports) < self.quorum:
                return
            best = None
            for info in reports.values():
                if info is not None and (best is None or info[0] > best[0]):
                    best = info
            block = best[1] if best is not None else self._build_fresh(now)
        if block is None:
            return
        st.current_proposal = block
        st.proposed_view = st.view
        st.phase = Phase.PROPOSED
        st.votes = {}
        self._cast_vote(block, out, local=True)
        self._broadcast(out, self._proposal_msg())
        self._maybe_certify(now, out)

    def _cast_vote(self, block: LedgerBlock, out: StepResult, local: bool = False) -> bytes:
        st = self.state
        sig = self.keypair.sign(vote_message(self.domain_id, block.block_hash))
        st.voted = (st.view, block)
        if local:
            st.votes[self.node_id] = sig
        else:
            st.phase = Phase.VOTED
        return sig

    def _maybe_certify(self, now: int, out: StepResult) -> None:
        st = self.state
        if st.current_proposal is None or len(st.votes) < self.quorum:
            return
        certified = st.current_proposal.with_cert(st.votes.items())
        self._broadcast(out, self._msg("COMMIT", height=certified.height, block=certified))
        self._commit(certified, now, out)

    # following

    def _on_proposal(self, event: dict, now: int, src: str | None, out: StepResult) -> None:
        st = self.state
        height, view, block = event["height"], event["view"], event["block"]
        if height < st.height:
            self._send_blocks(src, height, out)
            return
        if height > st.height:
            out.send(src, self._msg("SYNC_REQ", start=st.height))
            return
        if view < st.view or self.proposer(height, view) != src:
            return
        if st.voted is not None and st.voted[0] >= view:
            if st.voted[0] == view and st.voted[1].block_hash == block.block_hash:
                sig = self.keypair.sign(vote_message(self.domain_id, block.block_hash))
                out.send(src, self._msg("VOTE", height=height, view=view, block_hash=block.block_hash, sig=sig))
            return
        if block.block_hash not in self.validated:
            try:
                check_block(self.ledger, block, check_cert=False)
            except E.CspError:
                return
            self.validated.add(block.block_hash)
        if view > st.view:
            st.view = view
            st.view_started = now
        sig = self._cast_vote(block, out)
        out.send(src, self._msg("VOTE", height=height, view=view, block_hash=block.block_hash, sig=sig))

    def _on_vote(self, event: dict, now: int, src: str | None, out: StepResult) -> None:
        st = self.state
        block = st.current_proposal
        if event["height"] != st.height or block is None or event["block_hash"] != block.block_hash:
            return
        node = self.roster.get(src)
        if node is None or not verify_signature(node.public_key, vote_message(self.domain_id, block.block_hash),
                                                event["sig"]):
            return
        st.votes[src] = event["sig"]
        self._maybe_certify(now, out)

    def _on_commit(self, event: dict, now: int, src: str | None, out: StepResult) -> None:
        st = self.state
        block = event["block"]
        if block.height > st.height:
            out.send(src, self._msg("SYNC_REQ", start=st.height))
        elif block.height == st.height:
            self._try_append(block, now, out)

    def _on_new_view(self, event: dict, now: int, src: str | None, out: StepResult) -> None:
        st = self.state
        height, view = event["height"], event["view"]
        if height < st.height:
            self._send_blocks(src, height, out)
            return
        if height > st.height:
            out.send(src, self._msg("SYNC_REQ", start=st.height))
            return
        for tx in event["txs"]:
            self._add_tx(tx, now)
        if view > st.view:
            self._enter_view(view, now)
            self._broadcast(out, self._new_view_msg())
        st.new_views.setdefault(view, {})[src] = event["vote"]
        if view == st.view:
            self._maybe_propose(now, out)

    # catch-up

    def _send_blocks(self, dst: str, start: int, out: StepResult) -> None:
        blocks = self.ledger.blocks[start:start + SYNC_BATCH]
        if blocks:
            out.send(dst, self._msg("SYNC_RESP", blocks=blocks))

    def _on_status(self, event: dict, now: int, src: str | None, out: StepResult) -> None:
        theirs = event["height"]
        if theirs < self.ledger.height:
            self._send_blocks(src, theirs + 1, out)
        elif theirs > self.ledger.height:
            out.send(src, self._msg("SYNC_REQ", start=self.ledger.height + 1))

    def _on_sync_req(self, event: dict, now: int, src: str | None, out: StepResult) -> None:
        self._send_blocks(src, event["start"], out)

    def _on_sync_resp(self, event: dict, now: int, src: str | None, out: StepResult) -> None:
        for block in event["blocks"]:
            if block.height == self.state.height:
                if not self._try_append(block, now, out):
                    break

    def _try_append(self, block: LedgerBlock, now: int, out: StepResult) -> bool:
        try:
            self._commit(block, now, out)
        except E.CspError:
            return False
        return True

    def _commit(self, block: LedgerBlock, now: int, out: StepResult) -> None:
        append_block(self.ledger, block)
        self.validated.add(block.block_hash)
        st = self.state
        for tx in block.txs:
            st.pending_txs.pop(tx.tx_id, None)
        st.height = self.ledger.height + 1
        st.view = 0
        st.view_started = now
        st.phase = Phase.COMMITTED
        st.current_proposal = None
        st.votes = {}
        st.voted = None
        st.proposed_view = None
        st.new_views = {}
        out.committed.append(block)


def consensus_step(node: ConsensusNode, event: dict, now: int, src: str | None = None) -> StepResult:
    """Advance ``node`` by one event; returns outgoing messages and committed blocks."""
    return node.step(event, now, src)
