"""Shared fixtures for unit tests: a small hand-built domain.

``Kit`` builds one domain with two CSPs, four nodes, three customers and a
signed profile, and commits blocks with a full quorum certificate so tests
can drive the ledger without the simulator.
"""

from __future__ import annotations

from dataclasses import replace
from fractions import Fraction

from cspsim.canonical import ZERO_HASH, b64encode
from cspsim.crypto import KeyPair, derive_keypair
from cspsim.ledger import Ledger, LedgerBlock, append_block, build_block, vote_message
from cspsim.model import AssetProfile, HolderKind, KeyRecord, KeyStatus
from cspsim.primitives import StateTable, TxKind, apply_tx, make_tx
from cspsim.profiles import sign_profile
from cspsim.roster import NodeRoster, RosterNode
from cspsim.scenario import gen_scenario

KEY_SEED = "unit"


def key(key_id: str) -> KeyPair:
    return derive_keypair(KEY_SEED, key_id)


def profile(**overrides) -> AssetProfile:
    fields = dict(
        profile_id="P1",
        asset_code="USDX",
        issuing_authority="Issuer One",
        denomination="1 unit",
        issue_date=19000,
        circulation_systems=("cspsim-ledger",),
        jurisdictions=("J1", "J2"),
        validation_urls=("https://registry.example/P1",),
        authority_key_id="pa-1",
    )
    fields.update(overrides)
    return AssetProfile(**fields)


def authority_registry(status: KeyStatus = KeyStatus.ACTIVE, key_id: str = "pa-1") -> dict[str, KeyRecord]:
    successor = "pa-2" if status is KeyStatus.ROTATED else None
    return {key_id: KeyRecord(key_id, key(key_id).public_key, HolderKind.PROFILE_AUTHORITY, status, successor)}


def signed(p: AssetProfile | None = None):
    p = p or profile()
    return sign_profile(p, key(p.authority_key_id).secret, authority_registry(key_id=p.authority_key_id))


def roster(domain_id: str = "CD1", n: int = 4, csps: tuple[str, ...] = ("csp-a", "csp-b"),
           tags: tuple[str, ...] | None = None) -> NodeRoster:
    prefix = domain_id.lower()
    nodes = []
    for i in range(n):
        nid = f"{prefix}-n{i + 1}"
        tag = tags[i] if tags else "stack-x"
        nodes.append(RosterNode(nid, csps[i * len(csps) // n], key(f"node:{nid}").public_key, tag))
    return NodeRoster(domain_id, tuple(nodes))


def key_op(domain_id: str, signer: KeyPair, kind: HolderKind, key_id: str, holder: str, tx_id: str,
           op: str = "REGISTER", new_key_id: str | None = None):
    payload = {"op": op, "holder_kind": kind.value, "key_id": key_id,
               "public_key": b64encode(key(key_id).public_key) if op == "REGISTER" else None,
               "holder": holder, "new_key_id": new_key_id,
               "new_public_key": b64encode(key(new_key_id).public_key) if new_key_id else None}
    return make_tx(domain_id, TxKind.KEY_OP, payload, signer, tx_id)


class Kit:
    """One domain: CSPs ``csp-a``/``csp-b``, customers alice/bob (csp-a) and carol (csp-b)."""

    customers = {"alice": "csp-a", "bob": "csp-a", "carol": "csp-b"}

    def __init__(self, domain_id: str = "CD1", assets: int = 3, n: int = 4):
        self.domain_id = domain_id
        self.roster = roster(domain_id, n)
        self.sp = signed()
        self.authorities = authority_registry()
        self.ledger = Ledger(domain_id, self.roster, self.authorities)
        self._counter = 0
        self.commit(*self.genesis_txs(assets))

    def cust(self, name: str) -> str:
        return f"{name}@{self.domain_id.lower()}"

    def csp(self, name: str) -> KeyPair:
        return key(f"csp:{name}")

    def genesis_txs(self, assets: int) -> list:
        d = self.domain_id
        txs = [key_op(d, self.csp(c), HolderKind.CSP, f"csp:{c}", c, f"g:key:{c}") for c in ("csp-a", "csp-b")]
        for name, sponsor in self.customers.items():
            txs.append(key_op(d, self.csp(sponsor), HolderKind.CUSTOMER, self.cust(name), self.cust(name),
                              f"g:key:{name}"))
        txs.append(make_tx(d, TxKind.ASSET_TYPE_OP, {"op": "ADD", "profile_hash": self.sp.profile_hash,
                                                    "signed_profile": self.sp.to_json()},
                           self.csp("csp-a"), "g:type:P1"))
        for i in range(assets):
            txs.append(self.ingress_tx(f"A{i + 1}", self.cust("alice"), f"g:asset:A{i + 1}"))
        return txs

    @property
    def state(self) -> StateTable:
        return self.ledger.state

    def next_id(self, stem: str = "t") -> str:
        self._counter += 1
        return f"{stem}{self._counter}"

    def tx(self, kind: TxKind, payload: dict, signer: str | KeyPair, tx_id: str | None = None):
        pair = signer if isinstance(signer, KeyPair) else key(signer)
        return make_tx(self.domain_id, kind, payload, pair, tx_id or self.next_id())

    def transfer_tx(self, asset_id: str, frm: str, to: str, tx_id: str | None = None):
        return self.tx(TxKind.TRANSFER, {"asset_id": asset_id, "to_key_id": to}, frm, tx_id)

    def escrow_tx(self, asset_id: str, owner: str, beneficiary: str, expiry_at: int, tag: str = "",
                  tx_id: str | None = None):
        return self.tx(TxKind.ESCROW_CREATE, {"asset_id": asset_id, "beneficiary_key_id": beneficiary,
                                              "expiry_at": expiry_at, "condition_tag": tag}, owner, tx_id)

    def release_tx(self, escrow_id: str, signer: str, tag: str = "", tx_id: str | None = None):
        return self.tx(TxKind.ESCROW_RELEASE, {"escrow_id": escrow_id, "condition_tag": tag}, signer, tx_id)

    def revert_tx(self, escrow_id: str, signer: str, tx_id: str | None = None):
        return self.tx(TxKind.ESCROW_REVERT, {"escrow_id": escrow_id}, signer, tx_id)

    def ingress_tx(self, asset_id: str, owner: str, tx_id: str | None = None, session_id: str = "",
                   signer: str = "csp:csp-a", profile_hash: str | None = None):
        return self.tx(TxKind.INGRESS, {"profile_hash": profile_hash or self.sp.profile_hash,
                                        "asset_id": asset_id, "owner_key_id": owner,
                                        "session_id": session_id}, signer, tx_id)

    def egress_tx(self, asset_id: str, session_id: str, dest: str = "CD2", signer: str = "csp:csp-a",
                  tx_id: str | None = None):
        return self.tx(TxKind.EGRESS, {"asset_id": asset_id, "dest_domain_id": dest,
                                       "session_id": session_id}, signer, tx_id)

    def block(self, *txs, height: int | None = None, prev_hash: str | None = None, signers: int | None = None
              ) -> LedgerBlock:
        h = self.ledger.height + 1 if height is None else height
        prev = (self.ledger.tip_hash if h > 0 else ZERO_HASH) if prev_hash is None else prev_hash
        block = build_block(h, prev, txs, self.roster.node_ids[h % len(self.roster)])
        voters = self.roster.node_ids[: len(self.roster) if signers is None else signers]
        message = vote_message(self.domain_id, block.block_hash)
        return block.with_cert((n, key(f"node:{n}").sign(message)) for n in voters)

    def commit(self, *txs) -> Ledger:
        return append_block(self.ledger, self.block(*txs))

    def at_time(self, t: int) -> StateTable:
        """The current state with the logical clock moved to ``t``."""
        return replace(self.state, next_logical_time=t)

    def apply(self, tx, state: StateTable | None = None) -> StateTable:
        return apply_tx(state or self.state, tx)


def quiet(seed: int = 1, nodes_per_csp: int = 2, txs: int = 6, every: int = 7, **knobs) -> dict:
    """A two-domain scenario with plain transfers bouncing between customers of CD1."""
    doc = gen_scenario(seed, nodes_per_csp=nodes_per_csp, drop_rate=knobs.pop("drop_rate", Fraction(0)),
                       partitions=0, gateway_crash=False, node_crashes=0, double_spend=False, **knobs)
    names = ["alice", "bob", "carol"]
    doc["timeline"] = [
        {"tick": 2 + i * every, "type": "tx", "domain_id": "CD1", "kind": "TRANSFER", "tx_id": f"t{i}",
         "signer": f"{names[i % 3]}@cd1", "payload": {"asset_id": "A1", "to_key_id": f"{names[(i + 1) % 3]}@cd1"}}
        for i in range(txs)
    ]
    return doc
