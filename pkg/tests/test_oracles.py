"""The acceptance oracles must themselves reject bad histories, or their silence means nothing."""

from __future__ import annotations

from helpers import Kit
from oracles import DomainOracle, lineage


def fed(kit: Kit, *extra) -> DomainOracle:
    oracle = DomainOracle("CD1")
    for block in kit.ledger.blocks:
        for tx in block.txs:
            oracle.apply(tx, block.height)
    for height, tx in extra:
        oracle.apply(tx, height)
    return oracle


def test_clean_history_has_no_violations():
    kit = Kit(assets=2)
    alice, bob = kit.cust("alice"), kit.cust("bob")
    kit.commit(kit.transfer_tx("A1", alice, bob), kit.escrow_tx("A2", alice, bob, 5, "t", tx_id="e"))
    kit.commit(kit.release_tx("e", bob, "t"))
    oracle = fed(kit)
    assert oracle.violations == [] and oracle.conservation() == []
    assert oracle.assets["A2"].owner == bob and oracle.escrows["e"].outcome == "release"


def test_flags_spend_by_non_owner_and_of_locked_asset():
    kit = Kit(assets=1)
    alice, bob, carol = kit.cust("alice"), kit.cust("bob"), kit.cust("carol")
    theft = kit.transfer_tx("A1", bob, carol)
    lock = kit.escrow_tx("A1", alice, bob, 9, tx_id="e")
    spend = kit.transfer_tx("A1", alice, carol)
    oracle = fed(kit, (1, theft), (1, lock), (2, spend))
    assert len(oracle.violations) == 2


def test_flags_release_after_expiry_and_early_revert():
    kit = Kit(assets=2)
    alice, bob = kit.cust("alice"), kit.cust("bob")
    oracle = fed(kit, (1, kit.escrow_tx("A1", alice, bob, 3, tx_id="e1")),
                 (1, kit.escrow_tx("A2", alice, bob, 3, tx_id="e2")),
                 (3, kit.release_tx("e1", bob)), (2, kit.revert_tx("e2", alice)))
    assert len(oracle.violations) == 2


def test_flags_duplicate_ingress_and_egress_without_lock():
    kit = Kit(assets=1)
    oracle = fed(kit, (1, kit.ingress_tx("A1", kit.cust("bob"))), (1, kit.egress_tx("A1", "s1")))
    assert len(oracle.violations) == 2


def test_lineage_follows_session_prefixes():
    transfers = {"s1": {"source_domain": "CD1", "dest_domain": "CD2"},
                 "s2": {"source_domain": "CD2", "dest_domain": "CD1"}}
    assert lineage(transfers, "CD1", "s2:s1:A1") == ("CD1", "A1")
    assert lineage(transfers, "CD2", "s1:A1") == ("CD1", "A1")
    assert lineage(transfers, "CD1", "s1:A1") == ("CD1", "s1:A1")
