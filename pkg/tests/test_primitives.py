from __future__ import annotations

import random
from dataclasses import replace

import pytest

from cspsim import errors as E
from cspsim.model import AssetState, HolderKind, KeyStatus
from cspsim.primitives import (
    DEFAULT_OP_COSTS,
    FeeSchedule,
    FeeTier,
    OpCostTable,
    TxKind,
    apply_escrow_create,
    apply_tx,
    invoke_fee,
    op_cost,
    total_cost,
)

from helpers import Kit, key, key_op, profile, signed


@pytest.fixture
def kit():
    return Kit()


def test_transfer_moves_ownership(kit):
    a, b = kit.cust("alice"), kit.cust("bob")
    state = kit.apply(kit.transfer_tx("A1", a, b))
    assert state.assets["A1"].owner_key_id == b
    assert state.assets["A1"].state is AssetState.LIVE


def test_transfer_by_non_owner(kit):
    with pytest.raises(E.NotOwner):
        kit.apply(kit.transfer_tx("A1", kit.cust("bob"), kit.cust("carol")))


def test_transfer_of_escrowed_asset(kit):
    a = kit.cust("alice")
    state = kit.apply(kit.escrow_tx("A1", a, kit.cust("bob"), 10))
    with pytest.raises(E.AssetNotLive):
        kit.apply(kit.transfer_tx("A1", a, kit.cust("carol")), state)


def test_transfer_recipient_rules(kit):
    a = kit.cust("alice")
    with pytest.raises(E.RecipientUnknown):
        kit.apply(kit.transfer_tx("A1", a, "nobody@cd1"))
    with pytest.raises(E.RecipientNotCustomer):
        kit.apply(kit.transfer_tx("A1", a, "csp:csp-a"))


def test_tx_signature_is_checked(kit):
    tx = kit.transfer_tx("A1", kit.cust("alice"), kit.cust("bob"))
    forged = replace(tx, signature=key("mallory").sign(tx.signing_bytes))
    with pytest.raises(E.SignatureInvalid):
        kit.apply(forged)
    with pytest.raises(E.KeyUnknown):
        kit.apply(kit.transfer_tx("A1", "mallory", kit.cust("bob")))


def test_escrow_to_csp(kit):
    now = kit.state.next_logical_time
    state = kit.apply(kit.escrow_tx("A1", kit.cust("alice"), "csp:csp-a", now + 5, tx_id="e1"))
    asset = state.assets["A1"]
    assert asset.state is AssetState.ESCROWED
    assert asset.escrow.created_at == now and asset.escrow.expiry_at == now + 5


def test_escrow_expiry_boundary(kit):
    now = kit.state.next_logical_time
    with pytest.raises(E.ExpiryInPast):
        kit.apply(kit.escrow_tx("A1", kit.cust("alice"), kit.cust("bob"), now))


def test_escrow_twice(kit):
    a = kit.cust("alice")
    state = kit.apply(kit.escrow_tx("A1", a, kit.cust("bob"), 10))
    with pytest.raises(E.AssetNotLive):
        kit.apply(kit.escrow_tx("A1", a, kit.cust("carol"), 10), state)


def test_escrow_beneficiary_must_exist(kit):
    with pytest.raises(E.BeneficiaryUnknown):
        kit.apply(kit.escrow_tx("A1", kit.cust("alice"), "ghost", 10))


def _escrowed(kit, tag="deal", expiry=10):
    return kit.apply(kit.escrow_tx("A1", kit.cust("alice"), kit.cust("bob"), expiry, tag, tx_id="e1"))


def test_release_before_expiry(kit):
    state = _escrowed(kit)
    state = kit.apply(kit.release_tx("e1", kit.cust("bob"), "deal"), state)
    asset = state.assets["A1"]
    assert asset.owner_key_id == kit.cust("bob") and asset.state is AssetState.LIVE and asset.escrow is None


def test_release_at_expiry(kit):
    state = replace(_escrowed(kit, expiry=10), next_logical_time=10)
    with pytest.raises(E.EscrowExpired):
        kit.apply(kit.release_tx("e1", kit.cust("bob"), "deal"), state)


def test_release_wrong_tag_or_signer(kit):
    state = _escrowed(kit)
    with pytest.raises(E.ConditionMismatch):
        kit.apply(kit.release_tx("e1", kit.cust("bob"), "other"), state)
    with pytest.raises(E.NotBeneficiary):
        kit.apply(kit.release_tx("e1", kit.cust("carol"), "deal"), state)
    with pytest.raises(E.EscrowUnknown):
        kit.apply(kit.release_tx("nope", kit.cust("bob"), "deal"), state)


def test_revert_at_expiry(kit):
    state = replace(_escrowed(kit, expiry=10), next_logical_time=10)
    state = kit.apply(kit.revert_tx("e1", kit.cust("alice")), state)
    asset = state.assets["A1"]
    assert asset.owner_key_id == kit.cust("alice") and asset.state is AssetState.LIVE


def test_revert_one_tick_early(kit):
    state = replace(_escrowed(kit, expiry=10), next_logical_time=9)
    with pytest.raises(E.EscrowNotExpired):
        kit.apply(kit.revert_tx("e1", kit.cust("alice")), state)


def test_release_after_revert(kit):
    state = replace(_escrowed(kit, expiry=10), next_logical_time=10)
    state = kit.apply(kit.revert_tx("e1", kit.cust("alice")), state)
    with pytest.raises(E.EscrowUnknown):
        kit.apply(kit.release_tx("e1", kit.cust("bob"), "deal"), replace(state, next_logical_time=3))


def test_ingress_by_csp(kit):
    state = kit.apply(kit.ingress_tx("N1", kit.cust("carol")))
    assert state.assets["N1"].state is AssetState.LIVE
    assert state.assets["N1"].owner_key_id == kit.cust("carol")


def test_ingress_by_customer(kit):
    with pytest.raises(E.NotCSP):
        kit.apply(kit.ingress_tx("N1", kit.cust("carol"), signer=kit.cust("alice")))


def test_ingress_rules(kit):
    with pytest.raises(E.AssetTypeNotAdmitted):
        kit.apply(kit.ingress_tx("N1", kit.cust("carol"), profile_hash="ab" * 32))
    with pytest.raises(E.DuplicateAssetId):
        kit.apply(kit.ingress_tx("A1", kit.cust("carol")))
    with pytest.raises(E.OwnerUnknown):
        kit.apply(kit.ingress_tx("N1", "ghost"))


def test_egress_of_locked_asset(kit):
    state = kit.apply(kit.escrow_tx("A1", kit.cust("alice"), "csp:csp-a", 10, "s1", tx_id="s1:lock"))
    state = kit.apply(kit.egress_tx("A1", "s1"), state)
    asset = state.assets["A1"]
    assert asset.state is AssetState.EGRESSED
    assert (asset.egress.dest_domain_id, asset.egress.session_id) == ("CD2", "s1")
    with pytest.raises(E.AssetNotLive):
        kit.apply(kit.transfer_tx("A1", kit.cust("alice"), kit.cust("bob")), state)


def test_egress_requires_lock(kit):
    with pytest.raises(E.AssetNotLocked):
        kit.apply(kit.egress_tx("A1", "s1"))
    state = kit.apply(kit.escrow_tx("A1", kit.cust("alice"), "csp:csp-b", 10, "s1"))
    with pytest.raises(E.AssetNotLocked):
        kit.apply(kit.egress_tx("A1", "s1"), state)
    with pytest.raises(E.SessionMismatch):
        kit.apply(kit.egress_tx("A1", "s2", signer="csp:csp-b"), state)
    with pytest.raises(E.NotCSP):
        kit.apply(kit.egress_tx("A1", "s1", signer=kit.cust("alice")), state)


def test_register_customer(kit):
    tx = key_op("CD1", kit.csp("csp-a"), HolderKind.CUSTOMER, "dave@cd1", "dave@cd1", "k1")
    state = kit.apply(tx)
    rec = state.keys["dave@cd1"]
    assert rec.status is KeyStatus.ACTIVE and rec.sponsor == "csp-a"


def test_customer_belongs_to_one_csp(kit):
    tx = key_op("CD1", kit.csp("csp-b"), HolderKind.CUSTOMER, "alice2@cd1", kit.cust("alice"), "k1")
    with pytest.raises(E.Unauthorized):
        kit.apply(tx)


def test_rotate_does_not_move_ownership(kit):
    a = kit.cust("alice")
    tx = key_op("CD1", kit.csp("csp-a"), HolderKind.CUSTOMER, a, "", "k1", op="ROTATE", new_key_id="alice-2")
    state = kit.apply(tx)
    assert state.keys[a].status is KeyStatus.ROTATED and state.keys[a].successor == "alice-2"
    assert state.keys["alice-2"].status is KeyStatus.ACTIVE
    assert state.assets["A1"].owner_key_id == a
    # the successor may move the asset explicitly
    state = kit.apply(kit.transfer_tx("A1", "alice-2", "alice-2"), state)
    assert state.assets["A1"].owner_key_id == "alice-2"


def test_revoke_then_rotate(kit):
    a = kit.cust("alice")
    state = kit.apply(key_op("CD1", kit.csp("csp-a"), HolderKind.CUSTOMER, a, "", "k1", op="REVOKE"))
    assert state.keys[a].status is KeyStatus.REVOKED
    rotate = key_op("CD1", kit.csp("csp-a"), HolderKind.CUSTOMER, a, "", "k2", op="ROTATE", new_key_id="a2")
    with pytest.raises(E.BadTransition):
        kit.apply(rotate, state)


def test_key_op_authority(kit):
    with pytest.raises(E.Unauthorized):
        kit.apply(key_op("CD1", kit.csp("csp-b"), HolderKind.CUSTOMER, kit.cust("alice"), "", "k1", op="REVOKE"))
    with pytest.raises(E.Unauthorized):
        kit.apply(key_op("CD1", kit.csp("csp-a"), HolderKind.CSP, "csp:csp-a", "", "k2", op="REVOKE"))
    with pytest.raises(E.Unauthorized):
        kit.apply(key_op("CD1", key(kit.cust("alice")), HolderKind.CUSTOMER, "eve", "eve", "k3"))
    with pytest.raises(E.KeyUnknown):
        kit.apply(key_op("CD1", kit.csp("csp-a"), HolderKind.CUSTOMER, "ghost", "", "k4", op="REVOKE"))
    state = kit.apply(key_op("CD1", kit.csp("csp-a"), HolderKind.CSP, "csp:csp-b", "", "k5", op="REVOKE"))
    assert state.keys["csp:csp-b"].status is KeyStatus.REVOKED


def _type_op(kit, op, sp=None, tx_id=None):
    sp = sp or kit.sp
    return kit.tx(TxKind.ASSET_TYPE_OP, {"op": op, "profile_hash": sp.profile_hash, "signed_profile": sp.to_json()},
                  "csp:csp-a", tx_id)


def test_asset_type_add_and_idempotence(kit):
    other = signed(profile(profile_id="P2", asset_code="EURX"))
    state = kit.apply(_type_op(kit, "ADD", other))
    assert other.profile_hash in state.asset_types
    again = kit.apply(_type_op(kit, "ADD", other), state)
    assert again.asset_types == state.asset_types


def test_asset_type_add_rejects_bad_profile(kit):
    bad = replace(signed(profile(profile_id="P2")), signature=b"\x00" * 64)
    with pytest.raises(E.ProfileInvalid):
        kit.apply(_type_op(kit, "ADD", bad))
    with pytest.raises(E.NotCSP):
        kit.apply(kit.tx(TxKind.ASSET_TYPE_OP, {"op": "ADD", "profile_hash": kit.sp.profile_hash,
                                               "signed_profile": kit.sp.to_json()}, kit.cust("alice")))


def test_asset_type_remove_in_use(kit):
    with pytest.raises(E.TypeInUse):
        kit.apply(_type_op(kit, "REMOVE"))
    other = signed(profile(profile_id="P2"))
    with pytest.raises(E.TypeUnknown):
        kit.apply(_type_op(kit, "REMOVE", other))
    empty = Kit(assets=0)
    assert kit.sp.profile_hash not in empty.apply(_type_op(empty, "REMOVE")).asset_types


def test_domain_and_payload_checks(kit):
    tx = kit.transfer_tx("A1", kit.cust("alice"), kit.cust("bob"))
    with pytest.raises(E.DomainMismatch):
        apply_tx(replace(kit.state, domain_id="CD9"), tx)
    with pytest.raises(E.PayloadInvalid):
        apply_tx(kit.state, replace(tx, payload={"asset_id": "A1"}))


def test_default_cost_table_and_constancy(kit):
    assert {k.value: v for k, v in DEFAULT_OP_COSTS.items()} == {
        "TRANSFER": 10, "ESCROW_CREATE": 15, "ESCROW_RELEASE": 15, "ESCROW_REVERT": 15,
        "INGRESS": 25, "EGRESS": 25, "KEY_OP": 5, "ASSET_TYPE_OP": 20,
    }
    rng = random.Random(3)
    costs = {op_cost(kit.transfer_tx(f"A{rng.randrange(9)}", f"u{rng.randrange(99)}", "x").kind)
             for _ in range(1000)}
    assert costs == {op_cost(TxKind.TRANSFER)}


def test_block_cost_is_additive(kit):
    table = OpCostTable.from_json({"TRANSFER": 7, "EGRESS": 3})
    txs = [kit.transfer_tx("A1", "a", "b"), kit.egress_tx("A1", "s"), kit.ingress_tx("Z", "c")]
    assert total_cost(txs, table) == 7 + 3 + 25
    assert total_cost(txs) == sum(op_cost(tx.kind) for tx in txs)
    with pytest.raises(E.FieldInvalid):
        OpCostTable.from_json({"TRANSFER": 0})
    with pytest.raises(E.FieldInvalid):
        OpCostTable.from_json({"MINT": 1})


SCHEDULE = FeeSchedule((FeeTier("basic", 100, 4), FeeTier("free", 0, 1)), {"alice": "basic", "bob": "free"})


@pytest.mark.parametrize("count,fee", [(3, 0), (100, 0), (101, 4), (250, 4)])
def test_invoke_fee_boundary(count, fee):
    assert invoke_fee(SCHEDULE, "alice", count) == fee


def test_invoke_fee_unassigned():
    with pytest.raises(E.CustomerUnassigned):
        invoke_fee(SCHEDULE, "zed", 1)


def test_fee_ignores_asset_content():
    # The fee signature takes no asset at all; the two invocations differ only in profile.
    p1, p2 = signed(profile()), signed(profile(profile_id="P9", asset_code="GOLD", denomination="1 oz"))
    assert p1.profile_hash != p2.profile_hash
    assert invoke_fee(SCHEDULE, "bob", 5) == invoke_fee(SCHEDULE, "bob", 5) == 1


def test_primitive_tx_json_roundtrip(kit):
    from cspsim.primitives import PrimitiveTx

    tx = kit.escrow_tx("A1", kit.cust("alice"), kit.cust("bob"), 10, "tag")
    assert PrimitiveTx.from_json(tx.to_json()) == tx


def test_escrow_create_helper_defaults(kit):
    tx = kit.escrow_tx("A1", kit.cust("alice"), kit.cust("bob"), 10)
    state = apply_escrow_create(kit.state, "A1", kit.cust("bob"), 10, tx)
    assert state.assets["A1"].escrow.condition_tag == ""
