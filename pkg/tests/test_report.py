from __future__ import annotations

import copy
from fractions import Fraction

import pytest

from cspsim import errors as E
from cspsim.canonical import b64encode, canonical_json, parse_canonical
from cspsim.report import INVARIANTS, build_report, load_report, report_bytes, verify_report
from cspsim.scenario import bundled_scenario_path, gen_scenario, load_scenario
from cspsim.world import World


@pytest.fixture(scope="module")
def happy_doc():
    return build_report(World(load_scenario(bundled_scenario_path("happy_path"))).run())


def fails_of(doc):
    return verify_report(copy.deepcopy(doc))


def test_clean_report_verifies(happy_doc):
    assert all(happy_doc["invariants"][name]["ok"] for name in INVARIANTS)
    assert verify_report(happy_doc) == []
    assert verify_report(report_bytes(happy_doc)) == []
    assert happy_doc["quiescent"] and happy_doc["sessions"][0]["source_phase"] == "FINALIZED"


def test_report_is_canonical_and_stable(happy_doc, tmp_path):
    data = report_bytes(happy_doc)
    again = report_bytes(build_report(World(load_scenario(bundled_scenario_path("happy_path"))).run()))
    assert data == again
    path = tmp_path / "r.json"
    path.write_bytes(data)
    assert load_report(path) == happy_doc and verify_report(path) == []


def _edit_dump(doc, did, fn):
    lines = doc["domains"][did]["ledger_dump"].splitlines()
    blocks = [parse_canonical(line) for line in lines]
    fn(blocks)
    doc["domains"][did]["ledger_dump"] = "".join(canonical_json(b).decode() + "\n" for b in blocks)


def test_deleted_egress_breaks_conservation(happy_doc):
    doc = copy.deepcopy(happy_doc)

    def drop_egress(blocks):
        for b in blocks:
            b["txs"] = [t for t in b["txs"] if t["kind"] != "EGRESS"]

    _edit_dump(doc, "CD2", drop_egress)
    fails = verify_report(doc)
    assert any(f.startswith("conservation:") and "without an egress tx" in f for f in fails)
    assert any(f.startswith("conservation:") and "no matching egress" in f for f in fails)
    assert any(f.startswith("chains:") for f in fails)
    assert any(f.startswith("atomicity:") for f in fails)


def test_forged_receipt_fails(happy_doc):
    doc = copy.deepcopy(happy_doc)
    r = doc["receipts"][0]
    r["dest_sig"] = r["source_sig"]
    fails = verify_report(doc)
    assert any(f.startswith("receipts:") and "SignatureInvalid" in f for f in fails)


def test_receipt_for_unknown_tx_fails(happy_doc):
    doc = copy.deepcopy(happy_doc)
    doc["receipts"][0]["ingress_tx_id"] = "s1:nothing"
    assert any(f.startswith("receipts:") and "TxMissing" in f for f in verify_report(doc))


def test_tampered_decision_log(happy_doc):
    doc = copy.deepcopy(happy_doc)
    node = doc["domains"]["CD2"]["gateway"]
    doc["decision_logs"][node]["s1"][2]["tick"] += 1
    assert any(f.startswith("decision_logs:") for f in verify_report(doc))


def test_session_summary_must_match_signed_logs(happy_doc):
    doc = copy.deepcopy(happy_doc)
    doc["sessions"][0]["dest_phase"] = "ABORTED"
    assert "atomicity: s1: summary phases disagree with the signed decision logs" in verify_report(doc)


def test_tampered_asset_table(happy_doc):
    doc = copy.deepcopy(happy_doc)
    doc["domains"]["CD1"]["assets"]["s1:A1"]["owner_key_id"] = "carol@cd1"
    assert any(f.startswith("chains:") for f in verify_report(doc))


def test_off_chain_node_tip(happy_doc):
    doc = copy.deepcopy(happy_doc)
    node = sorted(doc["domains"]["CD1"]["node_tips"])[0]
    doc["domains"]["CD1"]["node_tips"][node][1] = "00" * 32
    assert any(f.startswith("replica_agreement:") for f in verify_report(doc))


def test_forged_profile(happy_doc):
    doc = copy.deepcopy(happy_doc)
    doc["profiles"][0]["signature"] = b64encode(bytes(64))
    assert any(f.startswith("profiles:") for f in verify_report(doc))


def test_misrecorded_verdict(happy_doc):
    doc = copy.deepcopy(happy_doc)
    doc["invariants"]["atomicity"]["ok"] = False
    assert verify_report(doc) == ["invariants: recorded verdict differs from the re-audit"]


def test_shared_node_is_an_intersection():
    doc = gen_scenario(5, gateway_crash=False, node_crashes=0, partitions=0)
    shared = dict(doc["domains"][0]["nodes"][1])
    doc["domains"][1]["nodes"].append(shared)
    report = build_report(World(doc).run())
    assert report["intersections"] == [[shared["node_id"], ["CD1", "CD2"]]]
    assert report["invariants"]["intersections"]["failures"] == [f"{shared['node_id']} serves CD1, CD2"]


def test_corrupt_report_bytes(happy_doc):
    data = report_bytes(happy_doc)
    with pytest.raises(E.ReportCorrupt):
        verify_report(data.replace(b'"quiescent":true', b'"quiescent": true'))
    with pytest.raises(E.ReportCorrupt):
        verify_report(b'{"format":"other"}')
    doc = copy.deepcopy(happy_doc)
    del doc["domains"]["CD1"]["roster"]
    with pytest.raises(E.ReportCorrupt):
        verify_report(doc)
    doc = copy.deepcopy(happy_doc)
    del doc["sessions"]
    with pytest.raises(E.ReportCorrupt):
        verify_report(doc)


def test_community_and_cost_sections(happy_doc):
    for c in happy_doc["community"].values():
        assert sum(Fraction(n, d) for n, d in c["revenue_shares"].values()) == 1
    assert happy_doc["costs"]["CD2"]["by_kind"]["EGRESS"] == 1
    assert set(happy_doc["diversity"]) == {"CD1", "CD2"}
