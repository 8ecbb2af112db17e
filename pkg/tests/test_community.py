from __future__ import annotations

import json
import random
from decimal import Decimal
from fractions import Fraction
from pathlib import Path

import pytest

from cspsim import errors as E
from cspsim.community import (
    CommunityConfig,
    CspMetrics,
    DiversityIndex,
    Violation,
    check_domain_intersections,
    community_metrics,
    diversity_index,
    node_assignment,
    revenue_share,
    validate_community,
)
from cspsim.primitives import FeeSchedule, FeeTier
from cspsim.roster import NodeRoster

from helpers import Kit, roster

DIVERSITY = json.loads((Path(__file__).parent / "vectors" / "diversity.json").read_text())
RULES = "ab" * 32


def config(members=("csp-a", "csp-b"), lo=2, hi=5, per=2, domain="CD1"):
    return CommunityConfig("C1", domain, tuple(members), lo, hi, per, 1000, RULES,
                           FeeSchedule((FeeTier("basic", 3, 2),), {}))


def test_valid_community_has_no_violations():
    assert validate_community(config(), roster()) == []


def test_every_violation_is_reported():
    r = roster(n=4, csps=("csp-a", "csp-x"))
    got = validate_community(config(members=("csp-a", "csp-b", "csp-c"), hi=2, per=3, domain="CD9"), r)
    assert [v.code for v in got] == ["OVER_MEMBERSHIP", "WRONG_DOMAIN", "NODES_BELOW_MINIMUM",
                                     "NODES_BELOW_MINIMUM", "NODES_BELOW_MINIMUM", "NON_MEMBER_NODES"]
    assert got[-1] == Violation("NON_MEMBER_NODES", "csp-x", "2 nodes from a non-member")
    under = validate_community(config(members=("csp-a",), lo=2), roster(csps=("csp-a",)))
    assert [v.code for v in under] == ["UNDER_MEMBERSHIP"]


def test_config_rules_and_roundtrip():
    with pytest.raises(E.FieldInvalid):
        CommunityConfig("C1", "CD1", (), 3, 2, 1, 1, RULES, FeeSchedule((), {}))
    cfg = config()
    with pytest.raises(E.FieldInvalid):
        CommunityConfig(**{**cfg.__dict__, "revenue_weights": (Fraction(1, 2), Fraction(1, 3))})
    assert CommunityConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(E.FieldInvalid):
        CommunityConfig.from_json({**cfg.to_json(), "operating_rules_hash": "xyz"})


def test_intersections_example():
    r1 = roster("CD1", 2)
    r2 = NodeRoster("CD2", (r1.nodes[1], *roster("CD2", 2).nodes))
    assignment = node_assignment([r1, r2])
    assert check_domain_intersections(assignment) == [("cd1-n2", frozenset({"CD1", "CD2"}))]
    assert check_domain_intersections(node_assignment([r1, roster("CD2", 2)])) == []


def test_intersections_match_brute_force():
    rng = random.Random(5)
    for _ in range(200):
        domains = [f"D{i}" for i in range(rng.randrange(1, 5))]
        assignment = {f"n{j}": {d for d in domains if rng.random() < 0.4} for j in range(rng.randrange(1, 12))}
        expected = []
        for node in sorted(assignment):
            shared = [d for d in domains if any(d in assignment[node] and e in assignment[node]
                                                for e in domains if e != d)]
            if shared:
                expected.append((node, frozenset(assignment[node])))
        assert check_domain_intersections(assignment) == expected


def _partitions(n, largest=None):
    largest = largest or n
    if n == 0:
        yield ()
        return
    for k in range(min(n, largest), 0, -1):
        for rest in _partitions(n - k, k):
            yield (k, *rest)


def test_vectors_cover_every_partition_up_to_eight():
    assert sorted(tuple(v["counts"]) for v in DIVERSITY) == sorted(
        p for n in range(1, 9) for p in _partitions(n))


@pytest.mark.parametrize("vector", DIVERSITY, ids=lambda v: "-".join(map(str, v["counts"])))
def test_diversity_vectors(vector):
    index = DiversityIndex(tuple(vector["counts"]))
    expected = None if vector["rational"] is None else Fraction(*vector["rational"])
    assert index.rational == expected
    assert abs(index.decimal() - Decimal(vector["digits40"])) < Decimal(10) ** -38


@pytest.mark.parametrize("counts,value", [((1, 1, 1, 1), 1), ((4,), 0), ((2, 2), Fraction(1, 2)),
                                          ((1,), 0), ((4, 4), Fraction(1, 3))])
def test_diversity_examples(counts, value):
    assert DiversityIndex(counts).rational == value


def test_irrational_index_has_no_rational_form():
    index = DiversityIndex((2, 1))
    assert index.rational is None
    assert str(index.decimal()).startswith("0.579380164285695")
    assert index.to_json()["rational"] is None and index.to_json()["micro"] == 579380


def test_diversity_from_roster_and_ordering():
    r = roster(n=4, tags=("a", "b", "a", "c"))
    assert diversity_index(r) == DiversityIndex((2, 1, 1))
    assert diversity_index(r).rational == Fraction(3, 4)
    ordered = sorted(DiversityIndex(p) for p in _partitions(6))
    assert ordered[0].rational == 0 and ordered[-1].rational == 1
    assert DiversityIndex((2, 1)) < DiversityIndex((1, 1, 1))
    assert DiversityIndex((1, 1)) == DiversityIndex((1, 1, 1)) != DiversityIndex((4, 4))
    with pytest.raises(E.EmptyRoster):
        diversity_index(NodeRoster("CD1", ()))


def test_diversity_rises_when_a_modal_node_switches_to_a_fresh_tag():
    for n in range(2, 9):
        for counts in _partitions(n):
            if counts[0] == 1:
                continue
            moved = tuple(sorted((counts[0] - 1,) + counts[1:] + (1,), reverse=True))
            assert DiversityIndex(counts) < DiversityIndex(moved)


def test_diversity_ignores_roster_order():
    tags = ("a", "b", "a", "c", "a", "b")
    rng = random.Random(3)
    base = diversity_index(roster(n=6, tags=tags))
    for _ in range(20):
        shuffled = list(tags)
        rng.shuffle(shuffled)
        assert diversity_index(roster(n=6, tags=tuple(shuffled))).counts == base.counts


def test_diversity_exactness_identity():
    # For a rational index v = 1 - p/q, A**q == B**p must hold over the integers.
    for n in range(2, 9):
        for counts in _partitions(n):
            index = DiversityIndex(counts)
            ratio = index.log_ratio
            a = 1
            for c in counts:
                a *= c ** c
            b = n ** n
            found = [(p, q) for q in range(1, 65) for p in range(0, q + 1) if a ** q == b ** p]
            if ratio is None:
                assert not found
            else:
                assert (ratio.numerator, ratio.denominator) in found


def test_revenue_share_example():
    metrics = {"x": CspMetrics(6, 0, 1), "y": CspMetrics(2, 0, 1)}
    shares = revenue_share(metrics, (Fraction(1, 2), Fraction(1, 2)))
    assert shares == {"x": Fraction(5, 8), "y": Fraction(3, 8)}


def test_revenue_share_sums_to_one():
    rng = random.Random(8)
    for _ in range(500):
        metrics = {f"c{i}": CspMetrics(rng.randrange(5), rng.randrange(3), rng.randrange(4))
                   for i in range(rng.randrange(1, 6))}
        w = Fraction(rng.randrange(11), 10)
        try:
            shares = revenue_share(metrics, (w, 1 - w))
        except E.AllZeroMetrics:
            assert all(m.tx == 0 and m.customer_count == 0 for m in metrics.values())
            continue
        assert sum(shares.values()) == 1 and all(s >= 0 for s in shares.values())


def test_revenue_zero_total_rules():
    only_customers = {"x": CspMetrics(0, 0, 3), "y": CspMetrics(0, 0, 1)}
    assert revenue_share(only_customers, (Fraction(1, 2), Fraction(1, 2))) == {"x": Fraction(3, 4),
                                                                               "y": Fraction(1, 4)}
    with pytest.raises(E.AllZeroMetrics):
        revenue_share({"x": CspMetrics(0, 0, 0)}, (Fraction(1), Fraction(0)))
    with pytest.raises(E.FieldInvalid):
        revenue_share(only_customers, (Fraction(1), Fraction(1)))


def test_community_metrics_from_ledger():
    kit = Kit(assets=2)
    kit.commit(kit.transfer_tx("A1", kit.cust("alice"), kit.cust("carol")),
               kit.transfer_tx("A1", kit.cust("carol"), kit.cust("bob")))
    metrics = community_metrics(kit.ledger, ["csp-a", "csp-b"])
    # genesis: csp-a signs its key, alice and bob keys, the type op, two ingresses; csp-b signs two keys
    assert metrics["csp-a"] == CspMetrics(7, 0, 2)
    assert metrics["csp-b"] == CspMetrics(3, 0, 1)
    shares = revenue_share(metrics, (Fraction(1, 2), Fraction(1, 2)))
    assert shares["csp-a"] == Fraction(1, 2) * Fraction(7, 10) + Fraction(1, 2) * Fraction(2, 3)
