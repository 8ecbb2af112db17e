"""Community bookkeeping: stack diversity, shared nodes and revenue shares.

    python3 demos/03_community_governance.py
"""

from __future__ import annotations

from fractions import Fraction

from cspsim import World, load_scenario
from cspsim.community import (
    CspMetrics,
    DiversityIndex,
    check_domain_intersections,
    community_metrics,
    diversity_index,
    node_assignment,
    revenue_share,
    validate_community,
)
from cspsim.scenario import bundled_scenario_path

world = World(load_scenario(bundled_scenario_path("four_corners"))).run()
sc = world.scenario

# %% Diversity of the software stacks behind each domain
for did, roster in world.rosters.items():
    idx = diversity_index(roster)
    exact = "irrational" if idx.rational is None else str(idx.rational)
    print(f"{did}: stack counts {idx.counts}, index {float(idx):.6f} ({exact})")

# Some indices are exact fractions, most are not; comparisons stay exact either way.
print("(2,2) vs (1,1,1,1):", DiversityIndex((2, 2)).rational, "<", DiversityIndex((1, 1, 1, 1)).rational)
print("(3,1) < (2,1,1):", DiversityIndex((3, 1)) < DiversityIndex((2, 1, 1)))

# %% Nodes that serve more than one domain
print("shared nodes:", check_domain_intersections(node_assignment(world.rosters.values())) or "none")

# %% Membership rules and revenue shares, per community
for cid, cfg in sc.communities.items():
    did = cfg.contract_service_id
    print(f"\n{cid} runs {did}; violations: {validate_community(cfg, world.rosters[did]) or 'none'}")
    metrics = community_metrics(world.ledger(did), cfg.member_csps)
    for csp, m in metrics.items():
        print(f"  {csp}: {m.local_tx_count} local tx, {m.cross_domain_tx_count} cross-domain, "
              f"{m.customer_count} customers")
    print("  shares:", {c: str(s) for c, s in revenue_share(metrics, cfg.revenue_weights).items()})

# %% A hand-made example: equal weights, 30/10 transactions, 10/10 customers
shares = revenue_share({"csp-a": CspMetrics(30, 0, 10), "csp-b": CspMetrics(10, 0, 10)},
                       (Fraction(1, 2), Fraction(1, 2)))
print("\nworked example:", {c: str(s) for c, s in shares.items()}, "sum =", sum(shares.values()))
