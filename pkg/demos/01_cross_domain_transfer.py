"""Move one asset between two domains and look at what each side recorded.

    python3 demos/01_cross_domain_transfer.py
"""

from __future__ import annotations

from cspsim import World, load_scenario
from cspsim.ledger import customer_view
from cspsim.scenario import bundled_scenario_path

world = World(load_scenario(bundled_scenario_path("happy_path"))).run()
print(f"ran {world.now} ticks, quiescent={world.quiescent}")

# %% The session as both gateways see it
for s in world.session_summaries():
    print(f"{s['session_id']}: {s['asset_id']} {s['originator']} -> {s['beneficiary']}"
          f"  source={s['source_phase']} dest={s['dest_phase']}")

for did in ("CD1", "CD2"):
    node = world.gateway_of[did]
    print(f"\ndecision log of {node} (gateway of {did}):")
    for rec in world.gateways[node].logs["s1"].records:
        print(f"  tick {rec.tick:3}  {rec.role.value:6} {rec.phase.value:10} {sorted(rec.data)}")

# %% Ledger effects: the source instance is EGRESSED, a fresh one lives in the destination
for did, ledger in world.ledgers().items():
    print(f"\n{did} at height {ledger.height}")
    for asset_id, asset in sorted(ledger.state.assets.items()):
        print(f"  {asset_id:10} {asset.state.value:9} owner={asset.owner_key_id}")

# %% Customers only see their own slice of their own domain
view = customer_view(world.ledger("CD1"), "bob@cd1")
print("\nbob@cd1 sees:", sorted(view.visible_assets))

# %% The receipt is co-signed by both gateways
for receipt in world.receipts():
    print("\nreceipt:", receipt.to_json())
