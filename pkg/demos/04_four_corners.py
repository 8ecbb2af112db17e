"""Issuer, two CSP domains and an acquirer: value enters, moves and leaves.

The issuer backs a claim with an external deposit and the CSP ingresses a
matching instance. After the cross-domain transfer the acquirer redeems it
against the co-signed receipt and the issuer settles.

    python3 demos/04_four_corners.py
"""

from __future__ import annotations

import json

from cspsim import World, load_scenario
from cspsim.scenario import bundled_scenario_path

world = World(load_scenario(bundled_scenario_path("four_corners"))).run()

# %% What happened to each scripted event
for o in world.outcomes:
    print(f"tick {o.tick:3}  {o.kind:9} {o.status:8} {o.detail}")

# %% Claims and settlements as the registry sees them
print(json.dumps(world.registry.to_json(), indent=2))

# %% The claim-backed asset on both ledgers
for did, ledger in world.ledgers().items():
    for asset_id, asset in sorted(ledger.state.assets.items()):
        if "claim:" in asset_id:
            print(f"{did}: {asset_id} {asset.state.value} owner={asset.owner_key_id}")
