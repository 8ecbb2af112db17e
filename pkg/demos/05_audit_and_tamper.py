"""Write a report, audit it independently, then break it in a few places.

    python3 demos/05_audit_and_tamper.py
"""

from __future__ import annotations

import copy

from cspsim import World, build_report, gen_scenario, verify_report
from cspsim.canonical import canonical_json, parse_canonical
from cspsim.report import report_bytes

# %% A generated run with message loss, a partition or two and a gateway crash
doc = gen_scenario(11, gateway_crash=True)
world = World(doc).run()
report = build_report(world)
print(f"{doc['name']}: {len(report_bytes(report))} report bytes, quiescent={report['quiescent']}")
for name, verdict in report["invariants"].items():
    print(f"  {name:20} {verdict if isinstance(verdict, str) else verdict.get('ok', verdict)}")
print("independent audit:", verify_report(report) or "clean")

# %% Rewrite history: drop one transaction from the last non-empty block
forged = copy.deepcopy(report)
did = max(forged["domains"], key=lambda d: forged["domains"][d]["ledger_dump"].count("\n"))
lines = forged["domains"][did]["ledger_dump"].splitlines()
h = max(i for i, line in enumerate(lines) if parse_canonical(line)["txs"])
block = parse_canonical(lines[h])
block["txs"] = block["txs"][:-1]
lines[h] = canonical_json(block).decode()
forged["domains"][did]["ledger_dump"] = "\n".join(lines)
print(f"\ndropped a tx at {did} height {h}:", verify_report(forged)[:2])

# %% Claim a better outcome than the ledgers support
forged = copy.deepcopy(report)
forged["sessions"][0]["source_phase"] = "FINALIZED" if forged["sessions"][0]["source_phase"] != "FINALIZED" \
    else "ABORTED"
print("edited session phase:", verify_report(forged)[:2])

# %% Flip one byte of the signed profile
forged = copy.deepcopy(report)
sig = forged["profiles"][0]["signature"]
forged["profiles"][0]["signature"] = ("B" if sig[0] != "B" else "C") + sig[1:]
print("flipped signature byte:", verify_report(forged)[:2])
