"""Rewrite the golden traces and reports. Run only after an intended behaviour change.

    python3 tests/golden/regenerate.py
"""

from __future__ import annotations

from pathlib import Path

from cspsim.report import build_report, report_bytes
from cspsim.scenario import bundled_scenario_path, load_scenario
from cspsim.world import World

HERE = Path(__file__).parent
NAMES = ("happy_path", "four_corners")


def produce(name: str) -> tuple[bytes, bytes]:
    world = World(load_scenario(bundled_scenario_path(name)), keep_trace=True).run()
    trace = b"".join(line + b"\n" for line in world.net.trace)
    return trace, report_bytes(build_report(world))


if __name__ == "__main__":
    for name in NAMES:
        trace, report = produce(name)
        (HERE / f"{name}.trace.ndjson").write_bytes(trace)
        (HERE / f"{name}.report.json").write_bytes(report)
        print(f"{name}: {len(trace)} trace bytes, {len(report)} report bytes")
