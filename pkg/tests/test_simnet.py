from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

import pytest

from cspsim import errors as E
from cspsim.simnet import Crash, FaultPlan, GatewayCrash, Network, Partition, XorShift64Star, splitmix64

VECTORS = json.loads((Path(__file__).parent / "vectors" / "xorshift64star.json").read_text())


@pytest.mark.parametrize("seed", sorted(VECTORS["splitmix64"], key=int))
def test_splitmix64_vectors(seed):
    assert splitmix64(int(seed)) == VECTORS["splitmix64"][seed]


@pytest.mark.parametrize("seed", sorted(VECTORS["xorshift64star"], key=int))
def test_xorshift64star_vectors(seed):
    rng = XorShift64Star(int(seed))
    assert [rng.next_u64() for _ in range(8)] == VECTORS["xorshift64star"][seed]


def test_below_is_in_range_and_roughly_uniform():
    rng = XorShift64Star(9)
    counts = [0] * 7
    for _ in range(7000):
        counts[rng.below(7)] += 1
    assert all(800 < c < 1200 for c in counts)
    with pytest.raises(ValueError):
        rng.below(0)


def test_chance_extremes():
    rng = XorShift64Star(1)
    assert not any(rng.chance(Fraction(0)) for _ in range(100))
    assert all(rng.chance(Fraction(1)) for _ in range(100))


def _deliver_all(net: Network, until: int = 50) -> list:
    out = []
    for t in range(until):
        out.extend(net.step(t))
    return out


def test_unit_delay_delivers_next_tick_in_send_order():
    net = Network(seed=1, max_delay=1)
    for i in range(3):
        net.schedule_send("a", "b", "PING", {"i": i}, now=0)
    assert net.step(0) == []
    got = net.step(1)
    assert [e.payload["i"] for e in got] == [0, 1, 2]
    assert all(e.deliver_tick == 1 for e in got)


def test_delays_bounded_by_max_delay():
    net = Network(seed=5, max_delay=4)
    envs = [net.schedule_send("a", "b", "PING", {}, now=10) for _ in range(200)]
    delays = {e.deliver_tick - e.send_tick for e in envs}
    assert delays == {1, 2, 3, 4}


def test_same_seed_same_trace():
    def run(seed):
        net = Network(seed=seed, max_delay=3, plan=FaultPlan(drop_rate=Fraction(1, 4)), keep_trace=True)
        for t in range(20):
            net.schedule_send("a", "b", "M", {"height": t}, now=t)
        _deliver_all(net)
        return net.trace, net.trace_digest

    assert run(3) == run(3)
    assert run(3)[1] != run(4)[1]


def test_drop_rate_statistics():
    net = Network(seed=11, plan=FaultPlan(drop_rate=Fraction(3, 10)))
    sent = [net.schedule_send("a", "b", "M", {}, now=0) for _ in range(5000)]
    dropped = sum(e is None for e in sent)
    assert 1350 < dropped < 1650


def test_rng_position_depends_only_on_send_count():
    # drop decisions are drawn even when the rate is zero
    a = Network(seed=2, max_delay=5)
    b = Network(seed=2, max_delay=5, plan=FaultPlan(partitions=(Partition(frozenset("a"), frozenset("b"), 0, 3),)))
    for t in range(10):
        a.schedule_send("a", "b", "M", {}, now=t)
        b.schedule_send("a", "b", "M", {}, now=t)
    assert a.rng.state == b.rng.state


def test_partition_blocks_both_directions_during_window():
    plan = FaultPlan(partitions=(Partition(frozenset({"a"}), frozenset({"b"}), 5, 10),))
    net = Network(seed=1, plan=plan)
    assert net.schedule_send("a", "b", "M", {}, now=6) is None
    assert net.schedule_send("b", "a", "M", {}, now=6) is None
    assert net.schedule_send("a", "c", "M", {}, now=6) is not None
    # the window is half-open; a message arriving at the start tick is blocked too
    assert net.schedule_send("a", "b", "M", {}, now=4) is None
    assert net.schedule_send("a", "b", "M", {}, now=10) is not None


def test_messages_to_crashed_node_are_lost():
    plan = FaultPlan(crashes=(Crash("b", 2, 5),))
    net = Network(seed=1, plan=plan)
    net.schedule_send("a", "b", "M", {"n": 1}, now=1)
    net.schedule_send("a", "b", "M", {"n": 2}, now=4)
    assert net.step(2) == []
    assert [e.payload["n"] for e in net.step(5)] == [2]


def test_crashed_sender_cannot_send():
    net = Network(seed=1, plan=FaultPlan(crashes=(Crash("a", 0),)))
    with pytest.raises(E.SrcCrashed):
        net.schedule_send("a", "b", "M", {}, now=3)


def test_crash_now_is_recorded():
    net = Network(seed=1, keep_trace=True)
    net.crash_now("a", 3, 7)
    assert not net.alive("a", 3) and not net.alive("a", 6) and net.alive("a", 7)
    assert b'"event":"crash"' in net.trace[0]


def test_pending_counts_ignore_background():
    net = Network(seed=1)
    net.schedule_send("a", "b", "STATUS", {}, now=0)
    net.schedule_send("a", "b", "VOTE", {}, now=0)
    assert net.pending() == 2 and net.pending(ignore={"STATUS"}) == 1
    net.step(1)
    assert net.pending() == 0


@pytest.mark.parametrize("plan", [
    FaultPlan(drop_rate=Fraction(1)),
    FaultPlan(drop_rate=Fraction(-1, 2)),
    FaultPlan(partitions=(Partition(frozenset("a"), frozenset("a"), 0, 5),)),
    FaultPlan(partitions=(Partition(frozenset("a"), frozenset("b"), 5, 5),)),
    FaultPlan(crashes=(Crash("a", 5, 5),)),
    FaultPlan(crashes=(Crash("a", 1, 10), Crash("a", 5, 12))),
    FaultPlan(crashes=(Crash("a", 1), Crash("a", 5, 12))),
    FaultPlan(gateway_crashes=(GatewayCrash("a", "PREPARED", 0),)),
])
def test_plan_invalid(plan):
    with pytest.raises(E.PlanInvalid):
        Network(seed=1, plan=plan)
    net = Network(seed=1)
    with pytest.raises(E.PlanInvalid):
        net.inject_fault(plan)


def test_max_delay_must_be_positive():
    with pytest.raises(E.PlanInvalid):
        Network(seed=1, max_delay=0)


def test_fault_plan_json_roundtrip():
    plan = FaultPlan(Fraction(1, 5), (Partition(frozenset({"a"}), frozenset({"b", "c"}), 1, 9),),
                     (Crash("x", 3, 8), Crash("y", 4)), (GatewayCrash("g", "COMMITTED", 10, "s1"),))
    assert FaultPlan.from_json(plan.to_json()) == plan
