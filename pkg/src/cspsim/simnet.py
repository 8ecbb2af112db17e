"""Deterministic discrete-event message network.

Time is an integer tick. Every random decision comes from
:class:`XorShift64Star`, a portable generator defined by its recurrence::

    x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27   (mod 2**64)
    output = x * 0x2545F4914F6CDD1D                (mod 2**64)

seeded through one round of SplitMix64 so that small seeds spread out.
Each ``schedule_send`` draws the delay first and the drop decision second,
always both, so the stream position depends only on the number of sends.
"""

from __future__ import annotations

import hashlib
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable

from .canonical import canonical_json
from .errors import PlanInvalid, SrcCrashed

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class XorShift64Star:
    def __init__(self, seed: int):
        self.state = splitmix64(seed & MASK64) or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection sampling."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def chance(self, p: Fraction) -> bool:
        return self.below(p.denominator) < p.numerator


@dataclass(frozen=True)
class Envelope:
    msg_id: int
    src: str
    dst: str
    kind: str
    payload: Any
    send_tick: int
    deliver_tick: int


@dataclass(frozen=True)
class Partition:
    side_a: frozenset[str]
    side_b: frozenset[str]
    start_tick: int
    end_tick: int

    def separates(self, a: str, b: str) -> bool:
        return (a in self.side_a and b in self.side_b) or (a in self.side_b and b in self.side_a)

    def overlaps(self, start: int, end: int) -> bool:
        # active on [start_tick, end_tick); window is inclusive on both ends
        return self.start_tick <= end and start < self.end_tick


@dataclass(frozen=True)
class Crash:
    node: str
    crash_tick: int
    restart_tick: int | None = None


@dataclass(frozen=True)
class GatewayCrash:
    """Crash ``node`` right after its gateway logs ``phase`` (any session unless named)."""

    node: str
    phase: str
    downtime: int
    session_id: str | None = None


@dataclass(frozen=True)
class FaultPlan:
    drop_rate: Fraction = Fraction(0)
    partitions: tuple[Partition, ...] = ()
    crashes: tuple[Crash, ...] = ()
    gateway_crashes: tuple[GatewayCrash, ...] = ()

    def validate(self) -> None:
        if not 0 <= self.drop_rate < 1:
            raise PlanInvalid(f"drop_rate {self.drop_rate} outside [0, 1)")
        for p in self.partitions:
            if p.side_a & p.side_b:
                raise PlanInvalid("partition sides overlap")
            if not 0 <= p.start_tick < p.end_tick:
                raise PlanInvalid(f"partition window [{p.start_tick}, {p.end_tick}) is empty")
        by_node: dict[str, list[Crash]] = defaultdict(list)
        for c in self.crashes:
            if c.crash_tick < 0 or (c.restart_tick is not None and c.restart_tick <= c.crash_tick):
                raise PlanInvalid(f"crash of {c.node}: restart must follow crash")
            by_node[c.node].append(c)
        for g in self.gateway_crashes:
            if g.downtime < 1:
                raise PlanInvalid(f"gateway crash of {g.node}: downtime must be >= 1")
        for node, crashes in by_node.items():
            crashes.sort(key=lambda c: c.crash_tick)
            for prev, nxt in zip(crashes, crashes[1:]):
                if prev.restart_tick is None or prev.restart_tick > nxt.crash_tick:
                    raise PlanInvalid(f"overlapping crashes of {node}")

    def to_json(self) -> dict:
        return {
            "drop_rate": [self.drop_rate.numerator, self.drop_rate.denominator],
            "partitions": [
                {"side_a": sorted(p.side_a), "side_b": sorted(p.side_b),
                 "start_tick": p.start_tick, "end_tick": p.end_tick}
                for p in self.partitions
            ],
            "crashes": [
                {"node": c.node, "crash_tick": c.crash_tick, "restart_tick": c.restart_tick}
                for c in self.crashes
            ],
            "gateway_crashes": [
                {"node": g.node, "phase": g.phase, "downtime": g.downtime, "session_id": g.session_id}
                for g in self.gateway_crashes
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> FaultPlan:
        num, den = obj.get("drop_rate", [0, 1])
        return cls(
            Fraction(num, den),
            tuple(
                Partition(frozenset(p["side_a"]), frozenset(p["side_b"]), p["start_tick"], p["end_tick"])
                for p in obj.get("partitions", [])
            ),
            tuple(Crash(c["node"], c["crash_tick"], c.get("restart_tick")) for c in obj.get("crashes", [])),
            tuple(
                GatewayCrash(g["node"], g["phase"], g["downtime"], g.get("session_id"))
                for g in obj.get("gateway_crashes", [])
            ),
        )


_SUMMARY_KEYS = ("height", "view", "session_id", "phase")


@dataclass
class Network:
    """Message queue with seeded delay/drop, partitions and crash windows.

    Beyond the planned crashes, :meth:`crash_now` lets the harness crash a
    node at an arbitrary point (used for crash-after-log injection).
    """

    seed: int
    max_delay: int = 1
    plan: FaultPlan = field(default_factory=FaultPlan)
    keep_trace: bool = False

    def __post_init__(self) -> None:
        if self.max_delay < 1:
            raise PlanInvalid("max_delay must be >= 1")
        self.plan.validate()
        self.rng = XorShift64Star(self.seed)
        self.queue: dict[int, list[Envelope]] = defaultdict(list)
        self.in_flight: Counter[str] = Counter()
        self.next_msg_id = 0
        self.trace: list[bytes] = []
        self._digest = hashlib.sha256()
        self.extra_crashes: list[Crash] = []
        self.now = 0

    def inject_fault(self, plan: FaultPlan) -> None:
        plan.validate()
        self.plan = plan

    def crash_now(self, node: str, tick: int, restart_tick: int | None) -> None:
        self.extra_crashes.append(Crash(node, tick, restart_tick))
        self.record("crash", node=node, tick=tick, restart_tick=restart_tick)

    def alive(self, node: str, tick: int) -> bool:
        for c in self.plan.crashes:
            if c.node == node and c.crash_tick <= tick and (c.restart_tick is None or tick < c.restart_tick):
                return False
        for c in self.extra_crashes:
            if c.node == node and c.crash_tick <= tick and (c.restart_tick is None or tick < c.restart_tick):
                return False
        return True

    def blocked(self, a: str, b: str, start: int, end: int) -> bool:
        return any(p.separates(a, b) and p.overlaps(start, end) for p in self.plan.partitions)

    def record(self, event: str, **fields: Any) -> None:
        line = canonical_json({"event": event, **fields})
        self._digest.update(line + b"\n")
        if self.keep_trace:
            self.trace.append(line)

    @property
    def trace_digest(self) -> str:
        return self._digest.hexdigest()

    def schedule_send(self, src: str, dst: str, kind: str, payload: Any, now: int) -> Envelope | None:
        """Queue a message; returns the envelope, or None if it was dropped."""
        if not self.alive(src, now):
            raise SrcCrashed(f"{src} is down at tick {now}")
        delay = 1 + self.rng.below(self.max_delay)
        dropped = self.rng.chance(self.plan.drop_rate)
        msg_id = self.next_msg_id
        self.next_msg_id += 1
        deliver = now + delay
        summary = {k: payload[k] for k in _SUMMARY_KEYS if isinstance(payload, dict) and k in payload}
        if dropped:
            status = "dropped"
        elif self.blocked(src, dst, now, deliver):
            status = "partitioned"
        else:
            status = "queued"
        self.record("send", id=msg_id, src=src, dst=dst, kind=kind, send=now, deliver=deliver,
                    status=status, **summary)
        if status != "queued":
            return None
        env = Envelope(msg_id, src, dst, kind, payload, now, deliver)
        self.queue[deliver].append(env)
        self.in_flight[kind] += 1
        return env

    def step(self, now: int) -> list[Envelope]:
        """Envelopes due at ``now`` in msg_id order; those to crashed nodes are lost."""
        self.now = now
        due = self.queue.pop(now, [])
        out = []
        for env in sorted(due, key=lambda e: e.msg_id):
            self.in_flight[env.kind] -= 1
            if self.alive(env.dst, now):
                out.append(env)
            else:
                self.record("lost", id=env.msg_id, dst=env.dst, tick=now)
        return out

    def pending(self, ignore: Iterable[str] = ()) -> int:
        skip = set(ignore)
        return sum(n for kind, n in self.in_flight.items() if kind not in skip)
