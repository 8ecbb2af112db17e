"""Node rosters, quorum arithmetic and the leader schedule."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .canonical import b64decode_strict, b64encode
from .errors import EmptyRoster, FieldInvalid
from .model import expect_keys


@dataclass(frozen=True)
class RosterNode:
    node_id: str
    csp_id: str
    public_key: bytes
    stack_tag: str

    def to_json(self) -> dict:
        return {
            "node_id": self.node_id,
            "csp_id": self.csp_id,
            "public_key": b64encode(self.public_key),
            "stack_tag": self.stack_tag,
        }

    @classmethod
    def from_json(cls, obj: Any) -> RosterNode:
        obj = expect_keys(obj, ("node_id", "csp_id", "public_key", "stack_tag"), "roster node")
        try:
            key = b64decode_strict(obj["public_key"])
        except ValueError as exc:
            raise FieldInvalid(str(exc)) from None
        return cls(obj["node_id"], obj["csp_id"], key, obj["stack_tag"])


@dataclass(frozen=True)
class NodeRoster:
    domain_id: str
    nodes: tuple[RosterNode, ...]

    def __post_init__(self) -> None:
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise FieldInvalid(f"duplicate node ids in roster of {self.domain_id}")

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.node_id for n in self.nodes)

    def get(self, node_id: str) -> RosterNode | None:
        for node in self.nodes:
            if node.node_id == node_id:
                return node
        return None

    def to_json(self) -> dict:
        return {"domain_id": self.domain_id, "nodes": [n.to_json() for n in self.nodes]}

    @classmethod
    def from_json(cls, obj: Any) -> NodeRoster:
        obj = expect_keys(obj, ("domain_id", "nodes"), "roster")
        if not isinstance(obj["nodes"], list):
            raise FieldInvalid("roster.nodes must be a list")
        return cls(obj["domain_id"], tuple(RosterNode.from_json(n) for n in obj["nodes"]))


def quorum_size(n: int) -> int:
    """Smallest vote count such that any two quorums of ``n`` nodes intersect."""
    if n < 1:
        raise ValueError("roster size must be >= 1")
    return (2 * n) // 3 + 1


def next_proposer(roster: NodeRoster, height: int, view: int = 0) -> str:
    if not roster.nodes:
        raise EmptyRoster(f"roster of {roster.domain_id} is empty")
    return roster.nodes[(height + view) % len(roster.nodes)].node_id
