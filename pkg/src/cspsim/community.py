"""CSP community governance: membership, intersections, diversity, revenue."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from decimal import Context, Decimal
from fractions import Fraction
from typing import Any, Iterable, Mapping

from . import errors as E
from .canonical import check_hex_digest
from .ledger import Ledger
from .model import HolderKind, expect_keys
from .primitives import FeeSchedule, FeeTier, TxKind
from .roster import NodeRoster


@dataclass(frozen=True)
class CommunityConfig:
    community_id: str
    contract_service_id: str
    member_csps: tuple[str, ...]
    min_csps: int
    max_csps: int
    min_nodes_per_csp: int
    duration_commitment: int
    operating_rules_hash: str
    fee_schedule: FeeSchedule
    revenue_weights: tuple[Fraction, Fraction] = (Fraction(1, 2), Fraction(1, 2))

    def __post_init__(self) -> None:
        w_tx, w_cust = self.revenue_weights
        if w_tx < 0 or w_cust < 0 or w_tx + w_cust != 1:
            raise E.FieldInvalid("revenue weights must be non-negative and sum to 1")
        if self.min_csps > self.max_csps:
            raise E.FieldInvalid("min_csps exceeds max_csps")

    def to_json(self) -> dict:
        return {
            "community_id": self.community_id,
            "contract_service_id": self.contract_service_id,
            "member_csps": list(self.member_csps),
            "min_csps": self.min_csps,
            "max_csps": self.max_csps,
            "min_nodes_per_csp": self.min_nodes_per_csp,
            "duration_commitment": self.duration_commitment,
            "operating_rules_hash": self.operating_rules_hash,
            "fee_schedule": {
                "tiers": [
                    {"name": t.name, "monthly_included_invocations": t.monthly_included_invocations,
                     "per_extra_invocation_fee": t.per_extra_invocation_fee}
                    for t in self.fee_schedule.tiers
                ],
                "assignment": dict(sorted(self.fee_schedule.assignment.items())),
            },
            "revenue_weights": [[w.numerator, w.denominator] for w in self.revenue_weights],
        }

    @classmethod
    def from_json(cls, obj: Any, assignment: Mapping[str, str] | None = None) -> CommunityConfig:
        obj = expect_keys(obj, ("community_id", "contract_service_id", "member_csps", "min_csps", "max_csps",
                                "min_nodes_per_csp", "duration_commitment", "operating_rules_hash",
                                "fee_schedule", "revenue_weights"), "community")
        fees = obj["fee_schedule"]
        tiers = tuple(
            FeeTier(t["name"], t["monthly_included_invocations"], t["per_extra_invocation_fee"])
            for t in fees["tiers"]
        )
        merged = dict(fees.get("assignment", {}))
        merged.update(assignment or {})
        try:
            rules = check_hex_digest(obj["operating_rules_hash"])
        except ValueError as exc:
            raise E.FieldInvalid(str(exc)) from None
        weights = tuple(Fraction(n, d) for n, d in obj["revenue_weights"])
        return cls(obj["community_id"], obj["contract_service_id"], tuple(obj["member_csps"]), obj["min_csps"],
                   obj["max_csps"], obj["min_nodes_per_csp"], obj["duration_commitment"], rules,
                   FeeSchedule(tiers, merged), weights)


@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    detail: str

    def to_json(self) -> dict:
        return {"code": self.code, "subject": self.subject, "detail": self.detail}


def validate_community(cfg: CommunityConfig, roster: NodeRoster) -> list[Violation]:
    """Every membership-bound and node-minimum violation, in a stable order."""
    out = []
    members = len(cfg.member_csps)
    if members < cfg.min_csps:
        out.append(Violation("UNDER_MEMBERSHIP", cfg.community_id, f"{members} members, minimum {cfg.min_csps}"))
    if members > cfg.max_csps:
        out.append(Violation("OVER_MEMBERSHIP", cfg.community_id, f"{members} members, maximum {cfg.max_csps}"))
    if roster.domain_id != cfg.contract_service_id:
        out.append(Violation("WRONG_DOMAIN", roster.domain_id, f"community runs {cfg.contract_service_id}"))
    per_csp = Counter(n.csp_id for n in roster.nodes)
    for csp in cfg.member_csps:
        if per_csp[csp] < cfg.min_nodes_per_csp:
            out.append(Violation("NODES_BELOW_MINIMUM", csp,
                                 f"{per_csp[csp]} nodes, minimum {cfg.min_nodes_per_csp}"))
    for csp in sorted(set(per_csp) - set(cfg.member_csps)):
        out.append(Violation("NON_MEMBER_NODES", csp, f"{per_csp[csp]} nodes from a non-member"))
    return out


def node_assignment(rosters: Iterable[NodeRoster]) -> dict[str, frozenset[str]]:
    """Map each node id to the set of domains whose roster lists it."""
    acc: dict[str, set[str]] = {}
    for roster in rosters:
        for node in roster.nodes:
            acc.setdefault(node.node_id, set()).add(roster.domain_id)
    return {node: frozenset(domains) for node, domains in acc.items()}


def check_domain_intersections(assignments: Mapping[str, Iterable[str]]) -> list[tuple[str, frozenset[str]]]:
    """Nodes serving two or more domains, sorted by node id."""
    out = []
    for node in sorted(assignments):
        domains = frozenset(assignments[node])
        if len(domains) >= 2:
            out.append((node, domains))
    return out


# diversity index


def _factor(n: int) -> Counter:
    out: Counter = Counter()
    p = 2
    while p * p <= n:
        while n % p == 0:
            out[p] += 1
            n //= p
        p += 1
    if n > 1:
        out[n] += 1
    return out


_DEC = Context(prec=60)


@dataclass(frozen=True, order=False)
class DiversityIndex:
    """Normalized Shannon entropy of stack-tag frequencies, held exactly.

    With tag counts ``c_i`` over ``n`` nodes the index is
    ``1 - ln(A) / ln(B)`` where ``A = prod c_i**c_i`` and ``B = n**n``.
    It is rational exactly when A and B are powers of a common base; then
    :attr:`rational` holds the value, otherwise it is None and the value is
    irrational.
    """

    counts: tuple[int, ...]

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def log_ratio(self) -> Fraction | None:
        """``ln A / ln B`` when rational, else None."""
        n = self.n
        if n == 1:
            return Fraction(1)
        a: Counter = Counter()
        for c in self.counts:
            for p, e in _factor(c).items():
                a[p] += e * c
        b = Counter({p: e * n for p, e in _factor(n).items()})
        if not a:
            return Fraction(0)
        if set(a) - set(b):
            return None
        ratios = {Fraction(a[p], b[p]) for p in b}
        return ratios.pop() if len(ratios) == 1 else None

    @property
    def rational(self) -> Fraction | None:
        ratio = self.log_ratio
        return None if ratio is None else 1 - ratio

    def decimal(self) -> Decimal:
        rat = self.rational
        if rat is not None:
            return _DEC.divide(Decimal(rat.numerator), Decimal(rat.denominator))
        # plain sum() would round to the default 28-digit context
        ln_a = Decimal(0)
        for c in self.counts:
            ln_a = _DEC.add(ln_a, _DEC.multiply(Decimal(c), Decimal(c).ln(_DEC)))
        ln_b = _DEC.multiply(Decimal(self.n), Decimal(self.n).ln(_DEC))
        return _DEC.subtract(Decimal(1), _DEC.divide(ln_a, ln_b))

    def __float__(self) -> float:
        return float(self.decimal())

    def _key(self, other: DiversityIndex):
        if self.n == other.n:
            # same B: a smaller A means a larger index, exactly
            return -self._a(), -other._a()
        r1, r2 = self.rational, other.rational
        if r1 is not None and r2 is not None:
            return r1, r2
        return self.decimal(), other.decimal()

    def _a(self) -> int:
        out = 1
        for c in self.counts:
            out *= c ** c
        return out if self.n > 1 else 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiversityIndex):
            return NotImplemented
        x, y = self._key(other)
        return x == y

    def __lt__(self, other: DiversityIndex) -> bool:
        x, y = self._key(other)
        return x < y

    def __le__(self, other: DiversityIndex) -> bool:
        x, y = self._key(other)
        return x <= y

    def __hash__(self) -> int:
        return hash(self.counts)

    def to_json(self) -> dict:
        rat = self.rational
        return {
            "counts": list(self.counts),
            "rational": None if rat is None else [rat.numerator, rat.denominator],
            "micro": int(self.decimal().scaleb(6).to_integral_value()),
        }


def diversity_index(roster: NodeRoster) -> DiversityIndex:
    if not roster.nodes:
        raise E.EmptyRoster(f"roster of {roster.domain_id} is empty")
    counts = Counter(n.stack_tag for n in roster.nodes)
    return DiversityIndex(tuple(sorted(counts.values(), reverse=True)))


# revenue sharing


@dataclass(frozen=True)
class CspMetrics:
    local_tx_count: int
    cross_domain_tx_count: int
    customer_count: int

    @property
    def tx(self) -> int:
        return self.local_tx_count + self.cross_domain_tx_count


def revenue_share(metrics: Mapping[str, CspMetrics], weights: tuple[Fraction, Fraction]) -> dict[str, Fraction]:
    """Linear blend of transaction share and customer share; sums to exactly 1.

    If one of the two totals is zero that component carries no information
    and the other component takes the full weight.
    """
    w_tx, w_cust = (Fraction(w) for w in weights)
    if w_tx < 0 or w_cust < 0 or w_tx + w_cust != 1:
        raise E.FieldInvalid("weights must be non-negative and sum to 1")
    total_tx = sum(m.tx for m in metrics.values())
    total_cust = sum(m.customer_count for m in metrics.values())
    if total_tx == 0 and total_cust == 0:
        raise E.AllZeroMetrics("no CSP has transactions or customers")
    if total_tx == 0:
        w_tx, w_cust = Fraction(0), Fraction(1)
    elif total_cust == 0:
        w_tx, w_cust = Fraction(1), Fraction(0)
    out = {}
    for csp in sorted(metrics):
        m = metrics[csp]
        share = Fraction(0)
        if w_tx:
            share += w_tx * Fraction(m.tx, total_tx)
        if w_cust:
            share += w_cust * Fraction(m.customer_count, total_cust)
        out[csp] = share
    return out


def community_metrics(ledger: Ledger, members: Iterable[str]) -> dict[str, CspMetrics]:
    """Attribute each committed tx to a CSP: its own key, or the sponsor of the customer who signed it.

    INGRESS/EGRESS txs tagged with a transfer session count as cross-domain.
    """
    keys = ledger.state.keys
    local: Counter = Counter()
    cross: Counter = Counter()
    for block in ledger.blocks:
        for tx in block.txs:
            record = keys.get(tx.submitter_key_id)
            if record is None:
                continue
            csp = record.holder if record.holder_kind is HolderKind.CSP else record.sponsor
            if tx.kind in (TxKind.INGRESS, TxKind.EGRESS) and tx.payload.get("session_id"):
                cross[csp] += 1
            else:
                local[csp] += 1
    # a customer is a holder, whatever number of rotated keys it went through
    customers = Counter(
        sponsor for sponsor, _ in {(r.sponsor, r.holder) for r in keys.values() if r.holder_kind is HolderKind.CUSTOMER}
    )
    return {csp: CspMetrics(local[csp], cross[csp], customers[csp]) for csp in members}
