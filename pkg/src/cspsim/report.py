"""Run reports: building them from a finished world and auditing them cold.

A report is one canonical JSON document. :func:`audit` recomputes every
invariant from the report's own artifacts (ledger dumps, rosters,
authorities, decision logs, receipts, final asset tables), so a third
party can check a run without re-executing it. :func:`build_report` runs
the same audit to fill in the ``invariants`` section.
"""

from __future__ import annotations

from collections import Counter
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

from . import errors as E
from .canonical import canonical_json, parse_canonical
from .community import (
    CspMetrics,
    check_domain_intersections,
    community_metrics,
    diversity_index,
    node_assignment,
    revenue_share,
    validate_community,
)
from .gateway import DecisionLog, LogRecord, Phase, TransferReceipt, verify_receipt
from .ledger import Ledger, dump_ledger, parse_ledger_dump, replay_blocks
from .model import AssetState, KeyRecord, SignedAssetProfile
from .primitives import TxKind, invoke_fee, total_cost
from .profiles import verify_profile
from .roster import NodeRoster

FORMAT = "cspsim-report/1"
INVARIANTS = ("profiles", "chains", "replica_agreement", "receipts", "decision_logs", "conservation",
              "intersections", "atomicity")


def _frac(x: Fraction) -> list[int]:
    return [x.numerator, x.denominator]


def build_report(world) -> dict:
    """Everything needed to audit the run, plus the audit's own verdict."""
    sc = world.scenario
    ledgers = world.ledgers()
    domains = {}
    for did, roster in world.rosters.items():
        ledger = ledgers[did]
        tips = {}
        for node in roster.node_ids:
            rep = world.replicas[node][did]
            tips[node] = None if not world.alive(node) else [rep.ledger.height, rep.ledger.tip_hash]
        domains[did] = {
            "community_id": sc.domains[did].community_id,
            "gateway": world.gateway_of[did],
            "roster": roster.to_json(),
            "ledger_dump": dump_ledger(ledger),
            "node_tips": tips,
            "commit_ticks": list(world.commit_ticks[did]),
            "assets": {k: a.to_json() for k, a in sorted(ledger.state.assets.items())},
        }

    communities = {}
    for cid, cfg in sc.communities.items():
        dids = [d for d, spec in sc.domains.items() if spec.community_id == cid]
        violations = []
        shares = None
        metrics = {}
        for did in dids:
            violations += [v.to_json() for v in validate_community(cfg, world.rosters[did])]
            for csp, m in community_metrics(ledgers[did], cfg.member_csps).items():
                prev = metrics.get(csp, (0, 0, 0))
                metrics[csp] = (prev[0] + m.local_tx_count, prev[1] + m.cross_domain_tx_count,
                                prev[2] + m.customer_count)
        if metrics:
            try:
                shares = {csp: _frac(s) for csp, s in
                          revenue_share({c: CspMetrics(*m) for c, m in metrics.items()}, cfg.revenue_weights).items()}
            except E.AllZeroMetrics:
                shares = None
        communities[cid] = {
            "violations": violations,
            "metrics": {c: {"local_tx_count": m[0], "cross_domain_tx_count": m[1], "customer_count": m[2]}
                        for c, m in sorted(metrics.items())},
            "revenue_shares": shares,
        }

    costs, fees = {}, {}
    for did, ledger in ledgers.items():
        txs = [tx for b in ledger.blocks[1:] for tx in b.txs]
        by_kind = Counter(tx.kind.value for tx in txs)
        costs[did] = {"total": total_cost(txs, sc.op_costs), "by_kind": dict(sorted(by_kind.items()))}
        schedule = sc.communities[sc.domains[did].community_id].fee_schedule
        counts: Counter = Counter()
        for tx in txs:
            record = ledger.state.keys.get(tx.submitter_key_id)
            if record is not None and record.holder_kind.value == "CUSTOMER":
                counts[record.holder] += 1
        fees[did] = {c: sum(invoke_fee(schedule, c, k) for k in range(1, n + 1)) for c, n in sorted(counts.items())}

    logs = {}
    for node in sorted(world.gateways):
        gw = world.gateways[node]
        logs[node] = {sid: gw.logs[sid].to_lines() for sid in sorted(gw.logs)}

    doc = {
        "format": FORMAT,
        "scenario": {"name": sc.name, "digest": sc.digest, "seed": world.seed},
        "ticks": world.now,
        "quiescent": world.quiescent,
        "authorities": [r.to_json() for _, r in sorted(world.authorities.items())],
        "profiles": [world.signed_profiles[p].to_json() for p in sorted(world.signed_profiles)],
        "domains": domains,
        "gateways": {node: {"domain_id": gw.ctx.domain_id, "key_id": gw.ctx.key.key_id}
                     for node, gw in sorted(world.gateways.items())},
        "sessions": world.session_summaries(),
        "decision_logs": logs,
        "receipts": [r.to_json() for r in world.receipts()],
        "issuance": world.registry.to_json(),
        "events": [o.to_json() for o in world.outcomes],
        "community": communities,
        "diversity": {did: diversity_index(r).to_json() for did, r in world.rosters.items()},
        "intersections": [[n, sorted(ds)] for n, ds in
                          check_domain_intersections(node_assignment(world.rosters.values()))],
        "costs": costs,
        "fees": fees,
        "stats": dict(sorted(world.stats.items())),
        "trace_digest": world.net.trace_digest,
    }
    doc["invariants"] = audit(doc)
    return doc


def report_bytes(doc: Mapping[str, Any]) -> bytes:
    return canonical_json(doc) + b"\n"


def write_report(doc: Mapping[str, Any], path: str | Path) -> None:
    Path(path).write_bytes(report_bytes(doc))


def failures(invariants: Mapping[str, Any]) -> list[str]:
    out = []
    for name in INVARIANTS:
        for f in invariants.get(name, {}).get("failures", []):
            out.append(f"{name}: {f}")
    return out


# audit


class _Audit:
    def __init__(self, doc: Mapping[str, Any]):
        self.doc = doc
        self.results = {name: [] for name in INVARIANTS}
        self.authorities: dict[str, KeyRecord] = {}
        self.rosters: dict[str, NodeRoster] = {}
        self.raw_blocks: dict[str, list] = {}
        self.ledgers: dict[str, Ledger] = {}

    def fail(self, name: str, message: str) -> None:
        self.results[name].append(message)

    def run(self) -> dict:
        doc = self.doc
        try:
            self.authorities = {r["key_id"]: KeyRecord.from_json(r) for r in doc["authorities"]}
            for did, d in doc["domains"].items():
                self.rosters[did] = NodeRoster.from_json(d["roster"])
        except (KeyError, TypeError, E.CspError) as exc:
            raise E.ReportCorrupt(f"unreadable trust roots: {exc}") from None
        self.check_profiles()
        self.check_chains()
        self.check_replicas()
        self.check_receipts()
        self.check_logs()
        self.check_conservation()
        self.check_intersections()
        self.check_atomicity()
        return {name: {"ok": not fails, "failures": fails} for name, fails in self.results.items()}

    def check_profiles(self) -> None:
        for i, obj in enumerate(self.doc["profiles"]):
            try:
                verify_profile(SignedAssetProfile.from_json(obj), self.authorities)
            except E.CspError as exc:
                self.fail("profiles", f"profile {i}: {type(exc).__name__}: {exc}")

    def check_chains(self) -> None:
        for did, d in self.doc["domains"].items():
            try:
                blocks = parse_ledger_dump(d["ledger_dump"])
            except E.ChainInvalid as exc:
                self.fail("chains", f"{did}: {exc}")
                continue
            self.raw_blocks[did] = blocks
            try:
                ledger = replay_blocks(did, self.rosters[did], self.authorities, blocks)
            except E.ChainInvalid as exc:
                self.fail("chains", f"{did}: {exc}")
                continue
            recorded = d["assets"]
            replayed = {k: a.to_json() for k, a in sorted(ledger.state.assets.items())}
            if recorded != replayed:
                self.fail("chains", f"{did}: recorded asset table differs from the replayed state")
                continue
            self.ledgers[did] = ledger

    def check_replicas(self) -> None:
        for did, d in self.doc["domains"].items():
            blocks = self.raw_blocks.get(did)
            if blocks is None:
                self.fail("replica_agreement", f"{did}: no readable ledger")
                continue
            tips = set()
            for node, tip in sorted(d["node_tips"].items()):
                if tip is None:
                    continue
                height, tip_hash = tip
                if height >= len(blocks) or blocks[height].block_hash != tip_hash:
                    self.fail("replica_agreement", f"{did}: {node} tip {height} is not on the canonical chain")
                tips.add((height, tip_hash))
            if self.doc["quiescent"] and len(tips) > 1:
                self.fail("replica_agreement", f"{did}: live nodes disagree on the tip at quiescence")

    def check_receipts(self) -> None:
        for i, obj in enumerate(self.doc["receipts"]):
            try:
                r = TransferReceipt.from_json(obj)
                src, dst = self.ledgers.get(r.source_domain), self.ledgers.get(r.dest_domain)
                if src is None or dst is None:
                    raise E.TxMissing("a ledger needed for this receipt did not replay")
                verify_receipt(r, src, dst)
            except (E.CspError, KeyError, TypeError) as exc:
                self.fail("receipts", f"receipt {i}: {type(exc).__name__}: {exc}")

    def check_logs(self) -> None:
        gateways = self.doc["gateways"]
        for node, sessions in self.doc["decision_logs"].items():
            info = gateways.get(node)
            ledger = None if info is None else self.ledgers.get(info["domain_id"])
            if ledger is None:
                self.fail("decision_logs", f"{node}: gateway or its ledger unavailable")
                continue
            record = ledger.state.keys.get(info["key_id"])
            if record is None:
                self.fail("decision_logs", f"{node}: key {info['key_id']} not on {info['domain_id']}")
                continue
            for sid, lines in sessions.items():
                try:
                    log = DecisionLog([LogRecord.from_json(x) for x in lines])
                except E.CspError as exc:
                    self.fail("decision_logs", f"{node}/{sid}: {type(exc).__name__}: {exc}")
                    continue
                for rec in log.records:
                    if rec.session_id != sid or not rec.verify(record.public_key):
                        self.fail("decision_logs", f"{node}/{sid}: record {rec.seq} does not verify")
                        break

    def _txs(self, did: str):
        for block in self.raw_blocks.get(did, []):
            yield from block.txs

    def check_conservation(self) -> None:
        egress_by_session: dict[str, tuple[str, Any]] = {}
        ingress_by_session: dict[str, tuple[str, Any]] = {}
        for did, d in self.doc["domains"].items():
            if did not in self.raw_blocks:
                self.fail("conservation", f"{did}: no readable ledger")
                continue
            ingress: Counter = Counter()
            egress_ids = set()
            for tx in self._txs(did):
                if tx.kind is TxKind.INGRESS:
                    ingress[tx.payload["profile_hash"]] += 1
                    if tx.payload["session_id"]:
                        ingress_by_session[tx.payload["session_id"]] = (did, tx)
                elif tx.kind is TxKind.EGRESS:
                    egress_ids.add(tx.tx_id)
                    egress_by_session[tx.payload["session_id"]] = (did, tx)
            held: Counter = Counter()
            for asset_id, a in d["assets"].items():
                if a["state"] in (AssetState.LIVE.value, AssetState.ESCROWED.value, AssetState.EGRESSED.value):
                    held[a["profile_hash"]] += 1
                if a["state"] == AssetState.EGRESSED.value and (a["egress"] or {}).get("tx_id") not in egress_ids:
                    self.fail("conservation", f"{did}: {asset_id} is EGRESSED without an egress tx")
            for ph in sorted(set(held) | set(ingress)):
                if held[ph] != ingress[ph]:
                    self.fail("conservation", f"{did}: profile {ph[:12]} holds {held[ph]} but saw {ingress[ph]} ingress")
        # lineage: a session's ingress and egress come in pairs
        for sid, (did, tx) in sorted(ingress_by_session.items()):
            peer = egress_by_session.get(sid)
            if peer is None:
                if self.doc["quiescent"]:
                    self.fail("conservation", f"{did}: ingress for session {sid} has no matching egress")
                continue
            src_did, egress = peer
            if egress.payload["dest_domain_id"] != did or tx.payload["asset_id"] != f"{sid}:{egress.payload['asset_id']}":
                self.fail("conservation", f"session {sid}: egress and ingress describe different transfers")
        for sid, (did, egress) in sorted(egress_by_session.items()):
            if sid not in ingress_by_session:
                self.fail("conservation", f"{did}: egress for session {sid} has no matching ingress")

    def check_intersections(self) -> None:
        clashes = check_domain_intersections(node_assignment(self.rosters.values()))
        for node, domains in clashes:
            self.fail("intersections", f"{node} serves {', '.join(sorted(domains))}")
        recorded = [[n, sorted(ds)] for n, ds in clashes]
        if recorded != self.doc["intersections"]:
            self.fail("intersections", "recorded intersection list does not match the rosters")

    def check_atomicity(self) -> None:
        logs = self.doc["decision_logs"]
        for s in self.doc["sessions"]:
            sid, src, dst = s["session_id"], s["source_domain"], s["dest_domain"]
            if s["started"] is None:
                continue
            if src not in self.raw_blocks or dst not in self.raw_blocks:
                self.fail("atomicity", f"{sid}: ledgers unavailable")
                continue
            src_log = logs.get(self.doc["domains"][src]["gateway"], {}).get(sid, [])
            phase = src_log[-1]["phase"] if src_log else None
            dst_log = logs.get(self.doc["domains"][dst]["gateway"], {}).get(sid, [])
            # the summary is a convenience copy; the signed logs are the record
            if (s["source_phase"], s["dest_phase"]) != (phase, dst_log[-1]["phase"] if dst_log else None):
                self.fail("atomicity", f"{sid}: summary phases disagree with the signed decision logs")
            egress = [tx for tx in self._txs(src) if tx.kind is TxKind.EGRESS and tx.payload["session_id"] == sid]
            ingress = [tx for tx in self._txs(dst) if tx.kind is TxKind.INGRESS and tx.payload["session_id"] == sid]
            asset = self.doc["domains"][src]["assets"].get(s["asset_id"])
            dest_asset = self.doc["domains"][dst]["assets"].get(f"{sid}:{s['asset_id']}")
            committed = (
                phase == Phase.FINALIZED.value
                and len(egress) == 1 and len(ingress) == 1
                and ingress[0].payload["owner_key_id"] == s["beneficiary"]
                and asset is not None and asset["state"] == AssetState.EGRESSED.value
                and (asset["egress"] or {}).get("session_id") == sid
                and dest_asset is not None and dest_asset["state"] != AssetState.EGRESSED.value
            )
            aborted = (
                phase == Phase.ABORTED.value
                and not egress and not ingress and dest_asset is None
                and asset is not None
                and not ((asset["escrow"] or {}).get("escrow_id") == f"{sid}:lock")
                and (asset["egress"] or {}).get("session_id") != sid
                and asset["owner_key_id"] in self._lawful_owners(src, s)
            )
            if committed == aborted:
                state = "unresolved" if not (committed or aborted) else "both outcomes"
                self.fail("atomicity", f"{sid}: {state} (source phase {phase})")

    def _lawful_owners(self, did: str, s: Mapping[str, Any]) -> set[str]:
        """Originator plus anyone a committed local transfer or escrow release gave the asset to."""
        owners = {s["originator"]}
        creates = {}
        for tx in self._txs(did):
            if tx.kind is TxKind.TRANSFER and tx.payload["asset_id"] == s["asset_id"]:
                owners.add(tx.payload["to_key_id"])
            elif tx.kind is TxKind.ESCROW_CREATE and tx.payload["asset_id"] == s["asset_id"]:
                creates[tx.tx_id] = tx.payload["beneficiary_key_id"]
            elif tx.kind is TxKind.ESCROW_RELEASE and tx.payload["escrow_id"] in creates:
                owners.add(creates[tx.payload["escrow_id"]])
        return owners


def audit(doc: Mapping[str, Any]) -> dict:
    return _Audit(doc).run()


def load_report(source: bytes | str | Path) -> dict:
    if isinstance(source, Path) or (isinstance(source, str) and not source.startswith("{")):
        try:
            source = Path(source).read_bytes()
        except OSError as exc:
            raise E.ReportCorrupt(f"cannot read report: {exc}") from None
    if isinstance(source, bytes) and source.endswith(b"\n"):
        source = source[:-1]
    try:
        doc = parse_canonical(source)
    except (ValueError, E.CspError) as exc:
        raise E.ReportCorrupt(f"report is not canonical JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise E.ReportCorrupt("not a cspsim report")
    return doc


def verify_report(source: Mapping[str, Any] | bytes | str | Path) -> list[str]:
    """Re-audit a report from its artifacts alone; an empty list means ok.

    Also flags a report whose recorded verdict disagrees with the audit.
    """
    doc = source if isinstance(source, Mapping) else load_report(source)
    try:
        result = audit(doc)
    except (KeyError, TypeError, AttributeError, ValueError) as exc:
        raise E.ReportCorrupt(f"report structure unreadable: {type(exc).__name__}: {exc}") from None
    out = failures(result)
    if doc.get("invariants") != result:
        out.append("invariants: recorded verdict differs from the re-audit")
    return out
