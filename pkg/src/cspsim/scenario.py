"""Declarative scenarios: schema validation, loading and a seeded generator.

A scenario is one JSON document (integers only). :func:`load_scenario`
checks every reference and raises :class:`ScenarioInvalid` whose ``path``
locates the offending field, e.g. ``$.timeline[3].to``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from . import errors as E
from .canonical import canonical_json, sha256_hex
from .community import CommunityConfig
from .model import AssetProfile
from .primitives import PAYLOAD_FIELDS, OpCostTable, TxKind
from .simnet import FaultPlan, XorShift64Star

FORMAT = "cspsim-scenario/1"
EVENT_TYPES = ("tx", "transfer", "issue", "redeem", "settle")
GATEWAY_PHASES = ("INIT", "NEGOTIATED", "VALIDATED", "LOCKED", "PREPARED", "COMMITTED", "FINALIZED", "ABORTED")


@dataclass(frozen=True)
class DomainSpec:
    domain_id: str
    community_id: str
    nodes: tuple[dict, ...]
    gateway_nodes: tuple[str, ...]
    protocols: frozenset[tuple[str, int]]
    supported_profiles: tuple[str, ...]
    admitted_profiles: tuple[str, ...]
    jurisdiction: dict

    @property
    def gateway(self) -> str:
        """Designated gateway: lowest node id among gateway-capable nodes."""
        return min(self.gateway_nodes)

    @property
    def csps(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(n["csp_id"] for n in self.nodes))


@dataclass(frozen=True)
class Scenario:
    raw: Mapping[str, Any]
    profiles: Mapping[str, AssetProfile]
    communities: Mapping[str, CommunityConfig]
    domains: Mapping[str, DomainSpec]
    customers: Mapping[str, dict]
    fault_plan: FaultPlan
    op_costs: OpCostTable

    @property
    def name(self) -> str:
        return self.raw["name"]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def key_seed(self) -> str:
        return self.raw["key_seed"]

    @property
    def max_ticks(self) -> int:
        return self.raw["max_ticks"]

    @property
    def digest(self) -> str:
        return sha256_hex(canonical_json(self.raw))

    def section(self, name: str) -> Mapping[str, Any]:
        return self.raw.get(name, {})


class _Checker:
    def __init__(self, obj: Any):
        self.obj = obj

    def fail(self, path: str, message: str):
        raise E.ScenarioInvalid(path, message)

    def obj_at(self, value: Any, path: str, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> dict:
        if not isinstance(value, dict):
            self.fail(path, "expected an object")
        for key in required:
            if key not in value:
                self.fail(f"{path}.{key}", "missing")
        for key in value:
            if key not in required and key not in optional:
                self.fail(f"{path}.{key}", "unknown field")
        return value

    def list_at(self, value: Any, path: str) -> list:
        if not isinstance(value, list):
            self.fail(path, "expected a list")
        return value

    def int_at(self, value: Any, path: str, minimum: int = 0) -> int:
        if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
            self.fail(path, f"expected an integer >= {minimum}")
        return value

    def str_at(self, value: Any, path: str) -> str:
        if not isinstance(value, str) or not value:
            self.fail(path, "expected a non-empty string")
        return value

    def ref(self, value: Any, path: str, known: Mapping | set, what: str) -> str:
        self.str_at(value, path)
        if value not in known:
            self.fail(path, f"unknown {what} {value!r}")
        return value


TOP_REQUIRED = ("format", "name", "seed", "key_seed", "max_ticks", "authorities", "profiles", "communities",
                "domains", "customers", "timeline")
TOP_OPTIONAL = ("network", "consensus", "gateway", "op_costs", "issuers", "acquirers", "assets", "fault_plan")


def load_scenario(source: Mapping[str, Any] | str | Path) -> Scenario:
    """Parse and validate a scenario from a dict, a JSON path or JSON text."""
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise E.ScenarioInvalid("$", f"cannot read scenario: {exc}") from None
        source = text
    if isinstance(source, str):
        try:
            source = json.loads(source, parse_float=lambda s: (_ for _ in ()).throw(ValueError(s)))
        except ValueError as exc:
            raise E.ScenarioInvalid("$", f"not valid integer-only JSON: {exc}") from None
    c = _Checker(source)
    top = c.obj_at(source, "$", TOP_REQUIRED, TOP_OPTIONAL)
    if top["format"] != FORMAT:
        c.fail("$.format", f"expected {FORMAT!r}")
    c.str_at(top["name"], "$.name")
    c.int_at(top["seed"], "$.seed")
    c.str_at(top["key_seed"], "$.key_seed")
    max_ticks = c.int_at(top["max_ticks"], "$.max_ticks", 1)
    net = c.obj_at(top.get("network", {}), "$.network", (), ("max_delay",))
    c.int_at(net.get("max_delay", 1), "$.network.max_delay", 1)
    cons = c.obj_at(top.get("consensus", {}), "$.consensus", (), ("block_interval", "view_timeout"))
    for key in cons:
        c.int_at(cons[key], f"$.consensus.{key}", 1)
    gw = c.obj_at(top.get("gateway", {}), "$.gateway", (), ("lock_ttl", "msg_timeout", "commit_window"))
    for key in gw:
        c.int_at(gw[key], f"$.gateway.{key}", 1)
    try:
        op_costs = OpCostTable.from_json(top.get("op_costs", {}))
    except E.CspError as exc:
        c.fail("$.op_costs", str(exc))

    authorities = set()
    for i, a in enumerate(c.list_at(top["authorities"], "$.authorities")):
        a = c.obj_at(a, f"$.authorities[{i}]", ("key_id", "holder"))
        authorities.add(c.str_at(a["key_id"], f"$.authorities[{i}].key_id"))

    profiles: dict[str, AssetProfile] = {}
    for i, p in enumerate(c.list_at(top["profiles"], "$.profiles")):
        path = f"$.profiles[{i}]"
        try:
            profile = AssetProfile.from_json(p)
        except E.CspError as exc:
            c.fail(path, str(exc))
        if profile.profile_id in profiles:
            c.fail(f"{path}.profile_id", "duplicate profile_id")
        c.ref(profile.authority_key_id, f"{path}.authority_key_id", authorities, "authority key")
        profiles[profile.profile_id] = profile

    communities: dict[str, dict] = {}
    for i, cm in enumerate(c.list_at(top["communities"], "$.communities")):
        path = f"$.communities[{i}]"
        c.obj_at(cm, path, ("community_id", "contract_service_id", "member_csps", "min_csps", "max_csps",
                            "min_nodes_per_csp", "duration_commitment", "operating_rules_hash", "fee_schedule",
                            "revenue_weights"))
        cid = c.str_at(cm["community_id"], f"{path}.community_id")
        if cid in communities:
            c.fail(f"{path}.community_id", "duplicate community")
        fs = c.obj_at(cm["fee_schedule"], f"{path}.fee_schedule", ("tiers",), ("assignment",))
        for j, t in enumerate(c.list_at(fs["tiers"], f"{path}.fee_schedule.tiers")):
            t = c.obj_at(t, f"{path}.fee_schedule.tiers[{j}]",
                         ("name", "monthly_included_invocations", "per_extra_invocation_fee"))
            c.int_at(t["monthly_included_invocations"], f"{path}.fee_schedule.tiers[{j}].monthly_included_invocations")
            c.int_at(t["per_extra_invocation_fee"], f"{path}.fee_schedule.tiers[{j}].per_extra_invocation_fee")
        weights = c.list_at(cm["revenue_weights"], f"{path}.revenue_weights")
        if len(weights) != 2 or not all(isinstance(w, list) and len(w) == 2 for w in weights):
            c.fail(f"{path}.revenue_weights", "expected [[num, den], [num, den]]")
        communities[cid] = cm

    domains: dict[str, DomainSpec] = {}
    node_owner: dict[str, str] = {}
    for i, d in enumerate(c.list_at(top["domains"], "$.domains")):
        path = f"$.domains[{i}]"
        c.obj_at(d, path, ("domain_id", "community_id", "nodes", "gateway_nodes", "protocols",
                           "supported_profiles", "admitted_profiles", "jurisdiction"))
        did = c.str_at(d["domain_id"], f"{path}.domain_id")
        if did in domains:
            c.fail(f"{path}.domain_id", "duplicate domain")
        cid = c.ref(d["community_id"], f"{path}.community_id", communities, "community")
        node_ids = []
        for j, n in enumerate(c.list_at(d["nodes"], f"{path}.nodes")):
            n = c.obj_at(n, f"{path}.nodes[{j}]", ("node_id", "csp_id", "stack_tag"))
            nid = c.str_at(n["node_id"], f"{path}.nodes[{j}].node_id")
            if nid in node_ids:
                c.fail(f"{path}.nodes[{j}].node_id", "duplicate node in roster")
            c.ref(n["csp_id"], f"{path}.nodes[{j}].csp_id", set(communities[cid]["member_csps"]) | {n["csp_id"]},
                  "CSP")
            node_ids.append(nid)
            node_owner.setdefault(nid, did)
        if not node_ids:
            c.fail(f"{path}.nodes", "a domain needs at least one node")
        gws = c.list_at(d["gateway_nodes"], f"{path}.gateway_nodes")
        if not gws:
            c.fail(f"{path}.gateway_nodes", "at least one gateway-capable node is required")
        for j, g in enumerate(gws):
            c.ref(g, f"{path}.gateway_nodes[{j}]", set(node_ids), "node")
        protocols = set()
        for j, pr in enumerate(c.list_at(d["protocols"], f"{path}.protocols")):
            if not (isinstance(pr, list) and len(pr) == 2 and isinstance(pr[0], str) and isinstance(pr[1], int)):
                c.fail(f"{path}.protocols[{j}]", "expected [name, version]")
            protocols.add((pr[0], pr[1]))
        if not protocols:
            c.fail(f"{path}.protocols", "at least one protocol is required")
        for key in ("supported_profiles", "admitted_profiles"):
            for j, pid in enumerate(c.list_at(d[key], f"{path}.{key}")):
                c.ref(pid, f"{path}.{key}[{j}]", profiles, "profile")
        jur = c.obj_at(d["jurisdiction"], f"{path}.jurisdiction", ("code", "permitted_profiles", "permitted_asset_codes"))
        for j, pid in enumerate(c.list_at(jur["permitted_profiles"], f"{path}.jurisdiction.permitted_profiles")):
            c.ref(pid, f"{path}.jurisdiction.permitted_profiles[{j}]", profiles, "profile")
        c.list_at(jur["permitted_asset_codes"], f"{path}.jurisdiction.permitted_asset_codes")
        domains[did] = DomainSpec(did, cid, tuple(d["nodes"]), tuple(gws), frozenset(protocols),
                                  tuple(d["supported_profiles"]), tuple(d["admitted_profiles"]), jur)

    customers: dict[str, dict] = {}
    key_ids: set[str] = set()
    assignment: dict[str, dict[str, str]] = {}
    for i, cu in enumerate(c.list_at(top["customers"], "$.customers")):
        path = f"$.customers[{i}]"
        c.obj_at(cu, path, ("customer_id", "key_id", "domain_id", "csp_id", "tier"))
        kid = c.str_at(cu["key_id"], f"{path}.key_id")
        if kid in key_ids:
            c.fail(f"{path}.key_id", "duplicate key id")
        if any(o["customer_id"] == cu["customer_id"] for o in customers.values()):
            c.fail(f"{path}.customer_id", "a customer belongs to exactly one CSP and domain")
        did = c.ref(cu["domain_id"], f"{path}.domain_id", domains, "domain")
        c.ref(cu["csp_id"], f"{path}.csp_id", set(domains[did].csps), "CSP")
        cm = communities[domains[did].community_id]
        tiers = {t["name"] for t in cm["fee_schedule"]["tiers"]}
        c.ref(cu["tier"], f"{path}.tier", tiers, "tier")
        assignment.setdefault(cm["community_id"], {})[cu["customer_id"]] = cu["tier"]
        key_ids.add(kid)
        customers[kid] = cu

    parsed_communities = {}
    for cid, cm in communities.items():
        try:
            parsed_communities[cid] = CommunityConfig.from_json(cm, assignment.get(cid, {}))
        except (E.CspError, ZeroDivisionError, TypeError, ValueError) as exc:
            c.fail(f"$.communities[{list(communities).index(cid)}]", str(exc))

    issuers = {}
    for i, iss in enumerate(top.get("issuers", [])):
        iss = c.obj_at(iss, f"$.issuers[{i}]", ("issuer_id", "authority"))
        issuers[c.str_at(iss["issuer_id"], f"$.issuers[{i}].issuer_id")] = iss
    acquirers = {}
    for i, acq in enumerate(top.get("acquirers", [])):
        acq = c.obj_at(acq, f"$.acquirers[{i}]", ("acquirer_id",))
        acquirers[c.str_at(acq["acquirer_id"], f"$.acquirers[{i}].acquirer_id")] = acq

    asset_ids: set[tuple[str, str]] = set()
    for i, a in enumerate(top.get("assets", [])):
        path = f"$.assets[{i}]"
        c.obj_at(a, path, ("asset_id", "domain_id", "profile_id", "owner"))
        did = c.ref(a["domain_id"], f"{path}.domain_id", domains, "domain")
        c.ref(a["profile_id"], f"{path}.profile_id", set(domains[did].admitted_profiles), "admitted profile")
        owner = c.ref(a["owner"], f"{path}.owner", customers, "customer")
        if customers[owner]["domain_id"] != did:
            c.fail(f"{path}.owner", f"customer {owner!r} is not enrolled in {did}")
        if (did, a["asset_id"]) in asset_ids:
            c.fail(f"{path}.asset_id", "duplicate asset id")
        asset_ids.add((did, c.str_at(a["asset_id"], f"{path}.asset_id")))

    all_nodes = set(node_owner)
    sessions: set[str] = set()
    claims: set[str] = set()
    last_tick = 0
    for i, ev in enumerate(c.list_at(top["timeline"], "$.timeline")):
        path = f"$.timeline[{i}]"
        if not isinstance(ev, dict):
            c.fail(path, "expected an object")
        kind = ev.get("type")
        if kind not in EVENT_TYPES:
            c.fail(f"{path}.type", f"expected one of {', '.join(EVENT_TYPES)}")
        tick = c.int_at(ev.get("tick"), f"{path}.tick", 1)
        if tick > max_ticks:
            c.fail(f"{path}.tick", f"tick {tick} beyond max_ticks {max_ticks}")
        if tick < last_tick:
            c.fail(f"{path}.tick", "timeline must be ordered by tick")
        last_tick = tick
        if kind == "tx":
            c.obj_at(ev, path, ("tick", "type", "domain_id", "kind", "signer", "payload"), ("tx_id",))
            c.ref(ev["domain_id"], f"{path}.domain_id", domains, "domain")
            try:
                tx_kind = TxKind(ev["kind"])
            except ValueError:
                c.fail(f"{path}.kind", f"unknown tx kind {ev['kind']!r}")
            c.str_at(ev["signer"], f"{path}.signer")
            payload = c.obj_at(ev["payload"], f"{path}.payload", (), PAYLOAD_FIELDS[tx_kind] + ("expiry_in",))
            del payload
        elif kind == "transfer":
            c.obj_at(ev, path, ("tick", "type", "session_id", "asset_id", "from", "to", "source_domain",
                                "dest_domain"))
            sid = c.str_at(ev["session_id"], f"{path}.session_id")
            if sid in sessions or ":" in sid:
                c.fail(f"{path}.session_id", "session ids must be unique and contain no ':'")
            sessions.add(sid)
            src = c.ref(ev["source_domain"], f"{path}.source_domain", domains, "domain")
            dst = c.ref(ev["dest_domain"], f"{path}.dest_domain", domains, "domain")
            if src == dst:
                c.fail(f"{path}.dest_domain", "transfer must cross domains")
            c.ref(ev["from"], f"{path}.from", customers, "customer")
            c.ref(ev["to"], f"{path}.to", customers, "customer")
            c.str_at(ev["asset_id"], f"{path}.asset_id")
        elif kind == "issue":
            c.obj_at(ev, path, ("tick", "type", "issuer_id", "claim_id", "profile_id", "external_reference",
                                "customer", "domain_id"))
            c.ref(ev["issuer_id"], f"{path}.issuer_id", issuers, "issuer")
            c.ref(ev["profile_id"], f"{path}.profile_id", profiles, "profile")
            c.ref(ev["customer"], f"{path}.customer", customers, "customer")
            c.ref(ev["domain_id"], f"{path}.domain_id", domains, "domain")
            cid = c.str_at(ev["claim_id"], f"{path}.claim_id")
            if cid in claims:
                c.fail(f"{path}.claim_id", "duplicate claim id")
            claims.add(cid)
        elif kind == "redeem":
            c.obj_at(ev, path, ("tick", "type", "acquirer_id"), ("session_id", "domain_id", "egress_tx_id"))
            c.ref(ev["acquirer_id"], f"{path}.acquirer_id", acquirers, "acquirer")
            if "session_id" in ev:
                c.ref(ev["session_id"], f"{path}.session_id", sessions, "session")
            elif "egress_tx_id" in ev and "domain_id" in ev:
                c.ref(ev["domain_id"], f"{path}.domain_id", domains, "domain")
            else:
                c.fail(path, "redeem needs session_id or domain_id plus egress_tx_id")
        else:
            c.obj_at(ev, path, ("tick", "type", "issuer_id", "acquirer_id"))
            c.ref(ev["issuer_id"], f"{path}.issuer_id", issuers, "issuer")
            c.ref(ev["acquirer_id"], f"{path}.acquirer_id", acquirers, "acquirer")

    try:
        plan = FaultPlan.from_json(top.get("fault_plan", {}))
        plan.validate()
    except (E.CspError, KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        c.fail("$.fault_plan", f"{type(exc).__name__}: {exc}")
    for i, p in enumerate(plan.partitions):
        for side in (p.side_a, p.side_b):
            for node in side:
                if node not in all_nodes:
                    c.fail(f"$.fault_plan.partitions[{i}]", f"unknown node {node!r}")
    for i, cr in enumerate(plan.crashes):
        c.ref(cr.node, f"$.fault_plan.crashes[{i}].node", all_nodes, "node")
    for i, g in enumerate(plan.gateway_crashes):
        c.ref(g.node, f"$.fault_plan.gateway_crashes[{i}].node", all_nodes, "node")
        if g.phase not in GATEWAY_PHASES:
            c.fail(f"$.fault_plan.gateway_crashes[{i}].phase", f"unknown phase {g.phase!r}")

    return Scenario(source, profiles, parsed_communities, domains, customers, plan, op_costs)


def bundled_scenario_path(name: str) -> Path:
    return Path(str(resources.files("cspsim") / "scenarios" / f"{name}.json"))


def bundled_scenarios() -> list[str]:
    folder = resources.files("cspsim") / "scenarios"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


# generator

_STACKS = ("go-ledger", "rust-ledger", "java-ledger", "cpp-ledger")
_RULES_HASH = sha256_hex(b"cspsim reference operating rules v1")


def _profile(pid: str, code: str, denomination: str, authority: str, issuer: str) -> dict:
    return {
        "profile_id": pid,
        "asset_code": code,
        "issuing_authority": issuer,
        "denomination": denomination,
        "issue_date": 19000,
        "circulation_systems": ["cspsim-ledger"],
        "jurisdictions": ["J1", "J2"],
        "validation_urls": [f"https://registry.example/{pid}"],
        "authority_key_id": authority,
    }


def gen_scenario(seed: int, domains: int = 2, *, nodes_per_csp: int = 2, csps_per_domain: int = 2,
                 transfers: int = 1, drop_rate: Fraction | None = None, partitions: int | None = None,
                 gateway_crash: bool | None = None, node_crashes: int | None = None,
                 double_spend: bool = True, max_ticks: int = 3000) -> dict:
    """Random but valid scenario; identical arguments give an identical document.

    Unset fault knobs are drawn from the seed: drop rate up to 3/10, up to
    two partitions, an optional gateway crash at a random phase and up to
    one follower crash per domain (never more than the domain tolerates).
    """
    if domains < 2:
        raise ValueError("need at least two domains for transfers")
    rng = XorShift64Star(seed)
    domain_ids = [f"CD{i + 1}" for i in range(domains)]
    authority = "pa-1"
    profiles = [_profile("P1", "USDX", "1 unit", authority, "Issuer One")]
    doms, comms, customers, assets, rosters = [], [], [], [], {}
    for d_index, did in enumerate(domain_ids):
        csps = [f"{did.lower()}-csp{j + 1}" for j in range(csps_per_domain)]
        nodes = []
        for j, csp in enumerate(csps):
            for k in range(nodes_per_csp):
                nid = f"{did.lower()}-n{j * nodes_per_csp + k + 1}"
                nodes.append({"node_id": nid, "csp_id": csp, "stack_tag": _STACKS[rng.below(len(_STACKS))]})
        rosters[did] = [n["node_id"] for n in nodes]
        comms.append({
            "community_id": f"C{d_index + 1}",
            "contract_service_id": did,
            "member_csps": csps,
            "min_csps": 2,
            "max_csps": 5,
            "min_nodes_per_csp": nodes_per_csp,
            "duration_commitment": 100000,
            "operating_rules_hash": _RULES_HASH,
            "fee_schedule": {"tiers": [{"name": "basic", "monthly_included_invocations": 3,
                                        "per_extra_invocation_fee": 2}]},
            "revenue_weights": [[1, 2], [1, 2]],
        })
        doms.append({
            "domain_id": did,
            "community_id": f"C{d_index + 1}",
            "nodes": nodes,
            "gateway_nodes": [nodes[0]["node_id"], nodes[-1]["node_id"]],
            "protocols": [["odtp", 1], ["odtp", 2]] if rng.below(2) else [["odtp", 1]],
            "supported_profiles": ["P1"],
            "admitted_profiles": ["P1"],
            "jurisdiction": {"code": f"J{d_index + 1}", "permitted_profiles": [], "permitted_asset_codes": ["USDX"]},
        })
        for c_index, name in enumerate(("alice", "bob", "carol")):
            kid = f"{name}@{did.lower()}"
            customers.append({"customer_id": kid, "key_id": kid, "domain_id": did,
                              "csp_id": csps[c_index % len(csps)], "tier": "basic"})
        for a in range(transfers):
            assets.append({"asset_id": f"A{a + 1}", "domain_id": did, "profile_id": "P1",
                           "owner": f"alice@{did.lower()}"})

    timeline = []
    for t in range(transfers):
        src = domain_ids[rng.below(domains)]
        dst = domain_ids[(domain_ids.index(src) + 1 + rng.below(domains - 1)) % domains]
        start = 1 + rng.below(30)
        sid = f"s{t + 1}"
        timeline.append({"tick": start, "type": "transfer", "session_id": sid, "asset_id": f"A{t + 1}",
                         "from": f"alice@{src.lower()}", "to": f"bob@{dst.lower()}", "source_domain": src,
                         "dest_domain": dst})
        if double_spend:
            for _ in range(1 + rng.below(3)):
                timeline.append({"tick": start + rng.below(120), "type": "tx", "domain_id": src,
                                 "kind": "TRANSFER", "signer": f"alice@{src.lower()}",
                                 "payload": {"asset_id": f"A{t + 1}", "to_key_id": f"carol@{src.lower()}"}})
            if rng.below(3) == 0:
                other = domain_ids[(domain_ids.index(src) + 1) % domains]
                timeline.append({"tick": start + rng.below(10), "type": "transfer", "session_id": f"{sid}x",
                                 "asset_id": f"A{t + 1}", "from": f"alice@{src.lower()}",
                                 "to": f"carol@{other.lower()}", "source_domain": src, "dest_domain": other})
    timeline.sort(key=lambda e: e["tick"])
    for i, ev in enumerate(timeline):
        if ev["type"] == "tx":
            ev["tx_id"] = f"ds{i}"

    if drop_rate is None:
        drop_rate = Fraction(rng.below(4), 10)
    if partitions is None:
        partitions = rng.below(3)
    if gateway_crash is None:
        gateway_crash = rng.below(2) == 1
    if node_crashes is None:
        node_crashes = rng.below(2)
    parts = []
    for _ in range(partitions):
        did = domain_ids[rng.below(domains)]
        nodes = rosters[did]
        if rng.below(2):
            # isolate one node from the rest of its domain
            victim = nodes[rng.below(len(nodes))]
            side_a, side_b = [victim], [n for n in nodes if n != victim]
        else:
            # cut the two gateways apart
            other = domain_ids[(domain_ids.index(did) + 1) % domains]
            side_a, side_b = [nodes[0]], [rosters[other][0]]
        start = rng.below(150)
        parts.append({"side_a": side_a, "side_b": side_b, "start_tick": start,
                      "end_tick": start + 10 + rng.below(90)})
    crashes = []
    for _ in range(node_crashes):
        did = domain_ids[rng.below(domains)]
        nodes = rosters[did]
        victim = nodes[1 + rng.below(len(nodes) - 2)] if len(nodes) > 2 else nodes[-1]
        if any(c["node"] == victim for c in crashes):
            continue
        at = rng.below(150)
        crashes.append({"node": victim, "crash_tick": at, "restart_tick": at + 5 + rng.below(100)})
    gw_crashes = []
    if gateway_crash:
        did = domain_ids[rng.below(domains)]
        gw_crashes.append({"node": rosters[did][0], "phase": GATEWAY_PHASES[rng.below(len(GATEWAY_PHASES))],
                           "downtime": 5 + rng.below(60), "session_id": None})

    return {
        "format": FORMAT,
        "name": f"generated-{seed}",
        "seed": seed,
        "key_seed": "gen",
        "max_ticks": max_ticks,
        "network": {"max_delay": 1 + rng.below(3)},
        "consensus": {"block_interval": 5, "view_timeout": 10},
        "gateway": {"lock_ttl": 100, "msg_timeout": 10, "commit_window": 80},
        "authorities": [{"key_id": authority, "holder": "Profile Authority One"}],
        "profiles": profiles,
        "communities": comms,
        "domains": doms,
        "customers": customers,
        "issuers": [{"issuer_id": "issuer-1", "authority": "Issuer One"}],
        "acquirers": [{"acquirer_id": "acquirer-1"}],
        "assets": assets,
        "timeline": timeline,
        "fault_plan": {
            "drop_rate": [drop_rate.numerator, drop_rate.denominator],
            "partitions": parts,
            "crashes": crashes,
            "gateway_crashes": gw_crashes,
        },
    }
