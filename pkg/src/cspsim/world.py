"""The simulation driver: builds every domain from a scenario and runs the tick loop.

Each tick does, in order: crash/restart transitions, timeline events due
at this tick, message deliveries, consensus timers (every
``block_interval`` ticks), gateway ticks, deferred actions and the
quiescence check. Everything iterates in a fixed order, so a (scenario,
seed) pair always produces the same trace.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable

from . import errors as E
from .canonical import ZERO_HASH, b64encode
from .consensus import BACKGROUND_KINDS, ConsensusConfig, ConsensusNode, StepResult
from .crypto import KeyPair, derive_keypair
from .gateway import (
    CrashNow,
    Gateway,
    GatewayCapabilities,
    GatewayConfig,
    GatewayContext,
    GatewayOutput,
    LogRecord,
    Phase as GwPhase,
    Role,
    SessionParams,
    TransferReceipt,
)
from .issuance import (
    Acquirer,
    ClaimRegistry,
    EgressProof,
    Issuer,
    ValueClaim,
    confirm,
    issue_asset,
    redeem_asset,
    settle,
)
from .ledger import Ledger, LedgerBlock, append_block, build_block, vote_message
from .model import HolderKind, Jurisdiction, KeyRecord, SignedAssetProfile
from .primitives import PAYLOAD_FIELDS, PrimitiveTx, TxKind, make_tx
from .profiles import sign_profile
from .roster import NodeRoster, RosterNode
from .scenario import Scenario, load_scenario
from .simnet import Network

log = logging.getLogger("cspsim")

GW_PREFIX = "gw:"


def csp_key_id(csp_id: str) -> str:
    return f"csp:{csp_id}"


def node_key_id(node_id: str) -> str:
    return f"node:{node_id}"


@dataclass
class EventOutcome:
    index: int
    tick: int
    kind: str
    status: str = "pending"
    detail: str = ""

    def to_json(self) -> dict:
        return {"index": self.index, "tick": self.tick, "type": self.kind, "status": self.status,
                "detail": self.detail}


class World:
    """One simulation instance. Single-threaded; shares nothing with other instances."""

    def __init__(self, scenario: Scenario | dict, seed: int | None = None, keep_trace: bool = False):
        if not isinstance(scenario, Scenario):
            scenario = load_scenario(scenario)
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        raw = scenario.raw
        cons = raw.get("consensus", {})
        self.cons_cfg = ConsensusConfig(block_interval=cons.get("block_interval", 5),
                                        view_timeout=cons.get("view_timeout", 10))
        gw = raw.get("gateway", {})
        try:
            self.gw_cfg = GatewayConfig(gw.get("lock_ttl", 100), gw.get("msg_timeout", 10),
                                        gw.get("commit_window", 80), self.cons_cfg.block_interval)
        except E.FieldInvalid as exc:
            raise E.ScenarioInvalid("$.gateway", str(exc)) from None
        self.net = Network(self.seed, raw.get("network", {}).get("max_delay", 1), scenario.fault_plan, keep_trace)
        self.now = 0
        self.quiescent = False
        self._fired_gateway_crashes: set[int] = set()
        self._crash_downtime: int | None = None
        self._keys: dict[str, KeyPair] = {}

        self._build_trust()
        self._build_domains()
        self._build_gateways()

        self.registry = ClaimRegistry()
        self.issuers = {i["issuer_id"]: Issuer(i["issuer_id"], i["authority"]) for i in raw.get("issuers", [])}
        self.acquirers = {a["acquirer_id"]: Acquirer(a["acquirer_id"]) for a in raw.get("acquirers", [])}
        self.timeline = list(raw["timeline"])
        self.outcomes = [EventOutcome(i, ev["tick"], ev["type"]) for i, ev in enumerate(self.timeline)]
        self._next_event = 0
        self._deferred: list[int] = []
        self._pending_claims: list[str] = []
        self.transfers: dict[str, dict] = {}
        self.down: set[str] = set()
        self.stats = {"messages": 0, "gateway_rejected": 0, "isolation_rejected": 0, "lost_submissions": 0}

    # setup

    def key(self, key_id: str) -> KeyPair:
        pair = self._keys.get(key_id)
        if pair is None:
            pair = self._keys[key_id] = derive_keypair(self.scenario.key_seed, key_id)
        return pair

    def _build_trust(self) -> None:
        raw = self.scenario.raw
        self.authorities = {
            a["key_id"]: KeyRecord(a["key_id"], self.key(a["key_id"]).public_key, HolderKind.PROFILE_AUTHORITY,
                                   holder=a["holder"])
            for a in raw["authorities"]
        }
        self.signed_profiles: dict[str, SignedAssetProfile] = {}
        for pid, profile in self.scenario.profiles.items():
            try:
                sp = sign_profile(profile, self.key(profile.authority_key_id).secret, self.authorities)
            except E.CspError as exc:
                raise E.ScenarioInvalid(f"$.profiles[{pid}]", str(exc)) from None
            self.signed_profiles[pid] = sp
        self.profile_by_hash = {sp.profile_hash: sp for sp in self.signed_profiles.values()}

    def _build_domains(self) -> None:
        self.rosters: dict[str, NodeRoster] = {}
        self.replicas: dict[str, dict[str, ConsensusNode]] = {}
        self.phys_nodes: list[str] = []
        self.commit_ticks: dict[str, list[int]] = {}
        for did, spec in self.scenario.domains.items():
            roster = NodeRoster(did, tuple(
                RosterNode(n["node_id"], n["csp_id"], self.key(node_key_id(n["node_id"])).public_key, n["stack_tag"])
                for n in spec.nodes
            ))
            self.rosters[did] = roster
            genesis = self._genesis(did, roster)
            for node in roster.node_ids:
                ledger = Ledger(did, roster, self.authorities)
                append_block(ledger, genesis)
                replica = ConsensusNode(node, self.key(node_key_id(node)), roster, ledger, self.cons_cfg)
                if node not in self.replicas:
                    self.replicas[node] = {}
                    self.phys_nodes.append(node)
                self.replicas[node][did] = replica
            self.commit_ticks[did] = [0]

    def _key_op(self, did: str, signer: KeyPair, tx_id: str, kind: HolderKind, key_id: str, holder: str) -> PrimitiveTx:
        payload = {"op": "REGISTER", "holder_kind": kind.value, "key_id": key_id,
                   "public_key": b64encode(self.key(key_id).public_key), "holder": holder,
                   "new_key_id": None, "new_public_key": None}
        return make_tx(did, TxKind.KEY_OP, payload, signer, tx_id)

    def _genesis(self, did: str, roster: NodeRoster) -> LedgerBlock:
        """Block 0: CSP keys, customer keys, admitted asset types and initial assets."""
        spec = self.scenario.domains[did]
        raw = self.scenario.raw
        txs = []
        for csp in spec.csps:
            kid = csp_key_id(csp)
            txs.append(self._key_op(did, self.key(kid), f"genesis:key:{kid}", HolderKind.CSP, kid, csp))
        for cu in raw["customers"]:
            if cu["domain_id"] == did:
                sponsor = self.key(csp_key_id(cu["csp_id"]))
                txs.append(self._key_op(did, sponsor, f"genesis:key:{cu['key_id']}", HolderKind.CUSTOMER,
                                        cu["key_id"], cu["customer_id"]))
        founder = self.key(csp_key_id(spec.csps[0]))
        for pid in spec.admitted_profiles:
            sp = self.signed_profiles[pid]
            payload = {"op": "ADD", "profile_hash": sp.profile_hash, "signed_profile": sp.to_json()}
            txs.append(make_tx(did, TxKind.ASSET_TYPE_OP, payload, founder, f"genesis:type:{pid}"))
        for a in raw.get("assets", []):
            if a["domain_id"] == did:
                owner = self.scenario.customers[a["owner"]]
                payload = {"profile_hash": self.signed_profiles[a["profile_id"]].profile_hash,
                           "asset_id": a["asset_id"], "owner_key_id": a["owner"], "session_id": ""}
                txs.append(make_tx(did, TxKind.INGRESS, payload, self.key(csp_key_id(owner["csp_id"])),
                                   f"genesis:asset:{a['asset_id']}"))
        block = build_block(0, ZERO_HASH, txs, roster.node_ids[0])
        message = vote_message(did, block.block_hash)
        return block.with_cert((n, self.key(node_key_id(n)).sign(message)) for n in roster.node_ids)

    def _build_gateways(self) -> None:
        self.gateways: dict[str, Gateway] = {}
        self.gateway_of: dict[str, str] = {}
        directory: dict[str, tuple[str, bytes]] = {}
        for did, spec in self.scenario.domains.items():
            node = spec.gateway
            if node in self.gateway_of.values():
                raise E.ScenarioInvalid(f"$.domains[{did}].gateway_nodes", f"{node} already gateways another domain")
            self.gateway_of[did] = node
            csp = self.rosters[did].get(node).csp_id
            directory[node] = (csp_key_id(csp), self.key(csp_key_id(csp)).public_key)
        for did, spec in self.scenario.domains.items():
            node = self.gateway_of[did]
            jur = spec.jurisdiction
            caps = GatewayCapabilities(
                node, did, spec.protocols,
                frozenset(self.signed_profiles[p].profile_hash for p in spec.supported_profiles),
                Jurisdiction(jur["code"],
                             frozenset(self.signed_profiles[p].profile_hash for p in jur["permitted_profiles"]),
                             frozenset(jur["permitted_asset_codes"])),
            )
            ctx = GatewayContext(node, did, self.key(directory[node][0]), caps, self.replicas[node][did].ledger,
                                 directory, self.gw_cfg, self._crash_hook(node))
            self.gateways[node] = Gateway(ctx)
        self.directory = directory

    def _crash_hook(self, node: str) -> Callable[[LogRecord], None]:
        plan = self.scenario.fault_plan

        def hook(record: LogRecord) -> None:
            for i, gc in enumerate(plan.gateway_crashes):
                if i in self._fired_gateway_crashes or gc.node != node or gc.phase != record.phase.value:
                    continue
                if gc.session_id is not None and gc.session_id != record.session_id:
                    continue
                self._fired_gateway_crashes.add(i)
                self._crash_downtime = gc.downtime
                raise CrashNow(f"{node} after {record.phase.value} of {record.session_id}")

        return hook

    # views

    def ledger(self, did: str) -> Ledger:
        """The longest replica chain of a domain (ties go to roster order)."""
        best = None
        for node in self.rosters[did].node_ids:
            ledger = self.replicas[node][did].ledger
            if best is None or ledger.height > best.height:
                best = ledger
        return best

    def ledgers(self) -> dict[str, Ledger]:
        return {did: self.ledger(did) for did in self.rosters}

    def alive(self, node: str) -> bool:
        return node not in self.down

    # output plumbing

    def _send(self, src: str, dst: str, kind: str, payload: Any) -> None:
        self.stats["messages"] += 1
        self.net.schedule_send(src, dst, kind, payload, self.now)

    def _emit(self, node: str, did: str, res: StepResult) -> None:
        for dst, payload in res.messages:
            self._send(node, dst, payload["type"], payload)
        ticks = self.commit_ticks[did]
        for block in res.committed:
            if block.height == len(ticks):
                ticks.append(self.now)
                self.net.record("commit", domain=did, height=block.height, hash=block.block_hash,
                                txs=len(block.txs), tick=self.now)

    def _gw_call(self, node: str, fn: Callable[..., GatewayOutput], *args: Any) -> None:
        try:
            out = fn(*args)
        except CrashNow as exc:
            log.info("tick %d: gateway crash %s", self.now, exc)
            downtime, self._crash_downtime = self._crash_downtime, None
            self.net.crash_now(node, self.now, self.now + downtime)
            self._crash(node)
            return
        for dst, msg in out.messages:
            self._send(node, dst, GW_PREFIX + msg["type"], msg)
        gw = self.gateways[node]
        for tx in out.commands:
            replica = self.replicas[node][gw.ctx.domain_id]
            self._emit(node, gw.ctx.domain_id, replica.submit(tx, self.now))

    def _crash(self, node: str) -> None:
        self.down.add(node)
        for replica in self.replicas[node].values():
            replica.crash()
        if node in self.gateways:
            self.gateways[node].crash()

    def _restart(self, node: str) -> None:
        self.down.discard(node)
        self.net.record("restart", node=node, tick=self.now)
        for did, replica in self.replicas[node].items():
            self._emit(node, did, replica.restart(self.now))
        if node in self.gateways:
            self._gw_call(node, self.gateways[node].recover, self.now)

    def submit(self, did: str, tx: PrimitiveTx, preferred_csp: str | None = None) -> bool:
        """Hand a client transaction to a live node of ``did``, preferring the client's CSP."""
        roster = self.rosters[did]
        order = sorted(roster.nodes, key=lambda n: n.csp_id != preferred_csp)
        for rn in order:
            if self.alive(rn.node_id):
                self._emit(rn.node_id, did, self.replicas[rn.node_id][did].submit(tx, self.now))
                return True
        self.stats["lost_submissions"] += 1
        return False

    # timeline events

    def _csp_of_key(self, key_id: str) -> str | None:
        if key_id in self.scenario.customers:
            return self.scenario.customers[key_id]["csp_id"]
        if key_id.startswith("csp:"):
            return key_id[4:]
        return None

    def _run_event(self, index: int) -> None:
        ev = self.timeline[index]
        outcome = self.outcomes[index]
        try:
            done = getattr(self, "_ev_" + ev["type"])(index, ev)
        except E.CspError as exc:
            outcome.status, outcome.detail = type(exc).__name__, str(exc)
            return
        if done:
            outcome.status = "ok"
        elif index not in self._deferred:
            self._deferred.append(index)

    def _ev_tx(self, index: int, ev: dict) -> bool:
        did = ev["domain_id"]
        kind = TxKind(ev["kind"])
        payload = {name: None for name in PAYLOAD_FIELDS[kind]}
        payload.update(ev["payload"])
        if "expiry_in" in payload:
            payload["expiry_at"] = self.ledger(did).state.next_logical_time + payload.pop("expiry_in")
        if kind is TxKind.KEY_OP:
            if payload.get("public_key") is None and payload.get("key_id"):
                payload["public_key"] = b64encode(self.key(payload["key_id"]).public_key)
            if payload.get("new_public_key") is None and payload.get("new_key_id"):
                payload["new_public_key"] = b64encode(self.key(payload["new_key_id"]).public_key)
            if payload.get("holder") is None:
                payload["holder"] = ""
        if kind is TxKind.ESCROW_CREATE and payload.get("condition_tag") is None:
            payload["condition_tag"] = ""
        tx = make_tx(did, kind, payload, self.key(ev["signer"]), ev.get("tx_id") or f"ev{index}")
        if not self.submit(did, tx, self._csp_of_key(ev["signer"])):
            raise E.TxMissing(f"no live node of {did} accepted the transaction")
        return True

    def _ev_transfer(self, index: int, ev: dict) -> bool:
        src, dst = ev["source_domain"], ev["dest_domain"]
        sid = ev["session_id"]
        if sid not in self.transfers:
            self.transfers[sid] = {"session_id": sid, "source_domain": src, "dest_domain": dst,
                                   "asset_id": ev["asset_id"], "originator": ev["from"], "beneficiary": ev["to"],
                                   "started": None}
        node = self.gateway_of[src]
        if not self.alive(node):
            return False
        gw = self.gateways[node]
        ledger = gw.ctx.ledger
        asset = ledger.state.assets.get(ev["asset_id"])
        if asset is None:
            raise E.AssetUnknown(f"asset {ev['asset_id']} not on {src}")
        sp = self.profile_by_hash.get(asset.profile_hash)
        if sp is None:
            raise E.ProfileInvalid(f"no signed profile for {asset.profile_hash[:12]}")
        expiry = ledger.state.next_logical_time + self.gw_cfg.lock_blocks
        lock_payload = {"asset_id": ev["asset_id"], "beneficiary_key_id": gw.ctx.key.key_id, "expiry_at": expiry,
                        "condition_tag": sid}
        lock = make_tx(src, TxKind.ESCROW_CREATE, lock_payload, self.key(ev["from"]), f"{sid}:lock")
        params = SessionParams(sid, ev["from"], ev["to"], ev["asset_id"], sp, src, dst, node, self.gateway_of[dst],
                               lock)
        self.transfers[sid]["started"] = self.now
        self._gw_call(node, gw.start, params, self.now)
        return True

    def _ev_issue(self, index: int, ev: dict) -> bool:
        sp = self.signed_profiles[ev["profile_id"]]
        issuer = self.issuers[ev["issuer_id"]]
        self.registry.reserve(ValueClaim(ev["claim_id"], issuer.issuer_id, sp.profile_hash,
                                         ev["external_reference"]))
        request = issue_asset(issuer, sp, ev["claim_id"], ev["customer"], ev["domain_id"], self.registry,
                              self.authorities)
        csp = self.scenario.customers[ev["customer"]]["csp_id"]
        tx = request.to_tx(self.key(csp_key_id(csp)))
        if not self.submit(ev["domain_id"], tx, csp):
            raise E.TxMissing(f"no live node of {ev['domain_id']} accepted the ingress")
        self._pending_claims.append(ev["claim_id"])
        return True

    def _source_log_phase(self, sid: str) -> GwPhase | None:
        info = self.transfers.get(sid)
        if info is None:
            return None
        log_ = self.gateways[self.gateway_of[info["source_domain"]]].logs.get(sid)
        return None if log_ is None else log_.last_phase

    def _ev_redeem(self, index: int, ev: dict) -> bool:
        acquirer = self.acquirers[ev["acquirer_id"]]
        if "session_id" in ev:
            sid = ev["session_id"]
            info = self.transfers.get(sid)
            if info is None or info["started"] is None:
                if self.outcomes[self._transfer_event(sid)].status not in ("pending",):
                    raise E.ProofInvalid(f"session {sid} never started")
                return False
            phase = self._source_log_phase(sid)
            if phase is GwPhase.ABORTED:
                raise E.ProofInvalid(f"session {sid} aborted")
            if phase is not GwPhase.FINALIZED:
                return False
            gw = self.gateways[self.gateway_of[info["source_domain"]]]
            receipt = TransferReceipt.from_json(gw.logs[sid].find(GwPhase.FINALIZED).data["receipt"])
            redeem_asset(acquirer, receipt, self.registry, self.ledgers())
        else:
            redeem_asset(acquirer, EgressProof(ev["domain_id"], ev["egress_tx_id"]), self.registry, self.ledgers())
        return True

    def _transfer_event(self, sid: str) -> int:
        for i, ev in enumerate(self.timeline):
            if ev["type"] == "transfer" and ev["session_id"] == sid:
                return i
        raise KeyError(sid)

    def _ev_settle(self, index: int, ev: dict) -> bool:
        if any(self.timeline[i]["type"] == "redeem" for i in self._deferred if i < index):
            return False
        issuer, acquirer = self.issuers[ev["issuer_id"]], self.acquirers[ev["acquirer_id"]]
        ids = sorted(r.record_id for r in self.registry.records.values()
                     if r.issuer_id == issuer.issuer_id and r.acquirer_id == acquirer.acquirer_id)
        settle(issuer, acquirer, ids, self.registry)
        return True

    # main loop

    def _tick(self) -> None:
        now = self.now
        for node in self.phys_nodes:
            up = self.net.alive(node, now)
            if up and node in self.down:
                self._restart(node)
            elif not up and node not in self.down:
                self.net.record("crash_applied", node=node, tick=now)
                self._crash(node)

        while self._next_event < len(self.timeline) and self.timeline[self._next_event]["tick"] == now:
            self._run_event(self._next_event)
            self._next_event += 1

        for env in self.net.step(now):
            if not self.alive(env.dst):
                self.net.record("lost", id=env.msg_id, dst=env.dst, tick=now)
                continue
            if env.kind.startswith(GW_PREFIX):
                gw = self.gateways.get(env.dst)
                if gw is None:
                    self.stats["gateway_rejected"] += 1
                    continue
                self._gw_call(env.dst, gw.handle, env.payload, now)
                continue
            replicas = self.replicas[env.dst]
            did = env.payload.get("domain")
            replica = replicas.get(did) or next(iter(replicas.values()))
            try:
                res = replica.step(env.payload, now, env.src)
            except E.DomainMismatch:
                self.stats["isolation_rejected"] += 1
                continue
            self._emit(env.dst, replica.domain_id, res)

        if now % self.cons_cfg.block_interval == 0:
            for node in self.phys_nodes:
                if self.alive(node):
                    for did, replica in self.replicas[node].items():
                        self._emit(node, did, replica.step({"type": "TIMER"}, now))

        for node, gw in self.gateways.items():
            if self.alive(node):
                self._gw_call(node, gw.tick, now)

        for index in list(self._deferred):
            self._deferred.remove(index)
            self._run_event(index)

        for cid in list(self._pending_claims):
            request = self.registry.requests[cid]
            ledger = self.ledger(request.domain_id)
            if ledger.tx(f"issue:{cid}") is not None:
                confirm(self.registry, cid, ledger)
                self._pending_claims.remove(cid)

    def is_quiescent(self) -> bool:
        now = self.now
        if self._next_event < len(self.timeline) or self._deferred:
            return False
        if self.net.pending(ignore=BACKGROUND_KINDS):
            return False
        plan = self.scenario.fault_plan
        for c in (*plan.crashes, *self.net.extra_crashes):
            if c.crash_tick > now or (c.restart_tick is not None and c.restart_tick > now):
                return False
        for did, roster in self.rosters.items():
            heights = set()
            for node in roster.node_ids:
                if not self.alive(node):
                    continue
                replica = self.replicas[node][did]
                if replica.has_work():
                    return False
                heights.add(replica.ledger.height)
            if len(heights) > 1:
                return False
        return all(gw.settled() for node, gw in self.gateways.items() if self.alive(node))

    def run(self) -> World:
        """Run to quiescence or ``max_ticks``, whichever comes first."""
        limit = self.scenario.max_ticks
        while self.now < limit:
            self.now += 1
            self._tick()
            if self.is_quiescent():
                self.quiescent = True
                break
        self.net.record("end", tick=self.now, quiescent=self.quiescent)
        log.info("%s: stopped at tick %d (quiescent=%s)", self.scenario.name, self.now, self.quiescent)
        return self

    # summaries for the report

    def session_summaries(self) -> list[dict]:
        out = []
        for sid in sorted(self.transfers):
            info = dict(self.transfers[sid])
            for role, did in (("source", info["source_domain"]), ("dest", info["dest_domain"])):
                log_ = self.gateways[self.gateway_of[did]].logs.get(sid)
                phase = None if log_ is None else log_.last_phase
                info[f"{role}_phase"] = None if phase is None else phase.value
                reason = ""
                if log_ is not None and log_.find(GwPhase.ABORTED) is not None:
                    reason = log_.find(GwPhase.ABORTED).data.get("reason", "")
                info[f"{role}_abort_reason"] = reason
            out.append(info)
        return out

    def receipts(self) -> list[TransferReceipt]:
        out = []
        for node in sorted(self.gateways):
            gw = self.gateways[node]
            for sid in sorted(gw.logs):
                rec = gw.logs[sid].find(GwPhase.FINALIZED)
                if rec is not None and rec.role is Role.SOURCE:
                    out.append(TransferReceipt.from_json(rec.data["receipt"]))
        return out


def run_world(scenario: Scenario | dict, seed: int | None = None, keep_trace: bool = False) -> World:
    return World(scenario, seed, keep_trace).run()
