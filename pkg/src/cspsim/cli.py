"""Command-line entry point: ``cspsim run | verify | profile | gen-scenario | scenarios``.

Exit codes: 0 success, 1 usage or parse error, 2 invariant or
verification failure. Set ``CSPSIM_LOG`` (DEBUG, INFO, WARNING...) for
diagnostic logging on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import errors as E
from .canonical import canonical_json
from .crypto import derive_keypair
from .model import AssetProfile, HolderKind, KeyRecord, SignedAssetProfile
from .profiles import sign_profile, verify_profile
from .report import build_report, failures, report_bytes, verify_report
from .scenario import bundled_scenario_path, bundled_scenarios, gen_scenario, load_scenario
from .world import World

OK, USAGE, FAILED = 0, 1, 2


def _scenario_path(arg: str) -> Path:
    path = Path(arg)
    if not path.exists() and arg in bundled_scenarios():
        return bundled_scenario_path(arg)
    return path


def _write(data: bytes, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(path).write_bytes(data)


def cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(_scenario_path(args.scenario))
    world = World(scenario, seed=args.seed, keep_trace=args.trace is not None).run()
    doc = build_report(world)
    if args.trace is not None:
        Path(args.trace).write_bytes(b"".join(line + b"\n" for line in world.net.trace))
    _write(report_bytes(doc), args.report)
    fails = failures(doc["invariants"])
    sessions = ", ".join(f"{s['session_id']}={s['source_phase']}" for s in doc["sessions"]) or "none"
    print(f"{scenario.name}: ticks={doc['ticks']} quiescent={str(doc['quiescent']).lower()} "
          f"sessions: {sessions}", file=sys.stderr)
    for f in fails:
        print(f"FAIL {f}", file=sys.stderr)
    return FAILED if fails else OK


def cmd_verify(args: argparse.Namespace) -> int:
    path = Path(args.report)
    if not path.exists():
        print(f"error: no such report {path}", file=sys.stderr)
        return USAGE
    try:
        fails = verify_report(path)
    except E.ReportCorrupt as exc:
        print(f"FAIL report: {exc}")
        return FAILED
    for f in fails:
        print(f"FAIL {f}")
    if not fails:
        print("ok")
    return FAILED if fails else OK


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise E.FieldInvalid(f"cannot read {path}: {exc}") from None


def _authority_registry(args: argparse.Namespace, key_id: str) -> dict[str, KeyRecord]:
    if args.authorities:
        return {r["key_id"]: KeyRecord.from_json(r) for r in _read_json(args.authorities)}
    pair = derive_keypair(args.key_seed, key_id)
    return {key_id: KeyRecord(key_id, pair.public_key, HolderKind.PROFILE_AUTHORITY)}


def cmd_profile(args: argparse.Namespace) -> int:
    obj = _read_json(args.file)
    if args.action == "sign":
        profile = AssetProfile.from_json(obj)
        registry = _authority_registry(args, profile.authority_key_id)
        secret = derive_keypair(args.key_seed, profile.authority_key_id).secret
        sp = sign_profile(profile, secret, registry)
        _write(canonical_json(sp.to_json()) + b"\n", args.out)
        return OK
    sp = SignedAssetProfile.from_json(obj)
    registry = _authority_registry(args, sp.profile.authority_key_id)
    try:
        verify_profile(sp, registry)
    except (E.HashMismatch, E.KeyUnknown, E.KeyRevoked, E.SignatureInvalid) as exc:
        print(f"FAIL {type(exc).__name__}: {exc}")
        return FAILED
    print(f"ok {sp.profile_hash}")
    return OK


def cmd_gen(args: argparse.Namespace) -> int:
    doc = gen_scenario(args.seed, args.domains, transfers=args.transfers)
    _write(json.dumps(doc, indent=2, sort_keys=True).encode() + b"\n", args.out)
    return OK


def cmd_scenarios(args: argparse.Namespace) -> int:
    for name in bundled_scenarios():
        print(name)
    return OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cspsim", description="Deterministic CSP multi-domain ledger simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario (file path or bundled name) and emit a report")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int, default=None, help="override the scenario's network seed")
    run.add_argument("--report", default=None, help="report path (default: stdout)")
    run.add_argument("--trace", default=None, help="write the event trace as newline-delimited JSON")
    run.set_defaults(func=cmd_run)

    verify = sub.add_parser("verify", help="re-audit a report from its artifacts")
    verify.add_argument("report")
    verify.set_defaults(func=cmd_verify)

    profile = sub.add_parser("profile", help="sign or verify an asset profile")
    profile.add_argument("action", choices=("sign", "verify"))
    profile.add_argument("file")
    profile.add_argument("--key-seed", default="cspsim", help="seed the authority key is derived from")
    profile.add_argument("--authorities", default=None, help="JSON list of authority key records")
    profile.add_argument("--out", default=None)
    profile.set_defaults(func=cmd_profile)

    gen = sub.add_parser("gen-scenario", help="emit a seeded random scenario")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--domains", type=int, default=2)
    gen.add_argument("--transfers", type=int, default=1)
    gen.add_argument("--out", default=None)
    gen.set_defaults(func=cmd_gen)

    scen = sub.add_parser("scenarios", help="list bundled scenarios")
    scen.set_defaults(func=cmd_scenarios)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("CSPSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else OK
    try:
        return args.func(args)
    except E.ScenarioInvalid as exc:
        print(f"error: scenario invalid: {exc}", file=sys.stderr)
        return USAGE
    except (E.FieldInvalid, E.KeyInvalid, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
