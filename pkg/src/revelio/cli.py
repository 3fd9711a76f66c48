"""Command-line entry points: revelio-sim, revelio-sp, revelio-attest."""

from __future__ import annotations

import argparse
import json
import sys
import time

from .fixtures import build_fixture_cases
from .fleet import SimulatedCA, SpNode, run_certificate_round
from .httpd import HttpKdsClient, HttpTransport, fetch_attestation
from .kds import KdsUnreachable
from .scenarios import SCENARIOS, run_scenario
from .verifier import TrustedRegistry, attest_domain, monitor_request, open_session
from .wire import UnreachableError


def sim_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="revelio-sim", description="Run adversary scenarios")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario")
    run_p.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--nodes", type=int, default=3)
    run_p.add_argument("--transcript-out", help="write the message transcript to this file")

    sub.add_parser("list", help="list scenario names")

    fix_p = sub.add_parser("export-fixtures", help="freeze verdict fixtures for other verifiers")
    fix_p.add_argument("--out", required=True)
    fix_p.add_argument("--seed", type=int, default=7)
    fix_p.add_argument("--nodes", type=int, default=3)

    args = parser.parse_args(argv)

    if args.command == "list":
        for name in sorted(SCENARIOS):
            print(name)
        return 0

    if args.command == "export-fixtures":
        doc = build_fixture_cases(seed=args.seed, n_nodes=args.nodes)
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
        print(f"wrote {len(doc['cases'])} cases to {args.out}")
        return 0

    report = run_scenario(args.scenario, args.seed, args.nodes)
    doc = report.to_json_dict()
    if args.transcript_out:
        # keep stdout compact; the transcript goes to its own file
        transcript = doc.pop("transcript")
        with open(args.transcript_out, "w", encoding="utf-8") as f:
            json.dump(transcript, f, indent=2, sort_keys=True)
            f.write("\n")
    json.dump(doc, sys.stdout, indent=2, sort_keys=True)
    print()
    return 0 if (args.scenario == "none") == (not doc["violations"]) else 1


def _read_lines(path: str) -> list[str]:
    with open(path, "r", encoding="utf-8") as f:
        return [line.strip() for line in f if line.strip() and not line.startswith("#")]


def sp_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="revelio-sp", description="Service-provider orchestration machine"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    round_p = sub.add_parser("run-round", help="attest the fleet and distribute a certificate")
    round_p.add_argument("--fleet", required=True,
                         help="comma-separated addr=url pairs (or bare URLs)")
    round_p.add_argument("--registry", required=True,
                         help="trusted registry file with the expected measurements")
    round_p.add_argument("--domain", required=True)
    round_p.add_argument("--kds-url", required=True)
    round_p.add_argument("--approved-chips", help="file of approved chip ids, hex per line")
    round_p.add_argument("--approved-ips", help="file of approved node addresses")

    args = parser.parse_args(argv)

    transport = HttpTransport()
    fleet = []
    for item in args.fleet.split(","):
        addr, _, url = item.partition("=")
        if not url:
            addr, url = item, item
        transport.add(addr, url)
        fleet.append(addr)

    registry = TrustedRegistry.load(args.registry)
    entry = registry.entries.get(args.domain)
    if entry is None:
        print(f"error: domain {args.domain!r} not in registry", file=sys.stderr)
        return 2

    approved_chips = (
        {bytes.fromhex(line) for line in _read_lines(args.approved_chips)}
        if args.approved_chips
        else None
    )
    approved_ips = set(_read_lines(args.approved_ips)) if args.approved_ips else set(fleet)

    sp = SpNode(
        approved_chips=approved_chips,  # None = no allowlist file, skip the check
        approved_ips=approved_ips,
        expected_measurements=set(entry.accepted_measurements),
        revoked_measurements=set(entry.revoked_measurements),
        ca=SimulatedCA(time.time),
        kds=HttpKdsClient(args.kds_url),
        fleet=fleet,
        domain=args.domain,
    )
    outcome = run_certificate_round(sp, transport)
    json.dump(outcome.to_json_dict(), sys.stdout, indent=2, sort_keys=True)
    print()
    return 0 if outcome.success else 1


def attest_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="revelio-attest", description="Attest a domain end-to-end"
    )
    parser.add_argument("--domain", required=True)
    parser.add_argument("--registry", required=True)
    parser.add_argument("--url", required=True, help="endpoint serving the domain")
    parser.add_argument("--kds-url", required=True)
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument("--once", action="store_true", help="attest once (default)")
    mode.add_argument("--monitor", type=int, metavar="N",
                      help="after attesting, monitor N follow-up requests")

    args = parser.parse_args(argv)

    registry = TrustedRegistry.load(args.registry)
    kds = HttpKdsClient(args.kds_url)
    transport = HttpTransport({args.domain: args.url})

    try:
        resp = fetch_attestation(transport, args.domain)
    except UnreachableError as e:
        json.dump({"status": "Inconclusive", "details": str(e)}, sys.stdout)
        print()
        return 1
    if resp.status != 200:
        json.dump({"status": "Unreachable", "details": f"http {resp.status}"}, sys.stdout)
        print()
        return 1

    try:
        verdict = attest_domain(registry, args.domain, resp.body, resp.conn_key, kds)
    except KdsUnreachable as e:
        json.dump({"status": "Inconclusive", "details": f"KDS unreachable: {e}"}, sys.stdout)
        print()
        return 1
    results = [verdict.to_json_dict()]
    ok = verdict.trusted

    if verdict.trusted and args.monitor:
        session = open_session(args.domain, verdict, bytes.fromhex(resp.body["tls_public_key"]))
        for _ in range(args.monitor):
            follow = transport.request("client", args.domain, "GET", "/index", {})
            check = monitor_request(session, follow.conn_key)
            results.append(check.to_json_dict())
            ok = ok and check.trusted

    json.dump(results if len(results) > 1 else results[0], sys.stdout, indent=2, sort_keys=True)
    print()
    return 0 if ok else 1
