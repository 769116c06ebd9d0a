"""Command-line entry point: scenario runs, experiments, governance status."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .errors import ChainError, ConfigError, ScenarioDiverged
from .harness import (
    ScenarioRunner,
    fee_ratio_experiment,
    fee_stability_experiment,
    generate_price_series,
    stable_series_default,
    volatile_series_default,
)
from .oracle import load_rate_series, write_rate_series
from .scenario import load_scenario
from .types import RATE_SCALE, format_fixed, parse_rate_decimal

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SAFETY = 2


def _cmd_node_run(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.report:
        scenario = replace(scenario, report_path=args.report)
    try:
        report = ScenarioRunner(scenario).run()
    except ScenarioDiverged as exc:
        report = getattr(exc, "report", None)
        if report is not None:
            sys.stdout.write(report.render())
        print(f"SAFETY VIOLATION: {exc}", file=sys.stderr)
        return EXIT_SAFETY
    sys.stdout.write(report.render())
    return EXIT_OK


def _cmd_node_serve(args) -> int:
    import threading
    import time

    from .rpc import RpcEndpoint, RpcHttpServer

    scenario = load_scenario(args.scenario)
    runner = ScenarioRunner(scenario)
    lock = threading.Lock()

    servers = []
    port = args.port_base
    for unit in runner.world.config.units:
        endpoint = RpcEndpoint(unit, runner.world.nodes[0], submit=lambda tx: runner._submit(0, tx), lock=lock)
        server = RpcHttpServer(endpoint, port=port)
        server.start()
        servers.append(server)
        print(f"{unit} endpoint listening on http://127.0.0.1:{server.port}")
        port += 1

    def advance():
        horizon = 0
        while True:
            horizon += 200
            with lock:
                runner.world.step_until(horizon)
            time.sleep(0.05)

    threading.Thread(target=advance, daemon=True).start()
    print("press Ctrl-C to stop")
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        for server in servers:
            server.stop()
    return EXIT_OK


def _cmd_fee_ratio(args) -> int:
    rate = parse_rate_decimal(args.rate)
    ratio, report = fee_ratio_experiment(rate)
    if args.report:
        report.write(args.report)
    print(f"fee_ratio={format_fixed(ratio, RATE_SCALE)}")
    return EXIT_OK


def _cmd_fee_stability(args) -> int:
    stable = load_rate_series(args.stable) if args.stable else stable_series_default()
    volatile = load_rate_series(args.volatile) if args.volatile else volatile_series_default()
    stable_ratio, volatile_ratio = fee_stability_experiment(stable, volatile)
    print(f"stable_fee_ratio={format_fixed(stable_ratio, RATE_SCALE)}")
    print(f"volatile_fee_ratio={format_fixed(volatile_ratio, RATE_SCALE)}")
    return EXIT_OK


def _cmd_gen_series(args) -> int:
    days = args.days
    stable = stable_series_default(days)
    volatile = generate_price_series(
        days, parse_rate_decimal(args.low), parse_rate_decimal(args.high), "ETH"
    )
    write_rate_series(args.stable_out, stable)
    write_rate_series(args.volatile_out, volatile)
    print(f"wrote {args.stable_out} ({len(stable)} days) and {args.volatile_out} ({len(volatile)} days)")
    return EXIT_OK


def _cmd_gov_status(args) -> int:
    scenario = load_scenario(args.scenario)
    try:
        runner = ScenarioRunner(scenario)
        runner.run()
    except ScenarioDiverged as exc:
        print(f"SAFETY VIOLATION: {exc}", file=sys.stderr)
        return EXIT_SAFETY
    node = runner.world.honest_nodes()[0]
    gov = node.state.governance.get(args.unit)
    if gov is None:
        print(f"no governance state for unit {args.unit}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"unit={gov.unit} committee_size={gov.committee_size} quorum_size={gov.quorum_size}")
    print(f"committee={sorted('0x' + a.hex() for a in gov.committee)}")
    print(f"blacklist={sorted('0x' + a.hex() for a in gov.blacklist)}")
    for pid in sorted(gov.proposals):
        p = gov.proposals[pid]
        print(
            f"proposal 0x{pid.hex()} action={type(p.action).__name__} "
            f"yes={len(p.yes_votes)} status={p.status.value} expires={p.expiry_height}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyfee", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    node = sub.add_parser("node", help="run or serve a simulated multi-node chain")
    node_sub = node.add_subparsers(dest="node_command", required=True)
    run = node_sub.add_parser("run", help="run a scenario deterministically and print the report")
    run.add_argument("--scenario", required=True)
    run.add_argument("--report", help="also write the report to this path")
    run.set_defaults(fn=_cmd_node_run)
    serve = node_sub.add_parser("serve", help="expose per-unit HTTP endpoints over a live world")
    serve.add_argument("--scenario", required=True)
    serve.add_argument("--port-base", type=int, default=3000)
    serve.set_defaults(fn=_cmd_node_serve)

    experiment = sub.add_parser("experiment", help="fee experiments")
    exp_sub = experiment.add_subparsers(dest="experiment_command", required=True)
    ratio = exp_sub.add_parser("fee-ratio", help="fee ratio between two settlement units")
    ratio.add_argument("--rate", required=True, help="reference->unit rate, e.g. 7.11")
    ratio.add_argument("--report")
    ratio.set_defaults(fn=_cmd_fee_ratio)
    stability = exp_sub.add_parser("fee-stability", help="max/min daily fee under two price series")
    stability.add_argument("--stable", help="CSV path (default: built-in synthetic series)")
    stability.add_argument("--volatile", help="CSV path (default: built-in synthetic series)")
    stability.set_defaults(fn=_cmd_fee_stability)
    gen = exp_sub.add_parser("gen-series", help="write synthetic daily price CSVs")
    gen.add_argument("--stable-out", required=True)
    gen.add_argument("--volatile-out", required=True)
    gen.add_argument("--days", type=int, default=183)
    gen.add_argument("--low", default="2500")
    gen.add_argument("--high", default="4600")
    gen.set_defaults(fn=_cmd_gen_series)

    gov = sub.add_parser("gov", help="governance inspection")
    gov_sub = gov.add_subparsers(dest="gov_command", required=True)
    status = gov_sub.add_parser("status", help="run a scenario and print one unit's governance state")
    status.add_argument("--unit", required=True)
    status.add_argument("--scenario", required=True)
    status.set_defaults(fn=_cmd_gov_status)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ChainError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
