"""Command-line interface: measurement, simulation, and analysis
subcommands emitting round logs, CSV, and DOT.

Exit codes: 0 success, 1 usage error, 2 runtime or transport fault,
3 validation error (bad input files or parameters).
"""
from __future__ import annotations

import argparse
import sys
from ipaddress import IPv4Address
from pathlib import Path

from . import analytics, baseline
from .filtering import filter_tree
from .model import (
    Ip,
    RadarDataset,
    RoundRecord,
    RoundLogParseError,
    RawTraceTree,
    parse_round_log,
    serialize_round,
)
from .radar import (
    DatasetWriter,
    RadarConfig,
    load_destinations,
    run_radar,
)
from .simnet import ScenarioError, SimState, TopologyError, load_topology
from .tracetree import TracetreeConfig
from .transport import SimTransport, TransportError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_VALIDATION = 3

PLACEHOLDER_MONITOR = Ip(IPv4Address("0.0.0.0"))  # round logs do not carry the monitor


class _Parser(argparse.ArgumentParser):
    # the documented usage-error exit code is 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _make_transport(spec: str, per_hop_delay: float, rate_cap: float):
    if spec.startswith("sim:"):
        topology = load_topology(spec[len("sim:") :])
        return SimTransport(topology, per_hop_delay=per_hop_delay, rate_cap=rate_cap)
    if spec == "icmp":
        from .icmp import IcmpTransport

        return IcmpTransport(rate_cap=rate_cap)
    raise TopologyError(f"unknown transport {spec!r}; use sim:TOPOLOGY_FILE or icmp")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_dataset(path: str, max_ttl: int, monitor: str | None) -> RadarDataset:
    root = Ip(IPv4Address(monitor)) if monitor else PLACEHOLDER_MONITOR
    text = Path(path).read_text(encoding="utf-8")
    rounds = []
    for meta, raw in parse_round_log(text, max_ttl=max_ttl):
        tree, _ = filter_tree(raw, root)
        rounds.append(
            RoundRecord(
                index=meta.index,
                start_time=meta.start_time,
                end_time=meta.end_time,
                probes_sent=len(raw.records),
                tree=tree,
                raw=raw,
            )
        )
    return RadarDataset(monitor_id=str(root), rounds=rounds)


def _parse_range(text: str) -> tuple[int, int]:
    try:
        start, stop = text.split(":")
        return int(start), int(stop)
    except ValueError:
        raise ValueError(f"bad round range {text!r}, expected START:STOP") from None


# -- measurement commands ----------------------------------------------------


def _measurement_config(args) -> TracetreeConfig:
    return TracetreeConfig(max_ttl=args.max_ttl, timeout=args.timeout)


def cmd_radar_run(args) -> int:
    destinations = load_destinations(args.destinations)
    config = RadarConfig(
        destinations=destinations,
        inter_round_delay=args.inter_round,
        default_distance=args.max_ttl,
        rounds=args.rounds,
        tracetree=_measurement_config(args),
    )
    transport = _make_transport(args.transport, args.per_hop_delay, args.rate_cap)
    with DatasetWriter(args.out) as sink:
        dataset = run_radar(config, transport, sink)
    total_probes = sum(rec.probes_sent for rec in dataset.rounds)
    print(
        f"{len(dataset.rounds)} rounds written to {args.out} "
        f"({total_probes} probes, monitor {dataset.monitor_id})"
    )
    return EXIT_OK


def cmd_tracetree_once(args) -> int:
    destinations = load_destinations(args.destinations)
    config = RadarConfig(
        destinations=destinations,
        inter_round_delay=0.0,
        default_distance=args.max_ttl,
        rounds=1,
        tracetree=_measurement_config(args),
    )
    transport = _make_transport(args.transport, args.per_hop_delay, args.rate_cap)
    dataset = run_radar(config, transport)
    record = dataset.rounds[0]
    block = serialize_round(record.raw, record.index, record.start_time, record.end_time)
    _emit(block, args.out)
    print(
        f"1 round: {record.probes_sent} probes, "
        f"{len(record.tree.observed_ips())} distinct addresses",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_traceroute_once(args) -> int:
    destinations = load_destinations(args.destinations)
    transport = _make_transport(args.transport, args.per_hop_delay, args.rate_cap)
    started = transport.clock.now()
    round_ = baseline.traceroute_round(destinations, transport, _measurement_config(args))
    block = serialize_round(
        RawTraceTree.from_records(round_.records), 0, started, transport.clock.now()
    )
    _emit(block, args.out)
    print(
        f"1 round: {round_.packet_count} probes, "
        f"{len(round_.observed_ips())} distinct addresses",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    topology = load_topology(args.topology)
    state = SimState(topology)
    lines_out = []
    text = Path(args.scenario).read_text(encoding="utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        parts = stripped.split()
        if len(parts) != 3:
            raise ValueError(f"{args.scenario}:{line_no}: expected 'time destination ttl'")
        at_time, destination, ttl = float(parts[0]), IPv4Address(parts[1]), int(parts[2])
        state.apply_events(at_time)
        reply = state.route_probe(destination, ttl, at_time)
        source = reply.source if reply.source is not None else "-"
        lines_out.append(f"{at_time!r} {destination} {ttl} {reply.kind} {source}")
    _emit("\n".join(lines_out) + "\n", args.out)
    return EXIT_OK


# -- analysis commands -------------------------------------------------------


def cmd_analyze(args) -> int:
    dataset = _load_dataset(args.infile, args.max_ttl, args.monitor)
    op = args.operation
    if op == "counts":
        text = analytics.series_to_csv(analytics.per_round_ip_count(dataset), "distinct_ips")
    elif op == "window":
        series = analytics.windowed_ip_count(dataset, window=args.window, mode=args.mode)
        text = analytics.series_to_csv(series, f"distinct_ips_w{args.window}")
    elif op == "peaks":
        if args.window > 1:
            series = analytics.windowed_ip_count(dataset, window=args.window)
        else:
            series = analytics.per_round_ip_count(dataset)
        found = analytics.detect_peaks(series, direction=args.direction, k=args.k)
        lines = [f"# direction={args.direction} k={args.k} median={found.median} threshold={found.threshold}"]
        if found.degenerate:
            lines.append("# degenerate: zero median absolute deviation")
        lines.append("round")
        lines.extend(str(i) for i in found.indices)
        text = "\n".join(lines) + "\n"
    elif op == "distribution":
        if args.window > 1:
            series = analytics.windowed_ip_count(dataset, window=args.window)
        else:
            series = analytics.per_round_ip_count(dataset)
        text = analytics.histogram_to_csv(
            analytics.value_distribution(series, bin_width=args.bin_width), "distinct_ips", "rounds"
        )
    elif op == "components":
        components = analytics.new_address_components(dataset, args.ref, args.obs)
        if args.dot:
            text = analytics.component_neighborhood_dot(dataset, args.ref, args.obs)
        else:
            text = analytics.components_to_csv(components)
    elif op == "event-graph":
        graph = analytics.event_graph(dataset, args.round, before_window=args.before)
        text = graph.to_dot()
    elif op == "correlate":
        components = analytics.new_address_components(dataset, args.ref, args.obs)
        pairs, rho = analytics.size_vs_discovery_correlation(components)
        text = analytics.correlation_to_csv(pairs, rho)
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(f"unknown analysis {op!r}")
    _emit(text, args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    text = Path(args.infile).read_text(encoding="utf-8")
    parsed = parse_round_log(text, max_ttl=args.max_ttl)
    if not parsed:
        raise ValueError(f"{args.infile}: no rounds")
    root = Ip(IPv4Address(args.monitor)) if args.monitor else PLACEHOLDER_MONITOR

    traceroute_obs = []
    tracetree_obs = []
    last_routes = None
    last_simulated = None
    for _, raw in parsed:
        routes = baseline.routes_from_records(raw.records)
        simulated = baseline.simulate_tracetree_from_traceroute(routes)
        ips_tr = {n.hop.address for hops in routes.values() for n in hops if isinstance(n.hop, Ip)}
        ips_tt = {n.hop.address for n in simulated.nodes if isinstance(n.hop, Ip)}
        traceroute_obs.append((ips_tr, len(raw.records)))
        tracetree_obs.append((ips_tt, len(simulated.records)))
        last_routes, last_simulated = routes, simulated

    tr_rounds, tr_packets = baseline.cumulative_discovery_curves(traceroute_obs)
    tt_rounds, tt_packets = baseline.cumulative_discovery_curves(tracetree_obs)

    prefix = args.out_prefix
    rounds_rows = ["round,traceroute_ips,tracetree_ips"]
    for (r, y_tr), (_, y_tt) in zip(tr_rounds, tt_rounds):
        rounds_rows.append(f"{r},{y_tr},{y_tt}")
    Path(f"{prefix}.curves_rounds.csv").write_text("\n".join(rounds_rows) + "\n", encoding="utf-8")

    packet_rows = ["tool,cum_packets,distinct_ips"]
    for x, y in tr_packets:
        packet_rows.append(f"traceroute,{x},{y}")
    for x, y in tt_packets:
        packet_rows.append(f"tracetree,{x},{y}")
    Path(f"{prefix}.curves_packets.csv").write_text("\n".join(packet_rows) + "\n", encoding="utf-8")

    load_tr = baseline.link_load_distribution(last_routes, root=root)
    load_tt = baseline.link_load_distribution(baseline.destination_chains(last_simulated))
    Path(f"{prefix}.load_traceroute.csv").write_text(
        analytics.histogram_to_csv(load_tr, "times_probed", "links"), encoding="utf-8"
    )
    Path(f"{prefix}.load_tracetree.csv").write_text(
        analytics.histogram_to_csv(load_tt, "times_probed", "links"), encoding="utf-8"
    )
    print(
        f"wrote {prefix}.curves_rounds.csv {prefix}.curves_packets.csv "
        f"{prefix}.load_traceroute.csv {prefix}.load_tracetree.csv"
    )
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _add_measurement_flags(parser, with_rounds: bool) -> None:
    parser.add_argument("--destinations", required=True, help="destination list file")
    parser.add_argument("--transport", default="icmp", help="sim:TOPOLOGY_FILE or icmp")
    if with_rounds:
        parser.add_argument("--rounds", type=int, default=None, help="rounds to run (default: unbounded)")
        parser.add_argument("--inter-round", type=float, default=600.0, dest="inter_round", help="delay between round starts, seconds")
    parser.add_argument("--timeout", type=float, default=2.0, help="probe timeout, seconds")
    parser.add_argument("--max-ttl", type=int, default=30, dest="max_ttl")
    parser.add_argument("--per-hop-delay", type=float, default=0.01, dest="per_hop_delay", help="simulated per-hop latency, seconds")
    parser.add_argument("--rate-cap", type=float, default=200.0, dest="rate_cap", help="max probes per second")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="netradar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    radar = sub.add_parser("radar", help="periodic measurement rounds")
    radar_sub = radar.add_subparsers(dest="subcommand", required=True)
    radar_run = radar_sub.add_parser("run", help="run rounds and append them to a dataset file")
    _add_measurement_flags(radar_run, with_rounds=True)
    radar_run.add_argument("--out", required=True, help="dataset file to write")
    radar_run.set_defaults(func=cmd_radar_run)

    tracetree_cmd = sub.add_parser("tracetree", help="tree measurement")
    tracetree_sub = tracetree_cmd.add_subparsers(dest="subcommand", required=True)
    tt_once = tracetree_sub.add_parser("once", help="one round, round-log to stdout or --out")
    _add_measurement_flags(tt_once, with_rounds=False)
    tt_once.add_argument("--out", default=None)
    tt_once.set_defaults(func=cmd_tracetree_once)

    traceroute_cmd = sub.add_parser("traceroute", help="classic per-destination baseline")
    traceroute_sub = traceroute_cmd.add_subparsers(dest="subcommand", required=True)
    tr_once = traceroute_sub.add_parser("once", help="one sweep, round-log to stdout or --out")
    _add_measurement_flags(tr_once, with_rounds=False)
    tr_once.add_argument("--out", default=None)
    tr_once.set_defaults(func=cmd_traceroute_once)

    simulate = sub.add_parser("simulate", help="replay a probe scenario against a topology")
    simulate.add_argument("--topology", required=True)
    simulate.add_argument("--scenario", required=True, help="file of 'time destination ttl' lines")
    simulate.add_argument("--out", default=None)
    simulate.set_defaults(func=cmd_simulate)

    analyze = sub.add_parser("analyze", help="analyses over a dataset file")
    analyze.add_argument(
        "operation",
        choices=["counts", "window", "peaks", "distribution", "components", "event-graph", "correlate"],
    )
    analyze.add_argument("--in", required=True, dest="infile", help="dataset (round-log) file")
    analyze.add_argument("--out", default=None)
    analyze.add_argument("--max-ttl", type=int, default=30, dest="max_ttl")
    analyze.add_argument("--monitor", default=None, help="monitor address for the tree root")
    analyze.add_argument("--window", type=int, default=10, help="rounds per window (window/peaks/distribution)")
    analyze.add_argument("--mode", choices=["sliding", "blocked"], default="sliding")
    analyze.add_argument("--direction", choices=["up", "down"], default="up")
    analyze.add_argument("--k", type=float, default=5.0, help="peak sensitivity")
    analyze.add_argument("--bin-width", type=int, default=1, dest="bin_width")
    analyze.add_argument("--ref", type=_parse_range, default=None, help="reference rounds START:STOP")
    analyze.add_argument("--obs", type=_parse_range, default=None, help="observation rounds START:STOP")
    analyze.add_argument("--round", type=int, default=None, help="event round (event-graph)")
    analyze.add_argument("--before", type=int, default=100, help="before-window size (event-graph)")
    analyze.add_argument("--dot", action="store_true", help="emit DOT instead of CSV (components)")
    analyze.set_defaults(func=cmd_analyze)

    compare = sub.add_parser("compare", help="traceroute vs simulated tree measurement (curves + loads)")
    compare.add_argument("--in", required=True, dest="infile", help="traceroute round-log file")
    compare.add_argument("--out-prefix", default="compare", dest="out_prefix")
    compare.add_argument("--max-ttl", type=int, default=30, dest="max_ttl")
    compare.add_argument("--monitor", default=None)
    compare.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "operation", None) in ("components", "correlate") and (
        args.ref is None or args.obs is None
    ):
        parser.error(f"analyze {args.operation} needs --ref and --obs")
    if getattr(args, "operation", None) == "event-graph" and args.round is None:
        parser.error("analyze event-graph needs --round")
    try:
        return args.func(args)
    except (TopologyError, ScenarioError, RoundLogParseError) as exc:
        print(f"netradar: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"netradar: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TransportError as exc:
        print(f"netradar: transport: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"netradar: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
