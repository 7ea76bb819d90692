"""Classic per-destination traceroute and the probing-cost comparisons.

Traceroute probes every destination independently, ttl 1 upward, which
re-discovers shared path prefixes once per destination.  The analyses
here quantify that against tree probing: simulated tree measurements
replayed over recorded routes, link-load histograms, destination-subset
simulation, and cumulative discovery curves.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from ipaddress import IPv4Address

from .model import (
    FilteredTree,
    Hop,
    Ip,
    ProbeRecord,
    RadarDataset,
    RawTraceTree,
    RoundRecord,
    Star,
    TtlNode,
)
from .radar import RadarConfig
from .tracetree import TracetreeConfig
from .transport import TransportBackpressureError


@dataclass
class TracerouteRound:
    """One classic traceroute sweep over a destination set."""

    routes: dict[IPv4Address, list[TtlNode]]
    records: list[ProbeRecord]
    packet_count: int
    duration: float

    def to_raw(self) -> RawTraceTree:
        return RawTraceTree.from_records(self.records)

    def observed_ips(self) -> set[IPv4Address]:
        return {
            node.hop.address
            for hops in self.routes.values()
            for node in hops
            if isinstance(node.hop, Ip)
        }


def _send_paced(transport, destination, ttl, pace):
    clock = transport.clock
    while True:
        try:
            token = transport.send(destination, ttl)
            break
        except TransportBackpressureError as bp:
            clock.sleep(bp.retry_at - clock.now())
    clock.sleep(pace)
    return token


def _await_reply(transport, token, timeout):
    """Wait for the reply to one token; None on timeout.  Stray late
    arrivals from earlier probes are discarded."""
    clock = transport.clock
    expiry = token.sent_at + timeout
    while True:
        for reply in transport.poll(expiry):
            if reply.token.seq == token.seq and not reply.late:
                return reply
        if clock.now() >= expiry:
            transport.expire(token)
            return None


def traceroute_round(destinations, transport, config: TracetreeConfig | None = None) -> TracerouteRound:
    """Probe each destination independently, ttl 1 up to max_ttl, stopping
    at the first echo from the destination.  One probe per (destination,
    ttl); stars mark timeouts."""
    config = config if config is not None else TracetreeConfig()
    prepare = getattr(transport, "prepare", None)
    if prepare is not None:
        prepare(list(destinations))
    clock = transport.clock
    started = clock.now()
    routes: dict[IPv4Address, list[TtlNode]] = {}
    records: list[ProbeRecord] = []
    for destination in destinations:
        hops: list[TtlNode] = []
        for ttl in range(1, config.max_ttl + 1):
            token = _send_paced(transport, destination, ttl, config.inter_probe_delay)
            reply = _await_reply(transport, token, config.timeout)
            if reply is None:
                hop: Hop = Star(str(destination))
            else:
                hop = Ip(reply.source)
            hops.append(TtlNode(hop, ttl))
            records.append(ProbeRecord(hop, ttl, destination))
            if reply is not None and reply.kind == "echo_reply" and reply.source == destination:
                break
        routes[destination] = hops
    return TracerouteRound(
        routes=routes,
        records=records,
        packet_count=len(records),
        duration=clock.now() - started,
    )


def routes_from_records(records) -> dict[IPv4Address, list[TtlNode]]:
    """Rebuild per-destination routes from a traceroute record stream
    (one record per (destination, ttl), as traceroute emits them)."""
    routes: dict[IPv4Address, list[TtlNode]] = {}
    for rec in records:
        routes.setdefault(rec.destination, []).append(TtlNode(rec.source, rec.ttl))
    for hops in routes.values():
        hops.sort(key=lambda n: n.ttl)
    return routes


def simulate_tracetree_from_traceroute(routes) -> RawTraceTree:
    """Replay the tree-probing stopping rule over recorded routes: walk
    each route backward from its terminal, stop at the first (hop, ttl)
    already seen.  Yields the records a tree measurement would have
    produced had routing matched the recorded routes."""
    seen: set[tuple[IPv4Address, int]] = set()
    records: list[ProbeRecord] = []
    for destination, hops in routes.items():
        for node in reversed(hops):
            records.append(ProbeRecord(node.hop, node.ttl, destination))
            if isinstance(node.hop, Ip):
                key = (node.hop.address, node.ttl)
                if key in seen:
                    break
                seen.add(key)
    return RawTraceTree.from_records(records)


def destination_chains(raw: RawTraceTree) -> dict[IPv4Address, list[TtlNode]]:
    """Per-destination (hop, ttl) chains of a raw tree, for load counting."""
    return routes_from_records(raw.records)


def link_load_distribution(routes, root: Hop | None = None) -> dict[int, int]:
    """Histogram of link discovery counts: for each directed (hop, ttl)
    link appearing in the routes, how many destinations discovered it,
    bucketed as {times_discovered: number_of_links}.

    Pass the monitor as `root` to count first-hop links (traceroute
    routes start at the monitor); tree-measurement chains pass None, as
    partial chains do not re-traverse the link into their junction.
    """
    loads: Counter = Counter()
    for hops in routes.values():
        by_ttl: dict[int, list[Hop]] = {}
        for node in hops:
            by_ttl.setdefault(node.ttl, []).append(node.hop)
        links: set[tuple[TtlNode, TtlNode]] = set()
        if root is not None:
            for hop in by_ttl.get(1, ()):
                links.add((TtlNode(root, 0), TtlNode(hop, 1)))
        for ttl, lows in by_ttl.items():
            highs = by_ttl.get(ttl + 1)
            if not highs:
                continue
            for low in lows:
                for high in highs:
                    links.add((TtlNode(low, ttl), TtlNode(high, ttl + 1)))
        for link in links:
            loads[link] += 1
    return dict(Counter(loads.values()))


def simulate_destination_subset(dataset: RadarDataset, subset) -> RadarDataset:
    """What the dataset would have shown had only `subset` been probed:
    per round, keep exactly the nodes and links on paths towards kept
    destinations.  Probe counts are left untouched (nothing is re-sent)."""
    subset = set(subset)
    known = _dataset_destinations(dataset)
    unknown = subset - known
    if unknown:
        raise ValueError(f"subset contains unknown destinations: {sorted(map(str, unknown))}")
    rounds = []
    for rec in dataset.rounds:
        tree = rec.tree
        parents = tree.parent_map()
        nodes = {tree.root}
        edges: set[tuple[Hop, Hop]] = set()
        terminals = {}
        for destination in sorted(subset):
            terminal = tree.terminals.get(destination)
            if terminal is None:
                continue
            terminals[destination] = terminal
            node = terminal
            while node not in nodes:
                nodes.add(node)
                parent = parents[node]
                edges.add((parent, node))
                node = parent
        rounds.append(
            RoundRecord(
                index=rec.index,
                start_time=rec.start_time,
                end_time=rec.end_time,
                probes_sent=rec.probes_sent,
                tree=FilteredTree(tree.root, nodes, edges, terminals),
                raw=None,
                complete=rec.complete,
            )
        )
    return RadarDataset(monitor_id=dataset.monitor_id, rounds=rounds, parameters=None)


def _dataset_destinations(dataset: RadarDataset) -> set[IPv4Address]:
    if isinstance(dataset.parameters, RadarConfig):
        return set(dataset.parameters.destinations)
    known: set[IPv4Address] = set()
    for rec in dataset.rounds:
        known.update(rec.tree.terminals)
    return known


def cumulative_discovery_curves(observations):
    """Cumulative distinct-address curves from per-round observations
    [(address_set, packets_sent), ...].

    Returns (rounds_curve, packets_curve): [(rounds_so_far, addresses)]
    and [(packets_so_far, addresses)], both monotone non-decreasing.
    """
    rounds_curve = []
    packets_curve = []
    seen: set = set()
    packets = 0
    for count, (addresses, sent) in enumerate(observations, start=1):
        seen |= set(addresses)
        packets += sent
        rounds_curve.append((count, len(seen)))
        packets_curve.append((packets, len(seen)))
    return rounds_curve, packets_curve


def dataset_observations(dataset: RadarDataset):
    """Adapt a radar dataset for cumulative_discovery_curves."""
    return [(rec.tree.observed_ips(), rec.probes_sent) for rec in dataset.rounds]


def step_value(curve, x) -> int:
    """Value of a cumulative step curve at coordinate x (0 before the
    first point)."""
    value = 0
    for cx, cy in curve:
        if cx > x:
            break
        value = cy
    return value
