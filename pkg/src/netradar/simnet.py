"""Deterministic hop-level topology simulator.

Ground truth for probe routing: a directed graph whose nodes carry an
address and a response policy (responsive, silent, or rate-limited),
per-destination and per-packet load balancers, and a schedule of scripted
topology changes.  Default forwarding follows a deterministic shortest
path (BFS with address-ordered tie-breaks); balancer policies override it
at their node.  Serves as the default transport backend and as the oracle
in tests.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from ipaddress import IPv4Address
from pathlib import Path

import yaml


class TopologyError(ValueError):
    """A topology description violates the schema or its invariants."""


class ScenarioError(RuntimeError):
    """A scheduled event cannot be applied to the current topology."""


RESPONSIVE = "responsive"
SILENT = "silent"

TIME_EXCEEDED = "time_exceeded"
ECHO_REPLY = "echo_reply"
SILENCE = "silence"
UNREACHABLE = "unreachable"


@dataclass(frozen=True)
class RateLimited:
    """Token-bucket reply limiting: `burst` replies at once, refilled
    continuously at `rate` per second."""

    rate: float
    burst: int = 1

    def __post_init__(self):
        if self.rate <= 0:
            raise TopologyError(f"rate limit rate must be > 0, got {self.rate}")
        if self.burst < 1:
            raise TopologyError(f"rate limit burst must be >= 1, got {self.burst}")


@dataclass
class PerDestination:
    """Balancer choosing the next hop by destination address."""

    table: dict[IPv4Address, str]


@dataclass
class PerPacket:
    """Balancer cycling through next hops, one advance per forwarded packet."""

    cycle: list[str]


@dataclass
class RewireLink:
    node: str
    remove: str | None = None
    add: str | None = None


@dataclass
class AddIsland:
    """Nodes and links grafted onto the running topology.  Links may
    reference pre-existing nodes, which is how islands attach."""

    nodes: dict[str, tuple[IPv4Address, object]]
    links: list[tuple[str, str]]


@dataclass
class RemoveNode:
    node: str


@dataclass
class ChangePolicy:
    node: str
    policy: object


@dataclass
class ScheduledEvent:
    at_time: float
    action: object

    def __post_init__(self):
        if self.at_time < 0:
            raise TopologyError(f"event time must be >= 0, got {self.at_time}")


@dataclass
class Topology:
    """Immutable loaded topology; run probes against a SimState built from it."""

    monitor: str
    addresses: dict[str, IPv4Address]
    policies: dict[str, object]
    links: dict[str, list[str]]
    balancers: dict[str, object] = field(default_factory=dict)
    events: list[ScheduledEvent] = field(default_factory=list)


@dataclass(frozen=True)
class SimReply:
    """Outcome of one probe.  `hops` is the distance of the node that
    answered (or would have answered), which drives the latency model."""

    kind: str
    source: IPv4Address | None
    hops: int


def _parse_policy(spec) -> object:
    if spec is None or spec == RESPONSIVE:
        return RESPONSIVE
    if spec == SILENT:
        return SILENT
    if isinstance(spec, RateLimited):
        return spec
    if isinstance(spec, dict) and "rate" in spec:
        return RateLimited(rate=float(spec["rate"]), burst=int(spec.get("burst", 1)))
    raise TopologyError(f"unknown response policy {spec!r}")


def _parse_node(name: str, spec) -> tuple[IPv4Address, object]:
    if isinstance(spec, (str, int)):
        return IPv4Address(spec), RESPONSIVE
    if isinstance(spec, dict):
        if "address" not in spec:
            raise TopologyError(f"node {name!r} has no address")
        return IPv4Address(spec["address"]), _parse_policy(spec.get("policy"))
    raise TopologyError(f"bad node spec for {name!r}")


def _parse_balancer(node: str, spec) -> object:
    if isinstance(spec, (PerDestination, PerPacket)):
        return spec
    if isinstance(spec, dict) and "per_destination" in spec:
        table = {IPv4Address(a): str(n) for a, n in spec["per_destination"].items()}
        return PerDestination(table)
    if isinstance(spec, dict) and "per_packet" in spec:
        return PerPacket([str(n) for n in spec["per_packet"]])
    raise TopologyError(f"bad balancer spec for node {node!r}")


def _parse_event(spec) -> ScheduledEvent:
    if isinstance(spec, ScheduledEvent):
        return spec
    if not isinstance(spec, dict) or "at" not in spec:
        raise TopologyError(f"event needs an 'at' time: {spec!r}")
    at = float(spec["at"])
    if "rewire" in spec:
        body = spec["rewire"]
        action = RewireLink(
            node=str(body["node"]),
            remove=str(body["remove"]) if body.get("remove") is not None else None,
            add=str(body["add"]) if body.get("add") is not None else None,
        )
    elif "add_island" in spec:
        body = spec["add_island"]
        nodes = {str(n): _parse_node(str(n), s) for n, s in body.get("nodes", {}).items()}
        links = [(str(u), str(v)) for u, v in body.get("links", [])]
        action = AddIsland(nodes=nodes, links=links)
    elif "remove_node" in spec:
        action = RemoveNode(node=str(spec["remove_node"]))
    elif "change_policy" in spec:
        body = spec["change_policy"]
        action = ChangePolicy(node=str(body["node"]), policy=_parse_policy(body.get("policy")))
    else:
        raise TopologyError(f"event has no recognised action: {spec!r}")
    return ScheduledEvent(at_time=at, action=action)


def load_topology(source) -> Topology:
    """Load and validate a topology from a dict, a YAML string, or a file path.

    Schema keys: monitor, nodes, links, balancers, events.  Raises
    TopologyError naming the offending element on any violation.
    """
    if isinstance(source, Topology):
        doc = None
        topo = source
    else:
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
            with open(source, "r", encoding="utf-8") as fh:
                doc = yaml.safe_load(fh)
        elif isinstance(source, str):
            doc = yaml.safe_load(source)
        elif isinstance(source, dict):
            doc = source
        else:
            raise TopologyError(f"cannot load a topology from {type(source).__name__}")
        if not isinstance(doc, dict):
            raise TopologyError("topology document must be a mapping")
        try:
            node_specs = doc.get("nodes") or {}
            addresses, policies = {}, {}
            for name, spec in node_specs.items():
                addresses[str(name)], policies[str(name)] = _parse_node(str(name), spec)
            links: dict[str, list[str]] = {name: [] for name in addresses}
            for pair in doc.get("links") or []:
                u, v = (str(pair[0]), str(pair[1]))
                links.setdefault(u, []).append(v)
            balancers = {
                str(n): _parse_balancer(str(n), s)
                for n, s in (doc.get("balancers") or {}).items()
            }
            events = [_parse_event(e) for e in doc.get("events") or []]
            topo = Topology(
                monitor=str(doc.get("monitor", "")),
                addresses=addresses,
                policies=policies,
                links=links,
                balancers=balancers,
                events=events,
            )
        except (ValueError, KeyError, TypeError) as exc:
            if isinstance(exc, TopologyError):
                raise
            raise TopologyError(f"bad topology document: {exc}") from exc
    _validate(topo)
    return topo


def _validate(topo: Topology) -> None:
    if topo.monitor not in topo.addresses:
        raise TopologyError(f"monitor {topo.monitor!r} is not a declared node")
    seen_addr: dict[IPv4Address, str] = {}
    for name, addr in topo.addresses.items():
        if addr in seen_addr:
            raise TopologyError(f"duplicate address {addr}: nodes {seen_addr[addr]!r} and {name!r}")
        seen_addr[addr] = name
    for u, targets in topo.links.items():
        if u not in topo.addresses:
            raise TopologyError(f"link endpoint {u!r} is not a declared node")
        for v in targets:
            if v not in topo.addresses:
                raise TopologyError(f"link endpoint {v!r} (from {u!r}) is not a declared node")
    for node, balancer in topo.balancers.items():
        if node not in topo.addresses:
            raise TopologyError(f"balancer node {node!r} is not a declared node")
        neighbours = set(topo.links.get(node, ()))
        if isinstance(balancer, PerDestination):
            hops = set(balancer.table.values())
        elif isinstance(balancer, PerPacket):
            if not balancer.cycle:
                raise TopologyError(f"per-packet balancer at {node!r} has an empty cycle")
            hops = set(balancer.cycle)
        else:
            raise TopologyError(f"unknown balancer type at {node!r}")
        for hop in hops:
            if hop not in neighbours:
                raise TopologyError(f"balancer next hop {hop!r} is not a neighbour of {node!r}")


class SimState:
    """Mutable simulation state: adjacency after applied events, balancer
    counters, rate-limit buckets, and memoized routing.  One logical owner
    at a time; the loaded Topology itself is never mutated."""

    def __init__(self, topology: Topology):
        self.monitor = topology.monitor
        self.addresses = dict(topology.addresses)
        self.policies = dict(topology.policies)
        self.balancers = {n: _copy_balancer(b) for n, b in topology.balancers.items()}
        self._adj = {u: sorted(vs, key=lambda v: int(topology.addresses[v])) for u, vs in topology.links.items()}
        self._pending = sorted(
            enumerate(topology.events), key=lambda pair: (pair[1].at_time, pair[0])
        )
        self._applied_time = float("-inf")
        self._pp_counters: dict[str, int] = {}
        self._buckets: dict[str, list[float]] = {}
        self._addr_to_node = {a: n for n, a in self.addresses.items()}
        self._paths: dict[tuple[str, IPv4Address], tuple[str, ...] | None] = {}
        self._monitor_parents: dict[str, str] | None = None

    # -- events ------------------------------------------------------------

    def apply_events(self, up_to_time: float) -> None:
        """Apply every scheduled event with at_time <= up_to_time, in order.
        Times must be non-decreasing across calls."""
        if up_to_time < self._applied_time:
            raise ScenarioError(
                f"event clock went backwards: {up_to_time} < {self._applied_time}"
            )
        self._applied_time = up_to_time
        while self._pending and self._pending[0][1].at_time <= up_to_time:
            _, event = self._pending.pop(0)
            self._apply(event.action)

    def _invalidate_routes(self) -> None:
        self._paths.clear()
        self._monitor_parents = None
        self._addr_to_node = {a: n for n, a in self.addresses.items()}

    def _require_node(self, name: str, action: str) -> None:
        if name not in self.addresses:
            raise ScenarioError(f"{action} references unknown node {name!r}")

    def _apply(self, action) -> None:
        if isinstance(action, RewireLink):
            self._require_node(action.node, "rewire")
            if action.remove is not None:
                if action.remove not in self._adj.get(action.node, []):
                    raise ScenarioError(
                        f"rewire: no link {action.node!r} -> {action.remove!r} to remove"
                    )
                self._adj[action.node].remove(action.remove)
            if action.add is not None:
                self._require_node(action.add, "rewire")
                if action.add not in self._adj[action.node]:
                    self._adj[action.node].append(action.add)
                    self._adj[action.node].sort(key=lambda v: int(self.addresses[v]))
        elif isinstance(action, AddIsland):
            for name, (addr, policy) in action.nodes.items():
                if name in self.addresses:
                    raise ScenarioError(f"island node {name!r} already exists")
                self.addresses[name] = addr
                self.policies[name] = policy
                self._adj[name] = []
            taken: dict[IPv4Address, str] = {}
            for name, addr in self.addresses.items():
                if addr in taken:
                    raise ScenarioError(f"island duplicates address {addr}")
                taken[addr] = name
            for u, v in action.links:
                self._require_node(u, "island link")
                self._require_node(v, "island link")
                if v not in self._adj[u]:
                    self._adj[u].append(v)
                    self._adj[u].sort(key=lambda v2: int(self.addresses[v2]))
        elif isinstance(action, RemoveNode):
            self._require_node(action.node, "remove_node")
            del self.addresses[action.node]
            del self.policies[action.node]
            self._adj.pop(action.node, None)
            self.balancers.pop(action.node, None)
            for targets in self._adj.values():
                if action.node in targets:
                    targets.remove(action.node)
            for balancer in self.balancers.values():
                if isinstance(balancer, PerDestination):
                    balancer.table = {
                        a: n for a, n in balancer.table.items() if n != action.node
                    }
        elif isinstance(action, ChangePolicy):
            self._require_node(action.node, "change_policy")
            self.policies[action.node] = action.policy
        else:
            raise ScenarioError(f"unknown event action {action!r}")
        self._invalidate_routes()

    # -- routing -----------------------------------------------------------

    def prepare_destinations(self, destinations) -> None:
        """Warm the routing cache for a batch of destinations."""
        for dest in destinations:
            self._path_from(self.monitor, IPv4Address(dest))

    def _monitor_bfs(self) -> dict[str, str]:
        if self._monitor_parents is None:
            parents: dict[str, str] = {}
            visited = {self.monitor}
            queue = deque([self.monitor])
            while queue:
                node = queue.popleft()
                for nxt in self._adj.get(node, ()):
                    if nxt not in visited:
                        visited.add(nxt)
                        parents[nxt] = node
                        queue.append(nxt)
            self._monitor_parents = parents
        return self._monitor_parents

    def _path_from(self, start: str, dest: IPv4Address) -> tuple[str, ...] | None:
        key = (start, dest)
        if key in self._paths:
            return self._paths[key]
        target = self._addr_to_node.get(dest)
        path: tuple[str, ...] | None = None
        if target is not None:
            if start == self.monitor:
                parents = self._monitor_bfs()
                if target == start or target in parents:
                    chain = [target]
                    while chain[-1] != start:
                        chain.append(parents[chain[-1]])
                    path = tuple(reversed(chain))
            else:
                parents2: dict[str, str] = {}
                visited = {start}
                queue = deque([start])
                found = start == target
                while queue and not found:
                    node = queue.popleft()
                    for nxt in self._adj.get(node, ()):
                        if nxt not in visited:
                            visited.add(nxt)
                            parents2[nxt] = node
                            if nxt == target:
                                found = True
                                break
                            queue.append(nxt)
                if found:
                    chain = [target]
                    while chain[-1] != start:
                        chain.append(parents2[chain[-1]])
                    path = tuple(reversed(chain))
        self._paths[key] = path
        return path

    def route_probe(self, destination, ttl: int, at_time: float) -> SimReply:
        """Walk one probe from the monitor towards `destination`, spending
        one ttl per hop.  Deterministic given the current state; per-packet
        balancer counters advance exactly once per traversal."""
        if ttl < 1:
            raise ValueError(f"ttl must be >= 1, got {ttl}")
        dest = destination if isinstance(destination, IPv4Address) else IPv4Address(destination)
        node = self.monitor
        plan = self._path_from(node, dest)
        plan_pos = 0
        for hop_index in range(1, ttl + 1):
            nxt = None
            balancer = self.balancers.get(node)
            planned = None
            if plan is not None and plan_pos + 1 < len(plan):
                planned = plan[plan_pos + 1]
            if isinstance(balancer, PerPacket):
                count = self._pp_counters.get(node, 0)
                self._pp_counters[node] = count + 1
                nxt = balancer.cycle[count % len(balancer.cycle)]
            elif isinstance(balancer, PerDestination) and dest in balancer.table:
                nxt = balancer.table[dest]
            else:
                nxt = planned
            if nxt is None or nxt not in self.addresses:
                return SimReply(UNREACHABLE, None, hop_index)
            if nxt == planned:
                plan_pos += 1
            else:
                plan = self._path_from(nxt, dest)
                plan_pos = 0
            node = nxt
            if self.addresses[node] == dest:
                return self._respond(node, ECHO_REPLY, hop_index, at_time)
        return self._respond(node, TIME_EXCEEDED, ttl, at_time)

    def _respond(self, node: str, kind: str, hops: int, at_time: float) -> SimReply:
        policy = self.policies.get(node, RESPONSIVE)
        if policy == SILENT:
            return SimReply(SILENCE, None, hops)
        if isinstance(policy, RateLimited):
            bucket = self._buckets.get(node)
            if bucket is None:
                bucket = [float(policy.burst), at_time]
                self._buckets[node] = bucket
            tokens, last = bucket
            tokens = min(float(policy.burst), tokens + (at_time - last) * policy.rate)
            bucket[1] = at_time
            if tokens >= 1.0:
                bucket[0] = tokens - 1.0
                return SimReply(kind, self.addresses[node], hops)
            bucket[0] = tokens
            return SimReply(SILENCE, None, hops)
        return SimReply(kind, self.addresses[node], hops)


def _copy_balancer(balancer):
    if isinstance(balancer, PerDestination):
        return PerDestination(dict(balancer.table))
    if isinstance(balancer, PerPacket):
        return PerPacket(list(balancer.cycle))
    return balancer
