"""Shared domain types for ego-centered topology measurements.

Hops, (hop, ttl) observations, probe records, raw and filtered routing
trees, measurement rounds, and the plain-text round-log format that ties
them together on disk.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from ipaddress import IPv4Address

MAX_TTL_DEFAULT = 30


class RoundLogParseError(ValueError):
    """A round-log document could not be parsed."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class TtlRangeError(RoundLogParseError):
    """A record's ttl lies outside [1, max_ttl]."""


@dataclass(frozen=True)
class Ip:
    """A concrete IPv4 hop."""

    address: IPv4Address

    def __str__(self):
        return str(self.address)


@dataclass(frozen=True)
class Star:
    """A timeout marker.

    `key` keeps distinct stars distinct: measurement stars carry the
    destination they were probed towards, merged stars carry the parent
    they hang under.  A star always renders as `*`.
    """

    key: str = ""

    def __str__(self):
        return "*"


Hop = Ip | Star


def ip(address) -> Ip:
    """Build an Ip hop from anything IPv4Address accepts."""
    return Ip(IPv4Address(address))


def hop_sort_key(hop: Hop) -> tuple:
    """Sort key for hops: IPs first, ordered numerically octet by octet;
    stars last, ordered by their disambiguating key."""
    if isinstance(hop, Ip):
        return (0, int(hop.address), "")
    return (1, 0, hop.key)


@dataclass(frozen=True)
class TtlNode:
    """A hop observed at a specific distance: the node type of raw trees."""

    hop: Hop
    ttl: int


@dataclass(frozen=True)
class ProbeRecord:
    """One emitted probe and its outcome: the reply source (or a star on
    timeout) at `ttl` on the way towards `destination`.  One log line per
    record."""

    source: Hop
    ttl: int
    destination: IPv4Address


@dataclass
class RawTraceTree:
    """Direct tree-measurement output over (hop, ttl) nodes.

    `records` preserves emission order.  Nodes, edges and terminals are
    the derived view consumed by the filter: edges join ttl t to t+1 and
    are reconstructed per destination from consecutive-ttl records, which
    is what makes the text log a lossless serialization.  Chains that
    stopped early (their bottom record hit an already-seen node) are
    reattached through the records of whichever destination kept probing,
    because the shared (hop, ttl) node appears in that chain too.
    """

    records: list[ProbeRecord]
    nodes: set[TtlNode]
    edges: set[tuple[TtlNode, TtlNode]]
    terminals: dict[IPv4Address, TtlNode]
    complete: bool = True

    @classmethod
    def from_records(cls, records, complete: bool = True) -> "RawTraceTree":
        nodes: set[TtlNode] = set()
        by_dest: dict[IPv4Address, dict[int, list[Hop]]] = {}
        terminals: dict[IPv4Address, TtlNode] = {}
        for rec in records:
            nodes.add(TtlNode(rec.source, rec.ttl))
            buckets = by_dest.setdefault(rec.destination, {})
            hops = buckets.setdefault(rec.ttl, [])
            if rec.source not in hops:
                hops.append(rec.source)
            cur = terminals.get(rec.destination)
            if cur is None or rec.ttl > cur.ttl:
                terminals[rec.destination] = TtlNode(rec.source, rec.ttl)
        edges: set[tuple[TtlNode, TtlNode]] = set()
        for buckets in by_dest.values():
            for ttl, hops in buckets.items():
                uppers = buckets.get(ttl + 1)
                if not uppers:
                    continue
                for low in hops:
                    for high in uppers:
                        edges.add((TtlNode(low, ttl), TtlNode(high, ttl + 1)))
        return cls(list(records), nodes, edges, terminals, complete)


@dataclass(frozen=True)
class RoundMeta:
    """Header data of one serialized round."""

    index: int
    start_time: float
    end_time: float


def serialize_round(raw: RawTraceTree, index: int, start_time: float, end_time: float) -> str:
    """Serialize one round as a self-delimiting text block.

    `#round <index> <start> <end>`, then one `<source> <ttl> <destination>`
    line per record in emission order (stars as `*`), then `#end`.  Single
    space separators, newline line ends.
    """
    lines = [f"#round {index} {float(start_time)!r} {float(end_time)!r}"]
    for rec in raw.records:
        lines.append(f"{rec.source} {rec.ttl} {rec.destination}")
    lines.append("#end")
    return "\n".join(lines) + "\n"


def parse_round_log(text: str, max_ttl: int = MAX_TTL_DEFAULT) -> list[tuple[RoundMeta, RawTraceTree]]:
    """Parse a concatenation of round blocks back into raw trees.

    Inverse of serialize_round on well-formed input.  Malformed content
    raises RoundLogParseError with the offending line number; a ttl
    outside [1, max_ttl] raises TtlRangeError.
    """
    rounds: list[tuple[RoundMeta, RawTraceTree]] = []
    meta: RoundMeta | None = None
    records: list[ProbeRecord] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if line.startswith("#round"):
            if meta is not None:
                raise RoundLogParseError("new round before #end", line_no)
            parts = line.split(" ")
            if len(parts) != 4:
                raise RoundLogParseError("malformed round header", line_no)
            try:
                meta = RoundMeta(int(parts[1]), float(parts[2]), float(parts[3]))
            except ValueError:
                raise RoundLogParseError("malformed round header", line_no) from None
            records = []
        elif line == "#end":
            if meta is None:
                raise RoundLogParseError("#end without a round header", line_no)
            rounds.append((meta, RawTraceTree.from_records(records)))
            meta = None
        else:
            if meta is None:
                raise RoundLogParseError("content outside a round block", line_no)
            parts = line.split(" ")
            if len(parts) != 3:
                raise RoundLogParseError("expected 'source ttl destination'", line_no)
            src_txt, ttl_txt, dest_txt = parts
            try:
                ttl = int(ttl_txt)
            except ValueError:
                raise RoundLogParseError(f"bad ttl {ttl_txt!r}", line_no) from None
            if not 1 <= ttl <= max_ttl:
                raise TtlRangeError(f"ttl {ttl} outside [1, {max_ttl}]", line_no)
            try:
                destination = IPv4Address(dest_txt)
            except ValueError:
                raise RoundLogParseError(f"bad destination address {dest_txt!r}", line_no) from None
            if src_txt == "*":
                source: Hop = Star(str(destination))
            else:
                try:
                    source = Ip(IPv4Address(src_txt))
                except ValueError:
                    raise RoundLogParseError(f"bad source address {src_txt!r}", line_no) from None
            records.append(ProbeRecord(source, ttl, destination))
    if meta is not None:
        raise RoundLogParseError("missing #end for final round")
    return rounds


@dataclass
class FilteredTree:
    """Analysis-ready routing tree over hops, rooted at the monitor."""

    root: Hop
    nodes: set[Hop]
    edges: set[tuple[Hop, Hop]]  # parent -> child
    terminals: dict[IPv4Address, Hop]

    def parent_map(self) -> dict[Hop, Hop]:
        return {child: parent for parent, child in self.edges}

    def children_map(self) -> dict[Hop, list[Hop]]:
        children: dict[Hop, list[Hop]] = {n: [] for n in self.nodes}
        for parent, child in self.edges:
            children[parent].append(child)
        return children

    def observed_ips(self) -> set[IPv4Address]:
        """Distinct addresses observed by probing; stars and the monitor
        marker do not count."""
        return {n.address for n in self.nodes if isinstance(n, Ip) and n != self.root}

    def validate(self) -> None:
        """Check the structural invariants; raises ValueError on violation."""
        if self.root not in self.nodes:
            raise ValueError("root missing from node set")
        seen_children: set[Hop] = set()
        for parent, child in self.edges:
            if parent == child:
                raise ValueError(f"self-loop edge at {parent}")
            if child in seen_children:
                raise ValueError(f"{child} has two parents")
            seen_children.add(child)
        if self.root in seen_children:
            raise ValueError("root has a parent")
        if len(self.edges) != len(self.nodes) - 1:
            raise ValueError("edge count is not node count - 1")
        children = self.children_map()
        reached = {self.root}
        queue = deque([self.root])
        while queue:
            node = queue.popleft()
            for child in children[node]:
                if child not in reached:
                    reached.add(child)
                    queue.append(child)
        if reached != self.nodes:
            raise ValueError("tree is not connected")
        terminal_hops = set(self.terminals.values())
        for node in self.nodes:
            if node != self.root and not children[node] and node not in terminal_hops:
                raise ValueError(f"leaf {node} is not any destination's terminal")


@dataclass
class RoundRecord:
    """One completed measurement round."""

    index: int
    start_time: float
    end_time: float
    probes_sent: int
    tree: FilteredTree
    raw: RawTraceTree | None = None
    complete: bool = True


@dataclass
class RadarDataset:
    """An ordered sequence of measurement rounds from one monitor."""

    monitor_id: str
    rounds: list[RoundRecord] = field(default_factory=list)
    parameters: object | None = None
