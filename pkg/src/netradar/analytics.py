"""Event detection over round sequences.

Distinct-address series (per round and windowed), robust peak flagging,
new-address connected components with discovery times, and before/after
event graphs.  Stars are non-observations and never count as addresses;
connectivity is undirected.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from collections import Counter, deque
from dataclasses import dataclass
from ipaddress import IPv4Address

import numpy as np
from scipy import stats as scipy_stats

from .model import FilteredTree, Ip, RadarDataset

Series = "list[tuple[int, int]]"

SLIDING = "sliding"
BLOCKED = "blocked"


def per_round_ip_count(dataset: RadarDataset) -> list[tuple[int, int]]:
    """(round index, distinct addresses observed that round)."""
    return [(rec.index, len(rec.tree.observed_ips())) for rec in dataset.rounds]


def windowed_ip_count(dataset: RadarDataset, window: int = 10, mode: str = SLIDING) -> list[tuple[int, int]]:
    """Distinct addresses over `window` consecutive rounds.

    sliding: one value per round from the window-th onward, indexed by the
    window's last round.  blocked: one value per complete disjoint block,
    indexed likewise.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if mode not in (SLIDING, BLOCKED):
        raise ValueError(f"mode must be {SLIDING!r} or {BLOCKED!r}")
    per_round = [(rec.index, rec.tree.observed_ips()) for rec in dataset.rounds]
    out = []
    if mode == SLIDING:
        for i in range(window - 1, len(per_round)):
            union: set = set()
            for _, ips in per_round[i - window + 1 : i + 1]:
                union |= ips
            out.append((per_round[i][0], len(union)))
    else:
        for i in range(0, len(per_round) - window + 1, window):
            union = set()
            for _, ips in per_round[i : i + window]:
                union |= ips
            out.append((per_round[i + window - 1][0], len(union)))
    return out


@dataclass
class PeakDetection:
    indices: list[int]
    degenerate: bool  # zero MAD: scale estimated from the relative floor
    median: float
    threshold: float


def detect_peaks(
    series,
    direction: str = "up",
    k: float = 5.0,
    min_scale_frac: float = 0.05,
) -> PeakDetection:
    """Flag points deviating from the series median by more than k times
    the median absolute deviation, in one direction.

    A constant series has zero MAD and flags nothing.  A series whose MAD
    is zero without being constant (more than half the points identical)
    falls back to a scale of min_scale_frac * |median|, so only deviations
    beyond that fraction of the typical level count as peaks.
    """
    if len(series) < 10:
        raise ValueError(f"need at least 10 points, got {len(series)}")
    if direction not in ("up", "down"):
        raise ValueError("direction must be 'up' or 'down'")
    values = np.asarray([value for _, value in series], dtype=float)
    median = float(np.median(values))
    mad = float(np.median(np.abs(values - median)))
    degenerate = mad == 0.0
    scale = mad if mad > 0.0 else min_scale_frac * max(abs(median), 1.0)
    threshold = k * scale
    deltas = values - median
    if direction == "up":
        flagged = deltas > threshold
    else:
        flagged = -deltas > threshold
    indices = [series[i][0] for i in np.nonzero(flagged)[0]]
    return PeakDetection(indices=indices, degenerate=degenerate, median=median, threshold=threshold)


def value_distribution(series, bin_width: int = 1) -> dict[int, int]:
    """Histogram of series values, optionally bucketed by bin_width."""
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1")
    counts: Counter = Counter()
    for _, value in series:
        counts[(value // bin_width) * bin_width] += 1
    return dict(counts)


def _rounds_in(dataset: RadarDataset, bounds) -> list:
    start, stop = bounds
    return [rec for rec in dataset.rounds if start <= rec.index < stop]


def _check_ranges(reference, observation) -> None:
    for name, (start, stop) in (("reference", reference), ("observation", observation)):
        if stop <= start:
            raise ValueError(f"{name} range [{start}, {stop}) is empty")
    if reference[1] > observation[0]:
        raise ValueError("reference must end before the observation starts")


def new_addresses(dataset: RadarDataset, reference, observation) -> set[IPv4Address]:
    """Addresses seen in the observation rounds [start, stop) and in none
    of the reference rounds [start, stop)."""
    _check_ranges(reference, observation)
    reference_rounds = _rounds_in(dataset, reference)
    if not reference_rounds:
        raise ValueError(f"no rounds in reference range {reference}")
    observation_rounds = _rounds_in(dataset, observation)
    if not observation_rounds:
        raise ValueError(f"no rounds in observation range {observation}")
    seen_before: set[IPv4Address] = set()
    for rec in reference_rounds:
        seen_before |= rec.tree.observed_ips()
    seen_during: set[IPv4Address] = set()
    for rec in observation_rounds:
        seen_during |= rec.tree.observed_ips()
    return seen_during - seen_before


@dataclass(frozen=True)
class NewAddressComponent:
    """Maximal set of new addresses mutually connected through new
    addresses only, with the rounds its first and last member were first
    sighted."""

    addresses: frozenset[IPv4Address]
    first_round: int
    last_round: int

    @property
    def size(self) -> int:
        return len(self.addresses)


def discovery_time(component: NewAddressComponent) -> int:
    """Rounds needed to discover the whole component: last first-sighting
    round minus first first-sighting round, plus one."""
    return component.last_round - component.first_round + 1


def _ip_edges(tree: FilteredTree):
    for parent, child in tree.edges:
        if parent == tree.root or not isinstance(parent, Ip) or not isinstance(child, Ip):
            continue
        yield parent.address, child.address


def new_address_components(dataset: RadarDataset, reference, observation) -> list[NewAddressComponent]:
    """Connected components of the new-address set, in the union graph of
    the observation rounds (undirected, stars excluded)."""
    fresh = new_addresses(dataset, reference, observation)
    observation_rounds = _rounds_in(dataset, observation)
    first_seen: dict[IPv4Address, int] = {}
    adjacency: dict[IPv4Address, set[IPv4Address]] = {a: set() for a in fresh}
    for rec in observation_rounds:
        for address in rec.tree.observed_ips():
            if address in adjacency and address not in first_seen:
                first_seen[address] = rec.index
        for a, b in _ip_edges(rec.tree):
            if a in adjacency and b in adjacency:
                adjacency[a].add(b)
                adjacency[b].add(a)
    components = []
    remaining = set(fresh)
    for start in sorted(fresh):
        if start not in remaining:
            continue
        queue = deque([start])
        remaining.discard(start)
        members = {start}
        while queue:
            node = queue.popleft()
            for neighbour in adjacency[node]:
                if neighbour in remaining:
                    remaining.discard(neighbour)
                    members.add(neighbour)
                    queue.append(neighbour)
        sightings = [first_seen[m] for m in members]
        components.append(
            NewAddressComponent(
                addresses=frozenset(members),
                first_round=min(sightings),
                last_round=max(sightings),
            )
        )
    components.sort(key=lambda c: (c.first_round, c.last_round, min(c.addresses)))
    return components


def component_size_distribution(components) -> dict[int, int]:
    """{component size: number of components}."""
    return dict(Counter(c.size for c in components))


@dataclass
class EventGraph:
    """Union of the before-window rounds plus the event round; edges only
    present after the event are flagged new."""

    nodes: set[IPv4Address]
    edges: set[tuple[IPv4Address, IPv4Address]]
    new_edges: set[tuple[IPv4Address, IPv4Address]]

    def to_dot(self, name: str = "event") -> str:
        lines = [f"graph {name} {{", "  node [shape=point, width=0.08];"]
        ids = {a: f"n{i}" for i, a in enumerate(sorted(self.nodes))}
        for address, node_id in ids.items():
            lines.append(f'  {node_id} [tooltip="{address}"];')
        for a, b in sorted(self.edges):
            style = ' [penwidth=2.5, color=black]' if (a, b) in self.new_edges else ' [color=gray60]'
            lines.append(f"  {ids[a]} -- {ids[b]}{style};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def event_graph(dataset: RadarDataset, event_round: int, before_window: int = 100) -> EventGraph:
    """Merge `before_window` rounds before the event with the single round
    at `event_round`, flagging edges absent from the whole before-window."""
    if before_window < 1:
        raise ValueError("before_window must be >= 1")
    first_index = dataset.rounds[0].index if dataset.rounds else 0
    start = event_round - before_window
    if start < first_index:
        raise ValueError(
            f"before-window [{start}, {event_round}) starts before the dataset ({first_index})"
        )
    before = _rounds_in(dataset, (start, event_round))
    if len(before) < before_window:
        raise ValueError("before-window is not fully covered by the dataset")
    event_records = _rounds_in(dataset, (event_round, event_round + 1))
    if not event_records:
        raise ValueError(f"no round with index {event_round}")
    before_edges: set[tuple[IPv4Address, IPv4Address]] = set()
    nodes: set[IPv4Address] = set()
    for rec in before:
        nodes |= rec.tree.observed_ips()
        for a, b in _ip_edges(rec.tree):
            before_edges.add((min(a, b), max(a, b)))
    after_edges: set[tuple[IPv4Address, IPv4Address]] = set()
    for rec in event_records:
        nodes |= rec.tree.observed_ips()
        for a, b in _ip_edges(rec.tree):
            after_edges.add((min(a, b), max(a, b)))
    return EventGraph(
        nodes=nodes,
        edges=before_edges | after_edges,
        new_edges=after_edges - before_edges,
    )


def size_vs_discovery_correlation(components):
    """(size, discovery_time) pairs plus their Spearman rank correlation.
    All-tied ranks (zero variance) report a coefficient of 0.0."""
    if len(components) < 2:
        raise ValueError("need at least 2 components")
    pairs = [(c.size, discovery_time(c)) for c in components]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy_stats.ConstantInputWarning)
        rho = scipy_stats.spearmanr(
            [size for size, _ in pairs], [time for _, time in pairs]
        ).statistic
    if math.isnan(rho):
        rho = 0.0
    return pairs, float(rho)


# -- plot-ready emitters -----------------------------------------------------


def series_to_csv(series, value_name: str = "value") -> str:
    """CSV with columns: round,<value_name>."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["round", value_name])
    for index, value in series:
        writer.writerow([index, value])
    return buf.getvalue()


def histogram_to_csv(histogram: dict, key_name: str, count_name: str = "count") -> str:
    """CSV with columns: <key_name>,<count_name>, keys ascending."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([key_name, count_name])
    for key in sorted(histogram):
        writer.writerow([key, histogram[key]])
    return buf.getvalue()


def components_to_csv(components) -> str:
    """CSV with columns: size,first_round,last_round,discovery_time,addresses
    (addresses joined by `|`)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["size", "first_round", "last_round", "discovery_time", "addresses"])
    for comp in components:
        writer.writerow(
            [
                comp.size,
                comp.first_round,
                comp.last_round,
                discovery_time(comp),
                "|".join(str(a) for a in sorted(comp.addresses)),
            ]
        )
    return buf.getvalue()


def correlation_to_csv(pairs, rho: float) -> str:
    """CSV of (size, discovery_time) pairs; the coefficient rides in a
    leading comment line."""
    buf = io.StringIO()
    buf.write(f"# spearman_rho={rho}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["size", "discovery_time"])
    for size, time in pairs:
        writer.writerow([size, time])
    return buf.getvalue()


def curves_to_csv(curve, x_name: str, y_name: str = "distinct_ips") -> str:
    """CSV of a cumulative curve."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([x_name, y_name])
    for x, y in curve:
        writer.writerow([x, y])
    return buf.getvalue()


def component_neighborhood_dot(dataset: RadarDataset, reference, observation, name: str = "components") -> str:
    """DOT rendering of the observation-window union graph with new
    addresses drawn solid black, as in island figures."""
    fresh = new_addresses(dataset, reference, observation)
    edges: set[tuple[IPv4Address, IPv4Address]] = set()
    nodes: set[IPv4Address] = set()
    for rec in _rounds_in(dataset, observation):
        nodes |= rec.tree.observed_ips()
        for a, b in _ip_edges(rec.tree):
            edges.add((min(a, b), max(a, b)))
    lines = [f"graph {name} {{"]
    ids = {a: f"n{i}" for i, a in enumerate(sorted(nodes))}
    for address, node_id in ids.items():
        if address in fresh:
            lines.append(f'  {node_id} [label="{address}", style=filled, fillcolor=black, fontcolor=white];')
        else:
            lines.append(f'  {node_id} [label="{address}"];')
    for a, b in sorted(edges):
        lines.append(f"  {ids[a]} -- {ids[b]};")
    lines.append("}")
    return "\n".join(lines) + "\n"
