"""Shared fixtures: canonical topologies and small tree builders."""
from __future__ import annotations

from ipaddress import IPv4Address

import pytest

from netradar.model import FilteredTree, Hop, Ip, RadarDataset, RoundRecord, Star
from netradar.simnet import Topology, load_topology


def addr(text) -> IPv4Address:
    return IPv4Address(text)


def hop(text: str) -> Hop:
    """'1.2.3.4' -> Ip; '*key' -> Star(key)."""
    if text.startswith("*"):
        return Star(text[1:])
    return Ip(IPv4Address(text))


def make_tree(root: str, edges, terminals) -> FilteredTree:
    """Hand-build a FilteredTree from string hops.

    edges: [(parent, child), ...]; terminals: {destination: hop}.
    """
    root_hop = hop(root)
    edge_set = {(hop(p), hop(c)) for p, c in edges}
    nodes = {root_hop} | {h for e in edge_set for h in e}
    terms = {IPv4Address(d): hop(h) for d, h in terminals.items()}
    return FilteredTree(root=root_hop, nodes=nodes, edges=edge_set, terminals=terms)


def dataset_from_trees(trees, monitor_id="0.0.0.0", first_index=0) -> RadarDataset:
    rounds = [
        RoundRecord(
            index=first_index + i,
            start_time=float(i),
            end_time=float(i) + 0.5,
            probes_sent=0,
            tree=tree,
        )
        for i, tree in enumerate(trees)
    ]
    return RadarDataset(monitor_id=monitor_id, rounds=rounds)


CHAIN_DOC = {
    "monitor": "mon",
    "nodes": {
        "mon": "10.0.0.1",
        "r1": "10.0.0.2",
        "r2": "10.0.0.3",
        "d": "10.0.0.4",
    },
    "links": [["mon", "r1"], ["r1", "r2"], ["r2", "d"]],
}


@pytest.fixture
def chain_topology() -> Topology:
    """monitor -> r1 -> r2 -> d, all responsive."""
    return load_topology(dict(CHAIN_DOC))


def fig1_analog_doc() -> dict:
    """A topology exhibiting every pathology at once: a silent router, a
    per-destination balancer, a per-packet balancer, three destinations.

    monitor a -> b (per-destination balancer)
      b -> d -> g -> l(silent) -> n        (n at distance 5)
      b -> f -> j -> o                     (o at distance 4)
      b -> c -> e (per-packet: i | h) -> m -> p   (p at distance 6)
    """
    return {
        "monitor": "a",
        "nodes": {
            "a": "10.0.1.1",
            "b": "10.0.1.2",
            "c": "10.0.1.3",
            "d": "10.0.1.4",
            "e": "10.0.1.5",
            "f": "10.0.1.6",
            "g": "10.0.1.7",
            "h": "10.0.1.8",
            "i": "10.0.1.9",
            "j": "10.0.1.10",
            "l": {"address": "10.0.1.12", "policy": "silent"},
            "m": "10.0.1.13",
            "n": "10.0.1.14",
            "o": "10.0.1.15",
            "p": "10.0.1.16",
        },
        "links": [
            ["a", "b"],
            ["b", "c"],
            ["b", "d"],
            ["b", "f"],
            ["c", "e"],
            ["d", "g"],
            ["e", "h"],
            ["e", "i"],
            ["f", "j"],
            ["g", "l"],
            ["h", "m"],
            ["i", "m"],
            ["j", "o"],
            ["l", "n"],
            ["m", "p"],
        ],
        "balancers": {
            "b": {"per_destination": {"10.0.1.14": "d", "10.0.1.15": "f"}},
            "e": {"per_packet": ["i", "h"]},
        },
    }


@pytest.fixture
def fig1_topology() -> Topology:
    return load_topology(fig1_analog_doc())


def star_topology_doc(leaves: int) -> dict:
    """monitor -> hub -> leaf_i: every destination shares the first link."""
    nodes = {"mon": "10.1.0.1", "hub": "10.1.0.2"}
    links = [["mon", "hub"]]
    for i in range(leaves):
        name = f"leaf{i}"
        nodes[name] = str(IPv4Address(int(IPv4Address("10.1.1.0")) + i))
        links.append(["hub", name])
    return {"monitor": "mon", "nodes": nodes, "links": links}


def star_destinations(leaves: int) -> list[IPv4Address]:
    return [IPv4Address(int(IPv4Address("10.1.1.0")) + i) for i in range(leaves)]


def shared_prefix_doc() -> dict:
    """Two destinations behind a shared two-hop prefix.

    monitor -> r1 -> r2 -> {t1 -> d1, t2 -> d2}; both at distance 4.
    """
    return {
        "monitor": "mon",
        "nodes": {
            "mon": "10.2.0.1",
            "r1": "10.2.0.2",
            "r2": "10.2.0.3",
            "t1": "10.2.0.4",
            "t2": "10.2.0.5",
            "d1": "10.2.0.6",
            "d2": "10.2.0.7",
        },
        "links": [
            ["mon", "r1"],
            ["r1", "r2"],
            ["r2", "t1"],
            ["r2", "t2"],
            ["t1", "d1"],
            ["t2", "d2"],
        ],
    }
