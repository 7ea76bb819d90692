"""Periodic measurement rounds with per-destination distance caching.

Each round runs one tree measurement, filters it, persists it, then
updates the distance cache: destinations answer next round from the
distance they answered at this round; destinations that were not seen
fall back to the default maximal distance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from ipaddress import IPv4Address
from pathlib import Path

from .filtering import filter_tree
from .model import Hop, RadarDataset, RoundRecord, serialize_round
from .tracetree import DestinationTask, TracetreeConfig, tracetree

DEFAULT_INTER_ROUND_DELAY = 600.0  # ten minutes
DEFAULT_DISTANCE = 30


@dataclass
class RadarConfig:
    destinations: list[IPv4Address]
    inter_round_delay: float = DEFAULT_INTER_ROUND_DELAY
    default_distance: int = DEFAULT_DISTANCE
    rounds: int | None = None  # None: run until interrupted
    tracetree: TracetreeConfig = field(default_factory=TracetreeConfig)

    def __post_init__(self):
        if self.inter_round_delay < 0:
            raise ValueError("inter_round_delay must be >= 0")
        if self.default_distance != self.tracetree.max_ttl:
            raise ValueError(
                f"default_distance ({self.default_distance}) must equal "
                f"tracetree.max_ttl ({self.tracetree.max_ttl})"
            )


def load_destinations(path) -> list[IPv4Address]:
    """Read a destination list: one dotted quad per line, `#` comments and
    blank lines ignored."""
    destinations = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                destinations.append(IPv4Address(text))
            except ValueError:
                raise ValueError(f"{path}:{line_no}: bad destination address {text!r}") from None
    return destinations


def next_round_tasks(cache: dict, destinations, default_distance: int = DEFAULT_DISTANCE) -> list[DestinationTask]:
    """Each destination probes from its cached distance, or from the
    default maximal distance when the cache has nothing for it."""
    return [
        DestinationTask(dest, cache.get(dest, default_distance)) for dest in destinations
    ]


def update_cache(cache: dict, observed_distances: dict) -> dict:
    """Fold one round's observations into the cache.  Destinations seen
    this round keep their observed distance; destinations not seen are
    evicted so the next round starts from the default."""
    updated = dict(cache)
    for dest, distance in observed_distances.items():
        if distance is None:
            updated.pop(dest, None)
        else:
            updated[dest] = distance
    return updated


class DatasetWriter:
    """Round sink appending serialized round blocks to a file, in order."""

    def __init__(self, path):
        self._path = Path(path)
        self._fh = open(self._path, "w", encoding="utf-8", newline="")

    def write(self, record: RoundRecord) -> None:
        if record.raw is None:
            raise ValueError("cannot serialize a round without its raw tree")
        self._fh.write(
            serialize_round(record.raw, record.index, record.start_time, record.end_time)
        )
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def run_radar(config: RadarConfig, transport, sink=None, monitor: Hop | None = None) -> RadarDataset:
    """Run measurement rounds until `config.rounds` complete or the caller
    interrupts; partial datasets are valid.

    Round pacing is start-to-start: the next round begins
    inter_round_delay after the previous one began, or immediately when a
    round overruns the delay.  A transport fault marks the round
    incomplete and the scheduler moves on.
    """
    if not config.destinations:
        raise ValueError("no destinations configured")
    root = monitor if monitor is not None else transport.monitor_hop
    clock = transport.clock
    cache: dict[IPv4Address, int] = {}
    dataset = RadarDataset(monitor_id=str(root), parameters=config)
    index = 0
    next_start = clock.now()
    try:
        while config.rounds is None or index < config.rounds:
            wait = next_start - clock.now()
            if wait > 0:
                clock.sleep(wait)
            tasks = next_round_tasks(cache, config.destinations, config.default_distance)
            started = clock.now()
            result = tracetree(
                tasks, transport, config.tracetree, restart_from=config.default_distance
            )
            finished = clock.now()
            tree, _ = filter_tree(result.raw, root)
            record = RoundRecord(
                index=index,
                start_time=started,
                end_time=finished,
                probes_sent=result.stats.probes_sent,
                tree=tree,
                raw=result.raw,
                complete=result.stats.complete,
            )
            if sink is not None:
                sink.write(record)
            dataset.rounds.append(record)
            cache = update_cache(cache, result.distances)
            next_start = started + config.inter_round_delay
            index += 1
    except KeyboardInterrupt:
        pass
    return dataset
