"""Backward tree measurement over a probe transport.

Probing starts at each destination's assumed distance and walks ttl
downward, stopping a branch as soon as the reply source at that ttl has
already been seen in this round.  Every probe yields exactly one record
(the reply source, or a star on timeout), so the probe count equals the
record count and the view over (hop, ttl) pairs is a tree.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from ipaddress import IPv4Address

from .model import Ip, ProbeRecord, RawTraceTree, Star
from .transport import TransportBackpressureError, TransportError

ONE_PER_LOOP = "one_per_loop"
GREEDY = "greedy"
_STRATEGIES = (ONE_PER_LOOP, GREEDY)


@dataclass
class TracetreeConfig:
    max_ttl: int = 30
    timeout: float = 2.0
    send_strategy: str = ONE_PER_LOOP
    receive_strategy: str = ONE_PER_LOOP
    inter_probe_delay: float = 0.005

    def __post_init__(self):
        if not 1 <= self.max_ttl <= 64:
            raise ValueError(f"max_ttl must be in [1, 64], got {self.max_ttl}")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.send_strategy not in _STRATEGIES or self.receive_strategy not in _STRATEGIES:
            raise ValueError(f"strategies must be one of {_STRATEGIES}")


@dataclass(frozen=True)
class DestinationTask:
    destination: IPv4Address
    assumed_distance: int


@dataclass
class TracetreeStats:
    probes_sent: int = 0
    late_replies: int = 0
    duration: float = 0.0
    complete: bool = True


@dataclass
class TracetreeResult:
    raw: RawTraceTree
    distances: dict[IPv4Address, int | None]  # None: destination not seen
    stats: TracetreeStats


def tracetree(tasks, transport, config: TracetreeConfig | None = None, restart_from: int | None = None) -> TracetreeResult:
    """Run one backward tree measurement round.

    `restart_from` enables the distance-recovery rule the radar scheduler
    relies on: when the probe at a destination's assumed distance comes
    back without an echo from that destination (the distance was
    under-estimated), a fresh backward chain starts at `restart_from`
    within the same round.  Records from both chains are kept; the filter
    merges them.
    """
    config = config if config is not None else TracetreeConfig()
    tasks = list(tasks)
    if not tasks:
        raise ValueError("no destination tasks")
    destinations = [t.destination for t in tasks]
    if len(set(destinations)) != len(destinations):
        raise ValueError("duplicate destinations in task list")
    for task in tasks:
        if not 1 <= task.assumed_distance <= config.max_ttl:
            raise ValueError(
                f"assumed distance {task.assumed_distance} for {task.destination} "
                f"outside [1, {config.max_ttl}]"
            )
    if restart_from is not None and not 1 <= restart_from <= config.max_ttl:
        raise ValueError(f"restart_from {restart_from} outside [1, {config.max_ttl}]")

    prepare = getattr(transport, "prepare", None)
    if prepare is not None:
        prepare(destinations)

    clock = transport.clock
    to_probe: deque[tuple[IPv4Address, int]] = deque()
    queued: set[tuple[IPv4Address, int]] = set()
    inflight: dict[tuple[IPv4Address, int], object] = {}
    seen: set[tuple[IPv4Address, int]] = set()
    records: list[ProbeRecord] = []
    echo_at: dict[IPv4Address, int] = {}
    assumed = {t.destination: t.assumed_distance for t in tasks}
    reply_buffer: deque = deque()
    stats = TracetreeStats()
    started = clock.now()

    def push(dest: IPv4Address, ttl: int) -> None:
        # one probe per (destination, ttl) per round
        if ttl >= 1 and (dest, ttl) not in queued:
            queued.add((dest, ttl))
            to_probe.append((dest, ttl))

    for task in tasks:
        push(task.destination, task.assumed_distance)

    def emit(source, ttl: int, dest: IPv4Address, echo_from_dest: bool) -> None:
        records.append(ProbeRecord(source, ttl, dest))
        if restart_from is not None and ttl == assumed[dest] and not echo_from_dest:
            push(dest, restart_from)

    def send_one() -> None:
        dest, ttl = to_probe.popleft()
        while True:
            try:
                token = transport.send(dest, ttl)
                break
            except TransportBackpressureError as bp:
                clock.sleep(bp.retry_at - clock.now())
        inflight[(dest, ttl)] = token
        stats.probes_sent += 1
        clock.sleep(config.inter_probe_delay)

    def handle_reply(reply) -> None:
        key = (reply.token.destination, reply.token.ttl)
        token = inflight.get(key)
        if token is None or token.seq != reply.token.seq or reply.late:
            # answer after the timeout (or a stray): ignored, counted
            stats.late_replies += 1
            return
        del inflight[key]
        dest, ttl = key
        source = Ip(reply.source)
        echo = reply.kind == "echo_reply" and reply.source == dest
        if echo:
            echo_at[dest] = min(echo_at.get(dest, ttl), ttl)
        emit(source, ttl, dest, echo)
        if (reply.source, ttl) not in seen:
            seen.add((reply.source, ttl))
            if ttl > 1:
                push(dest, ttl - 1)

    try:
        while to_probe or inflight:
            if to_probe:
                send_one()
                while to_probe and config.send_strategy == GREEDY:
                    send_one()
            if not reply_buffer and inflight:
                if to_probe:
                    deadline = clock.now()
                else:
                    # tokens sit in send order, so the first one expires first
                    deadline = next(iter(inflight.values())).sent_at + config.timeout
                reply_buffer.extend(transport.poll(deadline))
            while reply_buffer:
                handle_reply(reply_buffer.popleft())
                if config.receive_strategy != GREEDY:
                    break
            now = clock.now()
            # same float expression as the poll deadline (sent_at + timeout):
            # a subtraction here can disagree by one ulp and stall the sweep
            if inflight and now >= next(iter(inflight.values())).sent_at + config.timeout:
                expired = [k for k, t in inflight.items() if now >= t.sent_at + config.timeout]
                for key in expired:
                    token = inflight.pop(key)
                    transport.expire(token)
                    dest, ttl = key
                    emit(Star(str(dest)), ttl, dest, False)
                    if ttl > 1:
                        push(dest, ttl - 1)
    except TransportError:
        stats.complete = False

    stats.duration = clock.now() - started
    raw = RawTraceTree.from_records(records, complete=stats.complete)
    distances = {d: echo_at.get(d) for d in destinations}
    return TracetreeResult(raw=raw, distances=distances, stats=stats)
