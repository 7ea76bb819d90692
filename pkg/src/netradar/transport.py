"""Probe transports: the uniform send/poll contract and the simulator
backend.

A transport issues one ProbeToken per emitted probe and later surfaces
matched replies through poll().  Replies to tokens the caller already
expired are still delivered, flagged late.  The real ICMP backend in
`netradar.icmp` follows the same contract.
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass
from ipaddress import IPv4Address

from .model import Ip
from .simnet import ECHO_REPLY, SILENCE, TIME_EXCEEDED, UNREACHABLE, SimState, Topology


class TransportError(RuntimeError):
    """Transport failure, distinct from 'no replies arrived'."""


class TransportClosedError(TransportError):
    """The transport was used after close()."""


class TransportBackpressureError(TransportError):
    """Sending now would violate the rate cap; retry at `retry_at`."""

    def __init__(self, retry_at: float):
        super().__init__(f"send rate cap exceeded, retry at {retry_at:.6f}")
        self.retry_at = retry_at


@dataclass(frozen=True)
class ProbeToken:
    """Identifies one in-flight probe within a measurement."""

    destination: IPv4Address
    ttl: int
    sent_at: float
    seq: int


@dataclass(frozen=True)
class TransportReply:
    """A wire answer matched back to its probe token."""

    token: ProbeToken
    source: IPv4Address
    kind: str  # time_exceeded | echo_reply | unreachable
    received_at: float
    late: bool = False


@dataclass
class TransportStats:
    sent: int = 0
    delivered: int = 0
    late: int = 0
    unanswered: int = 0  # silent or dead-end outcomes: nothing will arrive
    dropped_unmatched: int = 0
    backpressure_events: int = 0


class SimClock:
    """Virtual clock owned by a simulator transport; sleeping advances it."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self._now += seconds

    def advance_to(self, t: float) -> None:
        if t > self._now:
            self._now = t


class WallClock:
    def now(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class SimTransport:
    """Transport backed by the deterministic simulator.

    Replies are synthesized at send time and delivered through poll()
    after a round trip of 2 * per_hop_delay * hops on the virtual clock.
    Silent and dead-end probes deliver nothing, so the caller's timeout
    logic fires, exactly as on the wire.
    """

    def __init__(
        self,
        topology: Topology | SimState,
        *,
        per_hop_delay: float = 0.01,
        rate_cap: float = 200.0,
        start_time: float = 0.0,
        clock: SimClock | None = None,
    ):
        self.state = topology if isinstance(topology, SimState) else SimState(topology)
        self.clock = clock if clock is not None else SimClock(start_time)
        self.per_hop_delay = per_hop_delay
        self.rate_cap = rate_cap
        self.stats = TransportStats()
        self._pending: list[tuple[float, int, TransportReply]] = []
        self._expired: set[int] = set()
        self._seq = 0
        self._last_send: float | None = None
        self._closed = False

    @property
    def monitor_hop(self) -> Ip:
        return Ip(self.state.addresses[self.state.monitor])

    def prepare(self, destinations) -> None:
        self.state.prepare_destinations(destinations)

    def _check_open(self) -> None:
        if self._closed:
            raise TransportClosedError("transport is closed")

    def send(self, destination, ttl: int) -> ProbeToken:
        """Emit one probe; returns its token immediately."""
        self._check_open()
        now = self.clock.now()
        if self.rate_cap:
            min_gap = 1.0 / self.rate_cap
            # 1% slack so float rounding of paced send times never stalls a caller
            if self._last_send is not None and now - self._last_send < min_gap * 0.99:
                self.stats.backpressure_events += 1
                raise TransportBackpressureError(self._last_send + min_gap)
        self.state.apply_events(now)
        destination = (
            destination if isinstance(destination, IPv4Address) else IPv4Address(destination)
        )
        outcome = self.state.route_probe(destination, ttl, now)
        self._seq += 1
        token = ProbeToken(destination, ttl, now, self._seq)
        self._last_send = now
        self.stats.sent += 1
        if outcome.kind in (TIME_EXCEEDED, ECHO_REPLY):
            arrival = now + 2.0 * self.per_hop_delay * outcome.hops
            reply = TransportReply(token, outcome.source, outcome.kind, arrival)
            heapq.heappush(self._pending, (arrival, token.seq, reply))
        else:
            self.stats.unanswered += 1
        return token

    def poll(self, deadline: float) -> list[TransportReply]:
        """Deliver replies.  Advances the virtual clock no further than the
        earliest pending arrival, or to the deadline when nothing is due."""
        self._check_open()
        now = self.clock.now()
        deadline = max(deadline, now)
        if self._pending and self._pending[0][0] <= deadline:
            self.clock.advance_to(self._pending[0][0])
        else:
            self.clock.advance_to(deadline)
        now = self.clock.now()
        out = []
        while self._pending and self._pending[0][0] <= now:
            _, seq, reply = heapq.heappop(self._pending)
            if seq in self._expired:
                self._expired.discard(seq)
                self.stats.late += 1
                reply = TransportReply(
                    reply.token, reply.source, reply.kind, reply.received_at, late=True
                )
            else:
                self.stats.delivered += 1
            out.append(reply)
        return out

    def expire(self, token: ProbeToken) -> None:
        """The caller timed this token out; a later arrival is flagged late."""
        self._expired.add(token.seq)

    def close(self) -> None:
        self._closed = True
