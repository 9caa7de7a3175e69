"""Deterministic discrete-event emulation of one bottleneck link.

The link serves packets at trace-defined delivery opportunities (one MTU per
timestamp, millisecond granularity, same on-disk format as Mahimahi uplink
traces), ahead of a drop-tail queue and optional stochastic loss applied at
enqueue. The data direction is the only bottleneck; the ACK return path is
lossless and queue-free, adding one propagation delay.

Event ordering is fully deterministic: events fire in timestamp order, ties
broken by class (deliveries, then sends, then timers) and then by scheduling
order. All times are integer milliseconds.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

MTU_BYTES = 1500

KLASS_DELIVERY = 0
KLASS_SEND = 1
KLASS_TIMER = 2


class TraceError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message)
        self.line = line


class EmptyTraceError(TraceError):
    """Trace text contained no timestamps."""


class NonMonotoneError(TraceError):
    """A trace timestamp went backwards."""


class TraceParseError(TraceError):
    """A trace line was not a non-negative integer."""


@dataclass(frozen=True)
class TraceSchedule:
    """Ordered per-packet delivery opportunities defining capacity over time."""

    opportunities: np.ndarray  # int64 ms, non-decreasing
    mtu: int = MTU_BYTES
    duration: int = 0  # ms, >= last opportunity

    def __post_init__(self) -> None:
        opps = np.asarray(self.opportunities, dtype=np.int64)
        object.__setattr__(self, "opportunities", opps)
        if opps.size:
            if np.any(np.diff(opps) < 0):
                raise NonMonotoneError("opportunities must be non-decreasing")
            if opps[0] < 0:
                raise TraceParseError("opportunities must be non-negative")
            if self.duration < int(opps[-1]):
                raise ValueError("duration must cover the last opportunity")

    def mean_rate_mbps(self) -> float:
        """Average delivery capacity over the trace duration."""
        if self.duration <= 0:
            return 0.0
        return self.opportunities.size * self.mtu * 8.0 / (self.duration * 1000.0)

    def count_upto(self, t: int, wraparound: bool = False) -> int:
        """Number of opportunities with timestamp <= t (t >= 0)."""
        opps = self.opportunities
        if opps.size == 0 or t < 0:
            return 0
        if not wraparound:
            return int(np.searchsorted(opps, t, side="right"))
        period = self.duration
        cycles, rem = divmod(t, period)
        return int(cycles) * opps.size + int(np.searchsorted(opps, rem, side="right"))

    def count_in_window(self, a: int, b: int, wraparound: bool = False) -> int:
        """Opportunities in (a, b]."""
        return self.count_upto(b, wraparound) - self.count_upto(a, wraparound)

    def time_of(self, k: int, wraparound: bool = False) -> Optional[int]:
        """Timestamp of the k-th opportunity (0-based) in the unrolled schedule."""
        n = self.opportunities.size
        if n == 0:
            return None
        if not wraparound:
            return int(self.opportunities[k]) if k < n else None
        cycle, idx = divmod(k, n)
        return cycle * self.duration + int(self.opportunities[idx])


def parse_trace(text: str | bytes) -> TraceSchedule:
    """Read newline-separated integer millisecond timestamps."""
    if isinstance(text, bytes):
        text = text.decode("ascii", errors="replace")
    stamps: list[int] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        try:
            v = int(s)
        except ValueError:
            raise TraceParseError(f"line {line_no}: not an integer: {s!r}", line_no) from None
        if v < 0:
            raise TraceParseError(f"line {line_no}: negative timestamp {v}", line_no)
        if stamps and v < stamps[-1]:
            raise NonMonotoneError(
                f"line {line_no}: timestamp {v} < previous {stamps[-1]}", line_no)
        stamps.append(v)
    if not stamps:
        raise EmptyTraceError("trace contains no timestamps")
    return TraceSchedule(np.array(stamps, dtype=np.int64), duration=stamps[-1])


def load_trace(path: str) -> TraceSchedule:
    with open(path, "rb") as f:
        return parse_trace(f.read())


def save_trace(path: str, trace: TraceSchedule) -> None:
    with open(path, "w") as f:
        for t in trace.opportunities:
            f.write(f"{int(t)}\n")


def generate_poisson_trace(mean_rate_mbps: float, duration_ms: int,
                           rng: np.random.Generator, mtu: int = MTU_BYTES) -> TraceSchedule:
    """Per-millisecond delivery counts drawn from a Poisson law at the target rate."""
    if mean_rate_mbps <= 0.0:
        raise ValueError("mean_rate_mbps must be > 0")
    lam = mean_rate_mbps * 1e3 / (8.0 * mtu)  # packets per ms
    counts = rng.poisson(lam, size=duration_ms)
    opportunities = np.repeat(np.arange(duration_ms, dtype=np.int64), counts)
    return TraceSchedule(opportunities, mtu=mtu, duration=duration_ms)


def generate_constant_trace(rate_mbps: float, duration_ms: int,
                            mtu: int = MTU_BYTES) -> TraceSchedule:
    """Evenly spaced opportunities averaging exactly the requested rate."""
    if rate_mbps <= 0.0:
        raise ValueError("rate_mbps must be > 0")
    interval = 8.0 * mtu / (rate_mbps * 1e3)  # ms per packet
    n = int(duration_ms / interval)
    opportunities = np.floor(np.arange(1, n + 1) * interval).astype(np.int64)
    return TraceSchedule(opportunities, mtu=mtu, duration=duration_ms)


@dataclass(frozen=True)
class LinkConfig:
    trace: TraceSchedule
    one_way_delay: int = 30  # ms
    queue_capacity: int = 60  # packets
    stochastic_loss: float = 0.0
    wraparound: bool = True

    def __post_init__(self) -> None:
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        if self.one_way_delay < 0:
            raise ValueError("one_way_delay must be >= 0")
        if not (0.0 <= self.stochastic_loss <= 1.0):
            raise ValueError("stochastic_loss must be in [0,1]")
        if self.wraparound and self.trace.duration < 1:
            raise ValueError("wraparound needs a trace with duration >= 1 ms")


@dataclass(frozen=True)
class Packet:
    seq: int
    size: int
    sent_at: int
    flow_id: int

    def __post_init__(self) -> None:
        if self.size > MTU_BYTES:
            raise ValueError(f"packet size {self.size} exceeds MTU {MTU_BYTES}")


class EnqueueResult(Enum):
    ACCEPTED = "accepted"
    DROPPED_TAIL = "dropped_tail"
    DROPPED_STOCHASTIC = "dropped_stochastic"


def queueing_delay_of(pkt: Packet, delivered_at: int, one_way_delay: int) -> int:
    """Time the packet spent waiting for a delivery opportunity."""
    qdelay = delivered_at - pkt.sent_at - one_way_delay
    if qdelay < 0:
        raise AssertionError(f"negative queueing delay {qdelay} for seq {pkt.seq}")
    return qdelay


class Link:
    """Trace-served drop-tail queue with optional stochastic loss at enqueue."""

    def __init__(self, config: LinkConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.queue: deque[Packet] = deque()
        self._cursor = 0  # all opportunities <= cursor are spent
        self._next_k = 0  # index of the first unspent opportunity
        self.accepted = 0
        self.delivered = 0
        self.dropped_tail = 0
        self.dropped_stochastic = 0
        self.max_queue_seen = 0

    @property
    def now(self) -> int:
        return self._cursor

    def queue_len(self) -> int:
        return len(self.queue)

    def enqueue(self, pkt: Packet, now: int) -> EnqueueResult:
        """Stochastic drop first (one uniform draw), then tail-drop check, then FIFO."""
        p = self.config.stochastic_loss
        if p > 0.0 and self.rng.uniform() < p:
            self.dropped_stochastic += 1
            return EnqueueResult.DROPPED_STOCHASTIC
        if len(self.queue) >= self.config.queue_capacity:
            self.dropped_tail += 1
            return EnqueueResult.DROPPED_TAIL
        self.queue.append(pkt)
        self.accepted += 1
        self.max_queue_seen = max(self.max_queue_seen, len(self.queue))
        return EnqueueResult.ACCEPTED

    def _opportunity_time(self, k: int) -> Optional[int]:
        return self.config.trace.time_of(k, self.config.wraparound)

    def next_service_time(self) -> Optional[int]:
        """Timestamp of the next unspent opportunity, or None when the trace ends."""
        return self._opportunity_time(self._next_k)

    def advance(self, to: int) -> list[tuple[Packet, int]]:
        """Serve opportunities in (cursor, to]; one head packet each.

        Returns (packet, delivered_at) pairs where delivered_at includes the
        propagation delay. Opportunities finding an empty queue are wasted.
        """
        if to < self._cursor:
            raise ValueError(f"advance to {to} before current time {self._cursor}")
        out: list[tuple[Packet, int]] = []
        queue = self.queue
        while queue:
            t_opp = self._opportunity_time(self._next_k)
            if t_opp is None or t_opp > to:
                break
            pkt = queue.popleft()
            out.append((pkt, t_opp + self.config.one_way_delay))
            self._next_k += 1
        self._next_k = max(
            self._next_k, self.config.trace.count_upto(to, self.config.wraparound))
        self._cursor = to
        self.delivered += len(out)
        return out


class EventLog:
    """Flat event record; one row per packet-level or control event."""

    COLUMNS = ("time_ms", "flow_id", "event", "seq", "queue_len", "qdelay_ms")

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.rows: list[tuple] = []

    def append(self, time_ms: int, flow_id: int, event: str, seq: int,
               queue_len: int, qdelay_ms: Optional[int] = None) -> None:
        if self.enabled:
            self.rows.append((time_ms, flow_id, event, seq, queue_len, qdelay_ms))

    def to_csv(self, path: str) -> None:
        with open(path, "w") as f:
            f.write(",".join(self.COLUMNS) + "\n")
            for t, flow, event, seq, qlen, qdelay in self.rows:
                qd = "" if qdelay is None else str(qdelay)
                f.write(f"{t},{flow},{event},{seq},{qlen},{qd}\n")


class Simulation:
    """Single-threaded event loop tying endpoints to one bottleneck link.

    Endpoints are duck-typed: senders and receivers are registered per flow
    and expose `start(sim)`; receivers get `on_packet(pkt, now)`, senders get
    `on_ack(ack, now)`. Senders emit through `send_packet`.
    """

    def __init__(self, link: Link, log: Optional[EventLog] = None):
        self.link = link
        self.log = log if log is not None else EventLog(enabled=False)
        self.now = 0
        self._heap: list[tuple[int, int, int, Callable[[], None]]] = []
        self._order = 0
        self._link_armed = False
        self._flows: dict[int, tuple[object, object]] = {}
        self._stopped = False

    def add_flow(self, flow_id: int, sender, receiver) -> None:
        if flow_id in self._flows:
            raise ValueError(f"duplicate flow id {flow_id}")
        self._flows[flow_id] = (sender, receiver)

    def schedule(self, time_ms: int, klass: int, fn: Callable[[], None]) -> None:
        if time_ms < self.now:
            raise ValueError(f"cannot schedule at {time_ms} before now {self.now}")
        heapq.heappush(self._heap, (int(time_ms), klass, self._order, fn))
        self._order += 1

    def schedule_timer(self, time_ms: int, fn: Callable[[], None]) -> None:
        self.schedule(time_ms, KLASS_TIMER, fn)

    def pause(self) -> None:
        """Stop the run loop after the current event (training uses this)."""
        self._stopped = True

    def send_packet(self, pkt: Packet) -> EnqueueResult:
        # waste any opportunities that elapsed while the queue was idle, so the
        # packet can only ride opportunities strictly after now
        if self.link.now < self.now:
            idle = self.link.advance(self.now)
            assert not idle, "armed service event missed deliveries"
        result = self.link.enqueue(pkt, self.now)
        self.log.append(self.now, pkt.flow_id, result.value if result
                        is not EnqueueResult.ACCEPTED else "send",
                        pkt.seq, self.link.queue_len())
        if result is EnqueueResult.ACCEPTED:
            self._arm_link()
        return result

    def _arm_link(self) -> None:
        if self._link_armed:
            return
        t = self.link.next_service_time()
        if t is None:
            return
        self.schedule(max(t, self.now), KLASS_DELIVERY, self._on_link_service)
        self._link_armed = True

    def _on_link_service(self) -> None:
        self._link_armed = False
        for pkt, delivered_at in self.link.advance(self.now):
            self.schedule(delivered_at, KLASS_DELIVERY,
                          lambda p=pkt, t=delivered_at: self._deliver(p, t))
        if self.link.queue:
            self._arm_link()

    def _deliver(self, pkt: Packet, delivered_at: int) -> None:
        qdelay = queueing_delay_of(pkt, delivered_at, self.link.config.one_way_delay)
        self.log.append(delivered_at, pkt.flow_id, "deliver", pkt.seq,
                        self.link.queue_len(), qdelay)
        flow = self._flows.get(pkt.flow_id)
        if flow is not None:
            flow[1].on_packet(pkt, delivered_at)

    def send_ack(self, flow_id: int, ack, arrive_at: int) -> None:
        """Return-path delivery: lossless, queue-free, fixed propagation delay."""
        self.schedule(arrive_at, KLASS_DELIVERY,
                      lambda: self._deliver_ack(flow_id, ack, arrive_at))

    def _deliver_ack(self, flow_id: int, ack, now: int) -> None:
        self.log.append(now, flow_id, "ack", ack.seq, self.link.queue_len())
        flow = self._flows.get(flow_id)
        if flow is not None:
            flow[0].on_ack(ack, now)

    def run(self, until: int, stop: Optional[Callable[[], bool]] = None) -> None:
        """Process events up to and including `until`; `stop` is polled after
        each event (and `pause` honored) so callers can single-step decisions."""
        self._stopped = False
        heap = self._heap
        while heap and heap[0][0] <= until:
            t, _klass, _order, fn = heapq.heappop(heap)
            self.now = t
            fn()
            if self._stopped or (stop is not None and stop()):
                return
        self.now = until


def run_event_loop(flows: list[tuple[int, object, object]], link: Link,
                   until: int, log: Optional[EventLog] = None) -> EventLog:
    """Convenience wrapper: register (flow_id, sender, receiver) triples, start
    every endpoint, run to `until`, and hand back the event log."""
    event_log = log if log is not None else EventLog(enabled=True)
    sim = Simulation(link, event_log)
    for flow_id, sender, receiver in flows:
        sim.add_flow(flow_id, sender, receiver)
    for _, sender, receiver in flows:
        receiver.start(sim)
        sender.start(sim)
    sim.run(until)
    return event_log
