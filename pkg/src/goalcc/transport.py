"""Sender and receiver endpoints over the emulated link.

The rate-paced sender carries all of the estimator machinery: EWMA RTT,
minimum RTT, running maximum throughput, cumulative-ACK loss inference with a
duplicate threshold plus a retransmission timeout fallback, and the per
decision-interval snapshots that become agent state and measurements. The
receiver just echoes every delivery as an ACK on the lossless return path.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import Measurement, PerfSample, StateSample
from .netsim import KLASS_SEND, MTU_BYTES, EnqueueResult, Packet, Simulation

EWMA_ALPHA = 0.125  # RFC-style smoothing for the RTT estimator
DUPACK_THRESHOLD = 3
RTO_EWMA_MULTIPLIER = 2.0
DECISION_INTERVAL_RTT = 0.5  # decisions fire every half minimum RTT
STATE_HISTORY_LEN = 16
WATCHDOG_INTERVAL_MS = 200


class UnknownSeqError(KeyError):
    """ACK for a sequence number this sender never has in flight."""


@dataclass(frozen=True)
class Ack:
    seq: int
    size: int


class SenderStats:
    """RTT/throughput/loss estimators shared by every sender flavor."""

    def __init__(self):
        self.ewma_rtt = 0.0  # ms; 0 until the first sample
        self.min_rtt = math.inf
        self.max_throughput = 0.0  # Mbps, running max of interval throughputs
        self.sent = 0
        self.acked = 0
        self.lost = 0
        # per decision-interval counters
        self.interval_sent = 0
        self.interval_acked_bytes = 0
        self.interval_lost = 0
        self.interval_rtt_samples: list[float] = []
        # (time, rtt) pairs kept long enough for the percentile window
        self.rtt_window: deque[tuple[int, float]] = deque()
        # full-run aggregates, reset by start_stats_window()
        self.window_start_ms = 0
        self.window_acked_bytes = 0
        self.window_sent = 0
        self.window_lost = 0
        self.window_rtts: list[float] = []

    def has_rtt(self) -> bool:
        return self.min_rtt is not math.inf

    def on_rtt_sample(self, rtt_ms: float, now: int) -> None:
        if not self.has_rtt():
            self.ewma_rtt = rtt_ms
        else:
            self.ewma_rtt = EWMA_ALPHA * rtt_ms + (1.0 - EWMA_ALPHA) * self.ewma_rtt
        self.min_rtt = min(self.min_rtt, rtt_ms)
        self.interval_rtt_samples.append(rtt_ms)
        self.rtt_window.append((now, rtt_ms))
        self.window_rtts.append(rtt_ms)

    def trim_rtt_window(self, now: int, span_ms: float) -> None:
        cutoff = now - span_ms
        while self.rtt_window and self.rtt_window[0][0] < cutoff:
            self.rtt_window.popleft()

    def p95_rtt(self, now: int, span_ms: float) -> float:
        """95th percentile RTT over the trailing span (the tuning window)."""
        self.trim_rtt_window(now, span_ms)
        if not self.rtt_window:
            return self.ewma_rtt
        return float(np.percentile([r for _, r in self.rtt_window], 95))

    def reset_interval(self) -> None:
        self.interval_sent = 0
        self.interval_acked_bytes = 0
        self.interval_lost = 0
        self.interval_rtt_samples = []

    def start_stats_window(self, now: int) -> None:
        """Begin the run-level reporting window (used to skip warm-up)."""
        self.window_start_ms = now
        self.window_acked_bytes = 0
        self.window_sent = 0
        self.window_lost = 0
        self.window_rtts = []

    def window_summary(self, now: int) -> PerfSample:
        """Run-level averages since the stats window opened."""
        span_ms = max(1, now - self.window_start_ms)
        thr = self.window_acked_bytes * 8.0 / (span_ms * 1000.0)
        rtt = (float(np.percentile(self.window_rtts, 95))
               if self.window_rtts else self.ewma_rtt)
        loss = self.window_lost / max(1, self.window_sent)
        return PerfSample(thr, rtt, loss)


class StateHistory:
    """Ring of the last 16 state samples, zero-padded before warm-up."""

    def __init__(self, length: int = STATE_HISTORY_LEN):
        self.length = length
        self._buf = np.zeros((length, 4))

    def push(self, sample: StateSample) -> None:
        self._buf[:-1] = self._buf[1:]
        self._buf[-1] = sample.as_array()

    def as_array(self) -> np.ndarray:
        """Oldest-to-newest (length, 4) view copy."""
        return self._buf.copy()


class Receiver:
    """ACKs every delivered packet; keeps no other state."""

    def __init__(self, flow_id: int):
        self.flow_id = flow_id
        self.received = 0
        self._sim: Optional[Simulation] = None

    def start(self, sim: Simulation) -> None:
        self._sim = sim

    def on_packet(self, pkt: Packet, now: int) -> None:
        self.received += 1
        owd = self._sim.link.config.one_way_delay
        self._sim.send_ack(self.flow_id, Ack(pkt.seq, pkt.size), now + owd)


class SenderBase:
    """Transmission bookkeeping common to paced, windowed, and fixed senders."""

    def __init__(self, flow_id: int, start_ms: int = 0, stop_ms: Optional[int] = None,
                 mtu: int = MTU_BYTES):
        self.flow_id = flow_id
        self.start_ms = start_ms
        self.stop_ms = stop_ms
        self.mtu = mtu
        self.stats = SenderStats()
        self.in_flight = 0
        self.next_seq = 0
        # seq -> [sent_at, dup_count]; insertion order is send order
        self._outstanding: dict[int, list] = {}
        self._lost_pending: set[int] = set()
        self.sim: Optional[Simulation] = None

    # -- lifecycle ---------------------------------------------------------

    def start(self, sim: Simulation) -> None:
        self.sim = sim
        sim.schedule_timer(max(self.start_ms, sim.now), self._on_start)
        sim.schedule_timer(max(self.start_ms, sim.now) + WATCHDOG_INTERVAL_MS,
                           self._on_watchdog)

    def _on_start(self) -> None:
        raise NotImplementedError

    def _on_watchdog(self) -> None:
        self._expire_timeouts(self.sim.now)
        self.sim.schedule_timer(self.sim.now + WATCHDOG_INTERVAL_MS, self._on_watchdog)

    def active(self, now: int) -> bool:
        return now >= self.start_ms and (self.stop_ms is None or now < self.stop_ms)

    # -- transmission ------------------------------------------------------

    def _dispatch_packet(self, now: int) -> None:
        pkt = Packet(seq=self.next_seq, size=self.mtu, sent_at=now, flow_id=self.flow_id)
        self.next_seq += 1
        self.in_flight += 1
        self.stats.sent += 1
        self.stats.interval_sent += 1
        self.stats.window_sent += 1
        self._outstanding[pkt.seq] = [now, 0]
        self.sim.send_packet(pkt)

    # -- ACK path and loss inference ----------------------------------------

    def on_ack(self, ack: Ack, now: int) -> None:
        if ack.seq in self._lost_pending:
            # spurious timeout: the packet survived after all
            self._lost_pending.discard(ack.seq)
            self.stats.lost = max(0, self.stats.lost - 1)
            self.stats.window_lost = max(0, self.stats.window_lost - 1)
            self.stats.interval_lost = max(0, self.stats.interval_lost - 1)
            self._record_ack(ack, now, sent_at=None)
            return
        entry = self._outstanding.pop(ack.seq, None)
        if entry is None:
            raise UnknownSeqError(f"flow {self.flow_id}: ACK for unknown seq {ack.seq}")
        self.in_flight -= 1
        self._record_ack(ack, now, sent_at=entry[0])
        self._bump_dupcounts(ack.seq)
        self._expire_timeouts(now)
        self._after_ack(ack, now)

    def _record_ack(self, ack: Ack, now: int, sent_at: Optional[int]) -> None:
        self.stats.acked += 1
        self.stats.interval_acked_bytes += ack.size
        self.stats.window_acked_bytes += ack.size
        if sent_at is not None:
            self.stats.on_rtt_sample(float(now - sent_at), now)

    def _bump_dupcounts(self, acked_seq: int) -> None:
        lost: list[int] = []
        for seq, entry in self._outstanding.items():
            if seq >= acked_seq:
                break
            entry[1] += 1
            if entry[1] >= DUPACK_THRESHOLD:
                lost.append(seq)
        for seq in lost:
            self._declare_lost(seq, pending=False)

    def _expire_timeouts(self, now: int) -> None:
        if not self.stats.has_rtt():
            return
        rto = RTO_EWMA_MULTIPLIER * self.stats.ewma_rtt
        expired = [seq for seq, entry in self._outstanding.items()
                   if now - entry[0] > rto]
        for seq in expired:
            # keep the seq around: a late ACK means the timeout was spurious
            self._declare_lost(seq, pending=True)

    def _declare_lost(self, seq: int, pending: bool) -> None:
        del self._outstanding[seq]
        if pending:
            self._lost_pending.add(seq)
        self.in_flight -= 1
        self.stats.lost += 1
        self.stats.interval_lost += 1
        self.stats.window_lost += 1
        self._on_loss_detected(seq)

    # -- subclass hooks ------------------------------------------------------

    def _after_ack(self, ack: Ack, now: int) -> None:
        pass

    def _on_loss_detected(self, seq: int) -> None:
        pass


class RateSender(SenderBase):
    """Rate-paced sender with a derived cwnd cap and decision-interval snapshots.

    The commanded rate sets both the pacing interval (MTU*8 / rate) and the
    cwnd cap (rate * ewma_rtt expressed in packets, floored at one packet so a
    positive rate can always keep the ACK clock alive). Decisions are
    ACK-clocked: the first ACK arriving at least half a minimum RTT after the
    previous decision triggers the estimator snapshots and the decision hook.
    """

    def __init__(self, flow_id: int, initial_rate_mbps: float = 1.0,
                 start_ms: int = 0, stop_ms: Optional[int] = None,
                 mtu: int = MTU_BYTES,
                 decision_hook: Optional[Callable[["RateSender", int], None]] = None):
        super().__init__(flow_id, start_ms, stop_ms, mtu)
        self.rate_mbps = initial_rate_mbps
        self.decision_hook = decision_hook
        self.initial_cwnd = 10.0  # packets, used until the first RTT sample
        self.cwnd = self.initial_cwnd
        self.last_decision_ms = start_ms
        self.decision_count = 0
        self.history = StateHistory()
        self.latest_measurement = Measurement(1.0, 1.0, 0.0)
        self.latest_perf = PerfSample(0.0, 0.0, 0.0)
        self.last_action = initial_rate_mbps
        self._pacing_interval = math.inf
        self._next_send = 0.0
        self._send_scheduled = False
        self._decision_log: list[tuple] = []
        self.log_decisions = False

    # -- rate control --------------------------------------------------------

    def set_rate(self, rate_mbps: float, now: int) -> None:
        if rate_mbps < 0.0:
            raise ValueError("rate must be >= 0")
        self.rate_mbps = rate_mbps
        self.last_action = rate_mbps
        if rate_mbps == 0.0:
            self._pacing_interval = math.inf
            return
        self._pacing_interval = self.mtu * 8.0 / (rate_mbps * 1e3)  # ms per packet
        self._recompute_cwnd()
        # re-anchor pacing credit so a rate change takes effect within one interval
        self._next_send = min(max(self._next_send, float(now)),
                              now + self._pacing_interval)
        self._schedule_send(now)

    def _recompute_cwnd(self) -> None:
        if self.stats.has_rtt():
            self.cwnd = max(1.0, self.rate_mbps * self.stats.ewma_rtt
                            / (self.mtu * 8.0 / 1e3))
        else:
            self.cwnd = self.initial_cwnd

    def _on_start(self) -> None:
        self._next_send = float(self.sim.now)
        self.last_decision_ms = self.sim.now
        self.stats.start_stats_window(self.sim.now)
        self.set_rate(self.rate_mbps, self.sim.now)

    def _schedule_send(self, now: int) -> None:
        if self._send_scheduled or self.rate_mbps <= 0.0:
            return
        when = max(now, int(math.ceil(self._next_send - 1e-9)))
        self.sim.schedule(when, KLASS_SEND, self._on_send_timer)
        self._send_scheduled = True

    def _on_send_timer(self) -> None:
        self._send_scheduled = False
        now = self.sim.now
        if not self.active(now):
            return
        if self.rate_mbps <= 0.0:
            return
        while self.in_flight < self.cwnd and self._next_send <= now + 1e-9:
            self._dispatch_packet(now)
            self._next_send += self._pacing_interval
        if self.in_flight < self.cwnd:
            self._schedule_send(now)
        # cwnd-blocked senders are rescheduled by the next ACK

    def _after_ack(self, ack: Ack, now: int) -> None:
        self._recompute_cwnd()
        if self.in_flight < self.cwnd and self.active(now):
            # pacing credit must not accumulate across a cwnd stall
            self._next_send = max(self._next_send, float(now))
            self._schedule_send(now)
        if self._decision_due(now):
            self._take_decision(now)

    def _on_loss_detected(self, seq: int) -> None:
        if self.sim is not None and self.in_flight < self.cwnd and self.active(self.sim.now):
            self._next_send = max(self._next_send, float(self.sim.now))
            self._schedule_send(self.sim.now)

    # -- decision cadence ----------------------------------------------------

    def _decision_due(self, now: int) -> bool:
        if not self.stats.has_rtt():
            return False
        return now - self.last_decision_ms >= DECISION_INTERVAL_RTT * self.stats.min_rtt

    def _take_decision(self, now: int) -> None:
        interval_ms = max(1, now - self.last_decision_ms)
        self.last_decision_ms = now
        self.decision_count += 1
        self._snapshot(now, interval_ms)
        self.stats.reset_interval()
        if self.decision_hook is not None:
            self.decision_hook(self, now)

    def _snapshot(self, now: int, interval_ms: int) -> None:
        s = self.stats
        thr = s.interval_acked_bytes * 8.0 / (interval_ms * 1000.0)  # Mbps
        s.max_throughput = max(s.max_throughput, thr)
        thr_norm = thr / s.max_throughput if s.max_throughput > 0.0 else 1.0
        p95 = s.p95_rtt(now, max(4.0 * s.ewma_rtt, 1.0))
        delay_ratio = max(1.0, p95 / s.min_rtt) if s.has_rtt() else 1.0
        loss_rate = (min(1.0, max(0.0, s.interval_lost / s.interval_sent))
                     if s.interval_sent > 0 else self.latest_measurement.loss_rate)
        self.latest_measurement = Measurement(min(1.0, thr_norm), delay_ratio, loss_rate)
        self.latest_perf = PerfSample(thr, p95, loss_rate)
        send_rate = s.interval_sent * self.mtu * 8.0 / (interval_ms * 1000.0)
        avg_delay = (float(np.mean(s.interval_rtt_samples))
                     if s.interval_rtt_samples else self.history.as_array()[-1, 3])
        self.history.push(StateSample(self.last_action, s.ewma_rtt, send_rate, avg_delay))
        if self.log_decisions:
            qdelay = p95 - s.min_rtt if s.has_rtt() else 0.0
            self._decision_log.append(
                (now, self.rate_mbps, self.cwnd, s.ewma_rtt, p95, qdelay, thr, loss_rate))

    def decision_log_rows(self) -> list[tuple]:
        return list(self._decision_log)


FLOW_LOG_COLUMNS = ("time_ms", "rate_mbps", "cwnd_pkts", "ewma_rtt_ms",
                    "p95_rtt_ms", "qdelay_ms", "thr_mbps", "loss_rate")


def write_flow_log(path: str, rows: list[tuple]) -> None:
    with open(path, "w") as f:
        f.write(",".join(FLOW_LOG_COLUMNS) + "\n")
        for r in rows:
            f.write(",".join(f"{v:.6g}" if isinstance(v, float) else str(v)
                             for v in r) + "\n")
