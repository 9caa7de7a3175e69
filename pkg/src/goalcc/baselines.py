"""Reference congestion controls used for comparisons: a Reno-style AIMD
window sender and an open-loop constant-rate sender."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .netsim import MTU_BYTES
from .transport import Ack, RateSender, SenderBase


@dataclass
class AimdState:
    cwnd: float = 2.0  # packets, real-valued
    ssthresh: float = math.inf

    def on_ack(self) -> None:
        """Slow-start doubling below ssthresh, else additive increase 1/cwnd."""
        if self.cwnd < self.ssthresh:
            self.cwnd += 1.0
        else:
            self.cwnd += 1.0 / self.cwnd

    def on_loss(self) -> None:
        """Multiplicative decrease, never below one packet."""
        self.ssthresh = max(self.cwnd / 2.0, 1.0)
        self.cwnd = max(self.cwnd / 2.0, 1.0)


class AimdSender(SenderBase):
    """ACK-clocked window sender; one multiplicative decrease per loss event."""

    def __init__(self, flow_id: int, start_ms: int = 0, stop_ms: Optional[int] = None,
                 mtu: int = MTU_BYTES):
        super().__init__(flow_id, start_ms, stop_ms, mtu)
        self.aimd = AimdState()
        self._recover_until = 0  # losses below this seq belong to the current event

    @property
    def cwnd(self) -> float:
        return self.aimd.cwnd

    def _on_start(self) -> None:
        self.stats.start_stats_window(self.sim.now)
        self._fill_window(self.sim.now)

    def _fill_window(self, now: int) -> None:
        if not self.active(now):
            return
        while self.in_flight < int(self.aimd.cwnd + 1e-9):
            self._dispatch_packet(now)

    def _after_ack(self, ack: Ack, now: int) -> None:
        self.aimd.on_ack()
        self._fill_window(now)

    def _on_loss_detected(self, seq: int) -> None:
        if seq >= self._recover_until:
            self.aimd.on_loss()
            self._recover_until = self.next_seq
        if self.sim is not None:
            self._fill_window(self.sim.now)


def constant_rate(flow_id: int, rate_mbps: float, start_ms: int = 0,
                  stop_ms: Optional[int] = None) -> RateSender:
    """Open-loop sender: fixed pacing at the given rate, no feedback."""
    if rate_mbps < 0.0:
        raise ValueError("rate must be >= 0")
    return RateSender(flow_id, initial_rate_mbps=rate_mbps,
                      start_ms=start_ms, stop_ms=stop_ms)
