"""Shared domain types and the goal/reward arithmetic used by every other module.

Everything here is a plain value type or a pure function; nothing holds
simulation state. Conventions used throughout the package:

* rates are Mbps, times are milliseconds, loss rates are fractions in [0, 1]
* a *goal* is a weight vector (throughput, delay, loss) on the unit simplex
* a *measurement* is normalized performance: throughput as a fraction of the
  historical maximum, delay as a ratio over the minimum RTT, loss as observed
* a *target* is a bound vector (min throughput, max delay, max loss); bounds
  set to None are excluded from residual computations
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

SIMPLEX_TOL = 1e-9
GOAL_CLAMP = 1e-6


class AllZeroGoalError(ValueError):
    """A raw goal vector had no positive component left to normalize."""


class TargetMode(Enum):
    EXPLICIT = "explicit"
    HIGH_THROUGHPUT = "high_throughput"
    LOW_LATENCY = "low_latency"


@dataclass(frozen=True)
class Goal:
    """Trade-off weights (throughput, delay, loss) on the unit simplex."""

    w: tuple[float, float, float]

    def __post_init__(self) -> None:
        if len(self.w) != 3:
            raise ValueError(f"goal needs 3 components, got {len(self.w)}")
        if any(c < 0.0 for c in self.w):
            raise ValueError(f"goal components must be non-negative: {self.w}")
        if abs(sum(self.w) - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"goal components must sum to 1: {self.w}")

    @property
    def throughput(self) -> float:
        return self.w[0]

    @property
    def delay(self) -> float:
        return self.w[1]

    @property
    def loss(self) -> float:
        return self.w[2]

    def as_array(self) -> np.ndarray:
        return np.array(self.w, dtype=np.float64)


#: Equal weight on all three metrics; the tuner's default starting point.
UNIFORM_GOAL = Goal((1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0))


@dataclass(frozen=True)
class Measurement:
    """Normalized performance observed over one measurement window.

    thr_norm is window throughput divided by the connection's running maximum,
    delay_ratio is the window's 95th percentile RTT over the minimum RTT, and
    loss_rate is the fraction of window sends inferred lost.
    """

    thr_norm: float
    delay_ratio: float
    loss_rate: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.thr_norm <= 1.0):
            raise ValueError(f"thr_norm must be in [0,1]: {self.thr_norm}")
        if self.delay_ratio < 1.0:
            raise ValueError(f"delay_ratio must be >= 1: {self.delay_ratio}")
        if not (0.0 <= self.loss_rate <= 1.0):
            raise ValueError(f"loss_rate must be in [0,1]: {self.loss_rate}")

    def as_array(self) -> np.ndarray:
        return np.array([self.thr_norm, self.delay_ratio, self.loss_rate])


@dataclass(frozen=True)
class PerfSample:
    """Physical-unit performance twin of Measurement, consumed by the tuner."""

    thr_mbps: float
    rtt_ms: float
    loss_rate: float

    def as_array(self) -> np.ndarray:
        return np.array([self.thr_mbps, self.rtt_ms, self.loss_rate])


@dataclass(frozen=True)
class Target:
    """Application requirement bounds: min throughput, max delay, max loss.

    A bound of None means the dimension is a don't-care and is excluded from
    residuals. Preference modes carry no bounds of their own; they are mapped
    to explicit bounds from link observations first.
    """

    min_throughput: Optional[float] = None
    max_delay: Optional[float] = None
    max_loss: Optional[float] = None
    mode: TargetMode = TargetMode.EXPLICIT

    def __post_init__(self) -> None:
        if self.mode is TargetMode.EXPLICIT:
            if self.min_throughput is not None and self.min_throughput <= 0.0:
                raise ValueError("min_throughput bound must be > 0")
            if self.max_delay is not None and self.max_delay <= 0.0:
                raise ValueError("max_delay bound must be > 0")
            if self.max_loss is not None and self.max_loss < 0.0:
                raise ValueError("max_loss bound must be >= 0")


@dataclass(frozen=True)
class StateSample:
    """One decision-interval observation fed to the agent's state history."""

    last_action: float  # Mbps
    ewma_rtt: float  # ms
    actual_send_rate: float  # Mbps
    avg_interval_delay: float  # ms

    def __post_init__(self) -> None:
        for name, v in (
            ("last_action", self.last_action),
            ("ewma_rtt", self.ewma_rtt),
            ("actual_send_rate", self.actual_send_rate),
            ("avg_interval_delay", self.avg_interval_delay),
        ):
            if not math.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be finite and >= 0: {v}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.last_action, self.ewma_rtt, self.actual_send_rate, self.avg_interval_delay]
        )


@dataclass(frozen=True)
class RewardConfig:
    """Reward shaping knobs: the loss divisor and the discount factor."""

    loss_threshold: float = 0.05
    gamma: float = 0.95

    def __post_init__(self) -> None:
        if self.loss_threshold <= 0.0:
            raise ValueError("loss_threshold must be > 0")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must be in (0,1)")


def compute_reward(m: Measurement, g: Goal, cfg: RewardConfig) -> float:
    """Weighted compound of the measurement: throughput is rewarded, delay and
    (threshold-scaled) loss are penalties."""
    return (
        g.w[0] * m.thr_norm
        - g.w[1] * m.delay_ratio
        - g.w[2] * m.loss_rate / cfg.loss_threshold
    )


def normalize_goal(raw: Sequence[float]) -> Goal:
    """Project a raw weight vector back onto the simplex.

    Negative components (gradient updates can produce them) are clamped to a
    small positive floor before dividing by the sum, so the result is always a
    valid goal. Raises AllZeroGoalError when nothing positive remains.
    """
    if len(raw) != 3:
        raise ValueError(f"goal needs 3 components, got {len(raw)}")
    if all(c <= 0.0 for c in raw):
        raise AllZeroGoalError(f"cannot normalize all-non-positive goal {tuple(raw)}")
    clamped = [c if c >= 0.0 else GOAL_CLAMP for c in raw]
    total = sum(clamped)
    return Goal((clamped[0] / total, clamped[1] / total, clamped[2] / total))


def sample_random_goal(rng: np.random.Generator) -> Goal:
    """Draw a goal uniformly from the simplex (sorted-uniform gaps)."""
    u = np.sort(rng.uniform(0.0, 1.0, size=2))
    w = (float(u[0]), float(u[1] - u[0]), float(1.0 - u[1]))
    return Goal(w)


def target_residuals(perf: PerfSample, target: Target) -> np.ndarray:
    """Per-dimension relative shortfall of achieved performance vs. the target.

    A dimension contributes zero when its bound is met or absent; otherwise
    the residual is |achieved - bound| / bound so Mbps, ms, and loss-rate
    shortfalls are commensurable. A zero loss bound falls back to the absolute
    loss rate (the relative rule would divide by zero).
    """
    if target.mode is not TargetMode.EXPLICIT:
        raise ValueError("preference-mode targets must be mapped to explicit bounds first")
    r = np.zeros(3)
    t1, t2, t3 = target.min_throughput, target.max_delay, target.max_loss
    if t1 is not None and perf.thr_mbps < t1:
        r[0] = (t1 - perf.thr_mbps) / t1
    if t2 is not None and perf.rtt_ms > t2:
        r[1] = (perf.rtt_ms - t2) / t2
    if t3 is not None and perf.loss_rate > t3:
        r[2] = (perf.loss_rate - t3) / t3 if t3 > 0.0 else perf.loss_rate
    return r


def target_loss(perf: PerfSample, target: Target) -> float:
    """Euclidean norm of the masked relative residuals; zero iff all bounds met."""
    return float(np.linalg.norm(target_residuals(perf, target)))


def map_preference_to_target(
    mode: TargetMode, min_rtt_ms: float, max_throughput_mbps: float
) -> Target:
    """Turn a performance preference into explicit bounds using link observations.

    Low latency pins delay to the minimum RTT and loss to zero; high throughput
    pins throughput to the maximum observed bandwidth and loss to zero. The
    uninterested dimension stays unbounded.
    """
    if mode is TargetMode.LOW_LATENCY:
        return Target(min_throughput=None, max_delay=min_rtt_ms, max_loss=0.0)
    if mode is TargetMode.HIGH_THROUGHPUT:
        return Target(min_throughput=max_throughput_mbps, max_delay=None, max_loss=0.0)
    raise ValueError("explicit targets carry their own bounds; nothing to map")
