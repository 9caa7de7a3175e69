import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goalcc.core import (
    AllZeroGoalError,
    Goal,
    Measurement,
    PerfSample,
    RewardConfig,
    StateSample,
    Target,
    TargetMode,
    compute_reward,
    map_preference_to_target,
    normalize_goal,
    sample_random_goal,
    target_loss,
    target_residuals,
)


class TestGoal:
    def test_valid_simplex(self):
        g = Goal((0.5, 0.25, 0.25))
        assert g.throughput == 0.5 and g.delay == 0.25 and g.loss == 0.25

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            Goal((-0.1, 0.6, 0.5))

    def test_rejects_bad_sum(self):
        with pytest.raises(ValueError):
            Goal((0.5, 0.5, 0.5))


class TestMeasurement:
    def test_bounds(self):
        Measurement(1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            Measurement(1.1, 1.0, 0.0)
        with pytest.raises(ValueError):
            Measurement(0.5, 0.9, 0.0)
        with pytest.raises(ValueError):
            Measurement(0.5, 1.0, 1.5)


class TestStateSample:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            StateSample(float("nan"), 60.0, 1.0, 60.0)
        with pytest.raises(ValueError):
            StateSample(-1.0, 60.0, 1.0, 60.0)


class TestComputeReward:
    def test_pure_throughput_weight(self):
        m = Measurement(1.0, 1.0, 0.0)
        g = Goal((1.0, 0.0, 0.0))
        assert compute_reward(m, g, RewardConfig()) == 1.0

    def test_hand_evaluated_mixed_case(self):
        # 0.4*0.8 - 0.4*2.0 - 0.2*0.05/0.05 = 0.32 - 0.8 - 0.2
        m = Measurement(0.8, 2.0, 0.05)
        g = Goal((0.4, 0.4, 0.2))
        cfg = RewardConfig(loss_threshold=0.05)
        assert compute_reward(m, g, cfg) == pytest.approx(-0.68, abs=1e-12)

    def test_pure_delay_weight_at_minimum(self):
        m = Measurement(0.5, 1.0, 0.0)
        g = Goal((0.0, 1.0, 0.0))
        assert compute_reward(m, g, RewardConfig()) == -1.0

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_monotone_in_throughput_weight(self, a, b):
        # with delay and loss at their best values the reward never drops as
        # more weight moves onto throughput
        lo, hi = sorted((a, b))
        m = Measurement(0.7, 1.0, 0.0)
        cfg = RewardConfig()
        r_lo = compute_reward(m, Goal((lo, (1 - lo) / 2, (1 - lo) / 2)), cfg)
        r_hi = compute_reward(m, Goal((hi, (1 - hi) / 2, (1 - hi) / 2)), cfg)
        assert r_hi >= r_lo - 1e-12

    @given(
        st.floats(0.01, 1.0),
        st.floats(1.0, 10.0),
        st.floats(0.0, 1.0),
        st.floats(0.0, 1.0),
    )
    def test_linear_in_goal(self, thr, dly, loss, alpha):
        m = Measurement(thr, dly, loss)
        cfg = RewardConfig()
        g1 = Goal((0.6, 0.3, 0.1))
        g2 = Goal((0.1, 0.2, 0.7))
        mixed = Goal(tuple(alpha * np.array(g1.w) + (1 - alpha) * np.array(g2.w)))
        want = alpha * compute_reward(m, g1, cfg) + (1 - alpha) * compute_reward(m, g2, cfg)
        assert compute_reward(m, mixed, cfg) == pytest.approx(want, abs=1e-9)


class TestNormalizeGoal:
    def test_simple(self):
        g = normalize_goal((2.0, 1.0, 1.0))
        assert g.w == (0.5, 0.25, 0.25)

    def test_idempotent_on_simplex(self):
        g = normalize_goal((1 / 3, 1 / 3, 1 / 3))
        assert g.w == pytest.approx((1 / 3, 1 / 3, 1 / 3), abs=1e-15)

    def test_zero_components_pass_through(self):
        g = normalize_goal((0.1, 0.0, 0.0))
        assert g.w[0] == pytest.approx(1.0, abs=1e-9)
        assert g.w[1] == pytest.approx(0.0, abs=1e-9)

    def test_negative_clamped(self):
        g = normalize_goal((-0.5, 0.5, 0.5))
        assert g.w[0] > 0.0
        assert g.w[0] == pytest.approx(1e-6 / (1e-6 + 1.0), rel=1e-9)

    def test_all_nonpositive_raises(self):
        with pytest.raises(AllZeroGoalError):
            normalize_goal((0.0, -1.0, 0.0))

    @given(st.lists(st.floats(-1.0, 10.0), min_size=3, max_size=3))
    def test_idempotent_property(self, raw):
        if all(c <= 0.0 for c in raw):
            return
        once = normalize_goal(raw)
        twice = normalize_goal(once.w)
        assert np.allclose(once.w, twice.w, atol=1e-12)


class TestSampleRandomGoal:
    def test_draws_are_valid_goals(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            g = sample_random_goal(rng)
            assert all(c >= 0.0 for c in g.w)
            assert sum(g.w) == pytest.approx(1.0, abs=1e-9)

    def test_mean_is_uniform_on_simplex(self):
        rng = np.random.default_rng(123)
        draws = np.array([sample_random_goal(rng).w for _ in range(10_000)])
        assert np.all(np.abs(draws.mean(axis=0) - 1 / 3) < 0.02)

    def test_seed_determinism(self):
        a = [sample_random_goal(np.random.default_rng(9)).w for _ in range(1)]
        b = [sample_random_goal(np.random.default_rng(9)).w for _ in range(1)]
        rng1, rng2 = np.random.default_rng(42), np.random.default_rng(42)
        seq1 = [sample_random_goal(rng1).w for _ in range(50)]
        seq2 = [sample_random_goal(rng2).w for _ in range(50)]
        assert a == b and seq1 == seq2


class TestTargetLoss:
    def test_all_bounds_met(self):
        perf = PerfSample(10.0, 80.0, 0.005)
        t = Target(8.0, 100.0, 0.01)
        assert target_loss(perf, t) == 0.0

    def test_two_dimension_shortfall(self):
        perf = PerfSample(8.0, 120.0, 0.005)
        t = Target(10.0, 100.0, 0.01)
        assert target_loss(perf, t) == pytest.approx(math.hypot(0.2, 0.2), abs=1e-12)

    def test_three_dimension_shortfall(self):
        perf = PerfSample(8.0, 120.0, 0.02)
        t = Target(10.0, 100.0, 0.01)
        want = math.sqrt(0.2**2 + 0.2**2 + 1.0**2)
        assert target_loss(perf, t) == pytest.approx(want, abs=1e-12)

    def test_excluded_dimension_ignored(self):
        perf = PerfSample(0.1, 80.0, 0.0)
        t = Target(min_throughput=None, max_delay=100.0, max_loss=0.01)
        assert target_loss(perf, t) == 0.0

    def test_zero_loss_bound_uses_absolute_residual(self):
        perf = PerfSample(10.0, 80.0, 0.02)
        t = Target(min_throughput=None, max_delay=100.0, max_loss=0.0)
        assert target_loss(perf, t) == pytest.approx(0.02, abs=1e-12)

    @given(
        st.floats(0.1, 20.0),
        st.floats(10.0, 500.0),
        st.floats(0.0, 0.2),
    )
    def test_zero_iff_every_bound_met(self, thr, rtt, loss):
        t = Target(5.0, 150.0, 0.05)
        perf = PerfSample(thr, rtt, loss)
        met = thr >= 5.0 and rtt <= 150.0 and loss <= 0.05
        assert (target_loss(perf, t) == 0.0) == met

    def test_preference_mode_rejected(self):
        with pytest.raises(ValueError):
            target_residuals(PerfSample(1, 1, 0), Target(mode=TargetMode.LOW_LATENCY))


class TestMapPreference:
    def test_low_latency(self):
        t = map_preference_to_target(TargetMode.LOW_LATENCY, 60.0, 12.0)
        assert t.max_delay == 60.0
        assert t.max_loss == 0.0
        assert t.min_throughput is None

    def test_high_throughput(self):
        t = map_preference_to_target(TargetMode.HIGH_THROUGHPUT, 60.0, 12.0)
        assert t.min_throughput == 12.0
        assert t.max_loss == 0.0
        assert t.max_delay is None

    def test_explicit_rejected(self):
        with pytest.raises(ValueError):
            map_preference_to_target(TargetMode.EXPLICIT, 60.0, 12.0)
