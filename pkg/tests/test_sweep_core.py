"""Tests for kernel schedules, the chain runner and trace storage."""

import math

import numpy as np
import pytest

from errors import ConfigError, UnsupportedScheduleError
from estimators import empirical_mean
from models import BvnModel, IsingModel
from oracle import exact_sigma_c
from sweep_core import (RngPolicy, SweepSchedule, Trace, kernel_at_step, load_trace,
                        run_chain, save_trace, sigma, sigma_power, subchain)


class TestSigma:
    """Cyclic successor on 1..K."""

    def test_successor(self):
        assert sigma(1, 3) == 2
        assert sigma(2, 3) == 3
        assert sigma(3, 3) == 1
        assert sigma(1, 1) == 1

    def test_power_matches_repeated_successor(self):
        for K in (1, 2, 5):
            for k in range(1, K + 1):
                current = k
                for t in range(12):
                    assert sigma_power(k, t, K) == current
                    current = sigma(current, K)

    @pytest.mark.parametrize("k,K", [(0, 3), (4, 3), (1, 0)])
    def test_out_of_range(self, k, K):
        with pytest.raises(ConfigError):
            sigma(k, K)


class TestSchedule:
    """Deterministic and random kernel sequences."""

    def test_deterministic_order(self):
        kernels = SweepSchedule.deterministic(3).kernels(7)
        np.testing.assert_array_equal(kernels, [1, 2, 3, 1, 2, 3, 1])

    def test_kernel_at_step(self):
        sched = SweepSchedule.deterministic(4)
        assert [kernel_at_step(sched, t) for t in range(6)] == [1, 2, 3, 4, 1, 2]

    def test_random_needs_generator(self):
        with pytest.raises(ConfigError):
            SweepSchedule.random(2).kernels(5)

    def test_random_range_and_reproducibility(self):
        sched = SweepSchedule.random(3)
        a = sched.kernels(1000, RngPolicy(5).generator())
        b = sched.kernels(1000, RngPolicy(5).generator())
        np.testing.assert_array_equal(a, b)
        assert set(np.unique(a)) == {1, 2, 3}


class TestRngPolicy:
    """Philox streams keyed by seed, stream and substream."""

    def test_same_key_same_draws(self):
        a = RngPolicy(42, 3).generator().random(10)
        b = RngPolicy(42, 3).generator().random(10)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        a = RngPolicy(42, 0).generator().random(10)
        b = RngPolicy(42, 1).generator().random(10)
        c = RngPolicy(42, 0).generator(1).random(10)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestRunChain:
    """Chain simulation and the cached conditional expectations."""

    def test_kernel_rule_and_shapes(self):
        model = BvnModel(0.5)
        trace = run_chain(model, SweepSchedule.deterministic(2), 101, [0.0, 0.0], RngPolicy(1))
        assert trace.M == 101
        np.testing.assert_array_equal(trace.kernel_at, np.arange(101) % 2 + 1)
        assert trace.g.shape == (101, 1)
        assert trace.cond_g_first is not None
        assert trace.seed == 1

    def test_bvn_kernels_touch_one_coordinate(self):
        """Kernel 1 redraws x2 and keeps x1; kernel 2 does the opposite."""
        trace = run_chain(BvnModel(0.7), SweepSchedule.deterministic(2), 50, [0.3, -0.2],
                          RngPolicy(2))
        for t in range(49):
            kept = 0 if trace.kernel_at[t] == 1 else 1
            assert trace.states[t + 1, kept] == trace.states[t, kept]

    def test_reproducible(self):
        model = IsingModel(3, 0.3)
        init = np.ones(9, dtype=np.int8)
        a = run_chain(model, SweepSchedule.deterministic(2), 200, init, RngPolicy(9, 4))
        b = run_chain(model, SweepSchedule.deterministic(2), 200, init, RngPolicy(9, 4))
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.cond_g, b.cond_g)

    def test_burn_in_keeps_kernel_rule(self):
        model = BvnModel(0.5)
        trace = run_chain(model, SweepSchedule.deterministic(2), 20, [5.0, 5.0], RngPolicy(3),
                          burn_in_sweeps=10)
        np.testing.assert_array_equal(trace.kernel_at, np.arange(20) % 2 + 1)
        assert not np.array_equal(trace.states[0], [5.0, 5.0])

    def test_schedule_mismatch(self):
        with pytest.raises(ConfigError):
            run_chain(BvnModel(0.5), SweepSchedule.deterministic(3), 10, [0, 0], RngPolicy(0))

    def test_bad_length(self):
        with pytest.raises(ConfigError):
            run_chain(BvnModel(0.5), SweepSchedule.deterministic(2), 0, [0, 0], RngPolicy(0))

    def test_random_schedule_chain(self):
        trace = run_chain(BvnModel(0.5), SweepSchedule.random(2), 300, [0, 0], RngPolicy(4))
        assert set(np.unique(trace.kernel_at)) <= {1, 2}
        assert not trace.schedule.is_deterministic


class TestTrace:
    """Trace validation, subchains and persistence."""

    def _trace(self, kernel_at, K=2):
        M = len(kernel_at)
        col = np.arange(M, dtype=float)[:, None]
        return Trace(states=np.arange(M), kernel_at=np.asarray(kernel_at), g=col, f=col,
                     cond_g=col, cond_f=col, schedule=SweepSchedule.deterministic(K))

    def test_rejects_wrong_kernel_sequence(self):
        with pytest.raises(ConfigError):
            self._trace([1, 1, 2])

    def test_rejects_length_mismatch(self):
        col = np.zeros((3, 1))
        with pytest.raises(ConfigError):
            Trace(states=np.arange(4), kernel_at=np.array([1, 2, 1]), g=col, f=col,
                  cond_g=col, cond_f=col, schedule=SweepSchedule.deterministic(2))

    def test_subchain(self):
        trace = self._trace([1, 2, 3, 1, 2, 3, 1], K=3)
        np.testing.assert_array_equal(subchain(trace, 1), [0, 3, 6])
        np.testing.assert_array_equal(subchain(trace, 2), [1, 4])
        np.testing.assert_array_equal(subchain(trace, 3), [2, 5])

    def test_subchain_needs_deterministic_sweep(self):
        trace = run_chain(BvnModel(0.5), SweepSchedule.random(2), 10, [0, 0], RngPolicy(0))
        with pytest.raises(UnsupportedScheduleError):
            subchain(trace, 1)

    def test_truncated(self):
        trace = run_chain(BvnModel(0.5), SweepSchedule.deterministic(2), 30, [0, 0], RngPolicy(0))
        short = trace.truncated(11)
        assert short.M == 11
        np.testing.assert_array_equal(short.states, trace.states[:11])
        np.testing.assert_array_equal(short.cond_g_first, trace.cond_g_first[:11])
        with pytest.raises(ConfigError):
            trace.truncated(31)

    def test_save_and_load(self, tmp_path):
        trace = run_chain(BvnModel(0.3), SweepSchedule.deterministic(2), 40, [0, 0], RngPolicy(8, 2))
        path = tmp_path / "trace.npz"
        save_trace(trace, path)
        loaded = load_trace(path)
        np.testing.assert_array_equal(loaded.states, trace.states)
        np.testing.assert_array_equal(loaded.cond_g_first, trace.cond_g_first)
        assert loaded.rng_policy == trace.rng_policy
        assert loaded.model_name == trace.model_name
        assert loaded.data_augmentation


class TestStationarity:
    """Chains started in pi average to the exact mean."""

    def test_empirical_mean_within_four_standard_errors(self, da_chains, ising_chains):
        M = 100_000
        for seed, model in enumerate(list(da_chains) + list(ising_chains)):
            # g is centered, so the exact mean is zero
            se = math.sqrt(exact_sigma_c(model, "zero")[0, 0] / M)
            policy = RngPolicy(700 + seed)
            trace = run_chain(model, SweepSchedule.deterministic(model.K), M,
                              model.initial_state(policy.generator(1)), policy)
            assert abs(empirical_mean(trace).mean[0]) <= 4 * se, model.name
