"""Tests for moment estimation and control-variate weights."""

import logging

import numpy as np
import pytest

from errors import ConfigError, UnsupportedScheduleError
from models import BvnModel, IsingSweep, IsingUpdate, build_finite_ising
from oracle import exact_moments
from sweep_core import RngPolicy, SweepSchedule, Trace, run_chain
from weights import (MomentEstimate, MomentMode, default_batch_lag, estimate_moments,
                     estimate_U, estimate_Uk_Vk, estimate_V_batch, estimate_V_gibbs,
                     estimate_weights, psd_pinv, solve_weights)


def random_trace(seed, M=60, K=2, d=2, p=3, name="random", is_gibbs=True):
    rng = np.random.default_rng(seed)
    return Trace(states=np.arange(M), kernel_at=np.arange(M) % K + 1,
                 g=rng.normal(size=(M, d)), f=rng.normal(size=(M, p)),
                 cond_g=rng.normal(size=(M, d)), cond_f=rng.normal(size=(M, p)),
                 schedule=SweepSchedule.deterministic(K), is_gibbs=is_gibbs, model_name=name)


def batch_reference(trace, B):
    """Lag-B batch-means V written out term by term."""
    M = trace.M
    gbar = trace.g - trace.g.mean(axis=0)
    V = np.zeros((trace.p, trace.d))
    for t in range(M):
        first = gbar[t:min(t + B, M - 1) + 1].sum(axis=0)
        second = gbar[t + 1:min(t + 1 + B, M - 1) + 1].sum(axis=0)
        V += np.outer(trace.f[t], first) - np.outer(trace.cond_f[t], second)
    return V / M


def bvn_trace(rho, integrand, M, seed):
    model = BvnModel(rho, integrand)
    policy = RngPolicy(seed)
    return run_chain(model, SweepSchedule.deterministic(2), M,
                     model.initial_state(policy.generator(1)), policy)


class TestMoments:
    """Sample versions of U and V."""

    def test_U(self):
        trace = random_trace(0)
        D = trace.f[1:] - trace.cond_f[:-1]
        np.testing.assert_allclose(estimate_U(trace), D.T @ D / (trace.M - 1), rtol=1e-12)

    def test_U_symmetric(self):
        U = estimate_U(random_trace(1, p=4))
        np.testing.assert_array_equal(U, U.T)

    def test_U_needs_two_states(self):
        with pytest.raises(ConfigError):
            estimate_U(random_trace(0, M=1))

    def test_V_gibbs(self):
        trace = random_trace(2)
        expected = trace.f.T @ (trace.g - trace.g.mean(axis=0)) / trace.M
        np.testing.assert_allclose(estimate_V_gibbs(trace), expected, rtol=1e-12)

    @pytest.mark.parametrize("B", [0, 1, 3, 59, 200])
    def test_V_batch(self, B):
        trace = random_trace(3)
        np.testing.assert_allclose(estimate_V_batch(trace, B), batch_reference(trace, B),
                                   rtol=1e-10, atol=1e-12)

    def test_V_batch_negative_lag(self):
        with pytest.raises(ConfigError):
            estimate_V_batch(random_trace(0), -1)


class TestGibbsShortcutGuard:
    """The Gibbs V estimator on chains whose kernels are not Gibbs kernels."""

    def test_refused(self):
        with pytest.raises(ConfigError):
            estimate_V_gibbs(random_trace(4, is_gibbs=False, name="guard-refused"))

    def test_forced_warns_once(self, caplog):
        trace = random_trace(5, is_gibbs=False, name="guard-forced-once")
        with caplog.at_level(logging.WARNING, logger="sweepcv.weights"):
            estimate_V_gibbs(trace, force=True)
            estimate_V_gibbs(trace, force=True)
        forced = [r for r in caplog.records if "guard-forced-once" in r.getMessage()]
        assert len(forced) == 1


class TestPerKernelMoments:
    """U_k and V_k from the pairs around kernel k."""

    def test_single_kernel_matches_fixed(self):
        trace = random_trace(6, K=1)
        B = 4
        U1, V1 = estimate_Uk_Vk(trace, 1, B)
        np.testing.assert_allclose(U1, estimate_U(trace), rtol=1e-12)
        gbar = trace.g - trace.g.mean(axis=0)
        first_window = gbar[:B + 1].sum(axis=0)
        np.testing.assert_allclose(V1, estimate_V_batch(trace, B)
                                   - np.outer(trace.f[0], first_window) / trace.M,
                                   rtol=1e-10, atol=1e-12)

    def test_pairs(self):
        """U_2 of a K = 3 sweep uses f(X_{2+3n}) - cond_f(X_{1+3n})."""
        trace = random_trace(7, M=31, K=3)
        U2, _ = estimate_Uk_Vk(trace, 2, 0)
        N = 10
        before = 1 + 3 * np.arange(N - 1)
        D = trace.f[before + 1] - trace.cond_f[before]
        np.testing.assert_allclose(U2, D.T @ D / (N - 1), rtol=1e-12)

    def test_needs_two_sweeps(self):
        with pytest.raises(ConfigError):
            estimate_Uk_Vk(random_trace(8, M=5, K=3), 1, 0)

    def test_kernel_range(self):
        with pytest.raises(ConfigError):
            estimate_Uk_Vk(random_trace(8), 3, 0)

    def test_random_sweep_refused(self):
        trace = run_chain(BvnModel(0.5), SweepSchedule.random(2), 50, [0, 0], RngPolicy(0))
        with pytest.raises(UnsupportedScheduleError):
            estimate_Uk_Vk(trace, 1, 2)


class TestPseudoinverse:
    """Eigendecomposition pseudoinverse of symmetric PSD matrices."""

    def test_full_rank(self):
        A = np.array([[4.0, 1.0], [1.0, 3.0]])
        np.testing.assert_allclose(psd_pinv(A), np.linalg.inv(A), rtol=1e-12)

    def test_rank_one(self):
        v = np.array([1.0, 2.0, 2.0])
        A = np.outer(v, v)
        P = psd_pinv(A)
        np.testing.assert_allclose(P, A / 81.0, atol=1e-14)
        np.testing.assert_allclose(A @ P @ A, A, atol=1e-12)

    def test_zero(self):
        np.testing.assert_array_equal(psd_pinv(np.zeros((2, 2))), np.zeros((2, 2)))

    def test_rejects_non_finite(self):
        with pytest.raises(ConfigError):
            psd_pinv(np.array([[1.0, np.inf], [np.inf, 1.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ConfigError):
            psd_pinv(np.ones((2, 3)))


class TestSolveWeights:
    """C = pinv(U) V, per kernel when asked."""

    def test_fixed(self):
        U = np.diag([2.0, 4.0])
        V = np.array([[2.0], [8.0]])
        sol = solve_weights(MomentEstimate(U, V, 0, MomentMode.FIXED_GIBBS))
        np.testing.assert_allclose(sol.C_hat, [[1.0], [2.0]])
        assert sol.rank_used == 2 and not sol.per_kernel

    def test_per_kernel_shift(self):
        """Kernel k's moments land on the weight slot of sigma(k)."""
        I = np.eye(2)
        moments = MomentEstimate((I, I, I), (1 * I, 2 * I, 3 * I), 0, MomentMode.PER_KERNEL_BATCH)
        sol = solve_weights(moments)
        assert sol.per_kernel
        np.testing.assert_allclose(sol.C_hat[1], 1 * I)
        np.testing.assert_allclose(sol.C_hat[2], 2 * I)
        np.testing.assert_allclose(sol.C_hat[0], 3 * I)

    def test_rank_deficient_warns(self, caplog):
        U = np.array([[1.0, 1.0], [1.0, 1.0]])
        V = np.array([[1.0], [1.0]])
        with caplog.at_level(logging.WARNING, logger="sweepcv.weights"):
            sol = solve_weights(MomentEstimate(U, V, 0, MomentMode.FIXED_GIBBS))
        assert sol.rank_used == 1
        assert any("rank deficient" in r.getMessage() for r in caplog.records)
        np.testing.assert_allclose(sol.C_hat, [[0.5], [0.5]])

    def test_audit_dict(self):
        sol = solve_weights(MomentEstimate(np.eye(1), np.eye(1), 0, MomentMode.FIXED_GIBBS))
        assert sol.to_dict() == {"C_hat": [[1.0]], "rank_used": 1, "truncation_tol": 1e-10}

    def test_default_lag(self):
        assert default_batch_lag(2) == 10
        assert estimate_moments(random_trace(9), MomentMode.FIXED_BATCH).B == 10


class TestBvnWeights:
    """Estimated weights approach their closed forms on the normal sampler."""

    def test_x2(self):
        rho = 0.3
        C = estimate_weights(bvn_trace(rho, "x2", 200_000, 31)).C_hat
        assert C[0, 0] == pytest.approx(2 / (1 - rho ** 2), rel=0.03)

    def test_sum(self):
        C = estimate_weights(bvn_trace(0.5, "sum", 200_000, 32)).C_hat
        assert C[0, 0] == pytest.approx(4.0, rel=0.03)

    def test_batch_and_per_kernel_modes(self):
        trace = bvn_trace(0.3, "x2", 100_000, 33)
        gibbs = estimate_weights(trace).C_hat[0, 0]
        batch = estimate_weights(trace, MomentMode.FIXED_BATCH, 10).C_hat[0, 0]
        general = estimate_weights(trace, MomentMode.PER_KERNEL_BATCH, 10).C_hat
        assert batch == pytest.approx(gibbs, rel=0.05)
        assert len(general) == 2


@pytest.mark.slow
class TestVEstimatorsOnIsing:
    """Gibbs shortcut against batch means on the 3x3 checkerboard sweep."""

    M = 1_000_000
    B = 10

    def _trace(self, model, seed):
        policy = RngPolicy(seed)
        return run_chain(model, SweepSchedule.deterministic(2), self.M,
                         model.initial_state(policy.generator(1)), policy)

    def test_gibbs_kernels(self):
        model = build_finite_ising(3, 0.3, IsingSweep.CHECKERBOARD, IsingUpdate.GIBBS)
        V = exact_moments(model).V[0, 0]
        trace = self._trace(model, 41)
        assert abs(estimate_V_gibbs(trace)[0, 0] - V) <= 0.02 * abs(V)
        assert abs(estimate_V_batch(trace, self.B)[0, 0] - V) <= 0.05 * abs(V)

    def test_metropolis_kernels(self):
        model = build_finite_ising(3, 0.3, IsingSweep.CHECKERBOARD, IsingUpdate.METROPOLIS)
        V = exact_moments(model).V[0, 0]
        trace = self._trace(model, 42)
        assert abs(estimate_V_gibbs(trace, force=True)[0, 0] - V) > 0.10 * abs(V)
        assert abs(estimate_V_batch(trace, self.B)[0, 0] - V) <= 0.05 * abs(V)


@pytest.mark.slow
class TestZeroLagWeights:
    """With f = g the lag-0 batch weight converges to the identity."""

    def test_distance_to_identity_shrinks(self):
        model = build_finite_ising(3, 0.3, IsingSweep.CHECKERBOARD, IsingUpdate.GIBBS)
        medians = []
        for M in (1_000, 10_000, 100_000):
            dist = []
            for seed in range(20):
                policy = RngPolicy(500 + seed)
                trace = run_chain(model, SweepSchedule.deterministic(2), M,
                                  model.initial_state(policy.generator(1)), policy)
                C = estimate_weights(trace, MomentMode.FIXED_BATCH, 0).C_hat
                dist.append(np.linalg.norm(C - np.eye(1)))
            medians.append(np.median(dist))
        assert medians[0] > medians[1] > medians[2]


def finite_trace(model, M, seed):
    policy = RngPolicy(seed)
    return run_chain(model, SweepSchedule.deterministic(model.K), M,
                     model.initial_state(policy.generator(1)), policy)


@pytest.mark.slow
class TestPerKernelMomentsOnFiniteChains:
    """Per-kernel U_k and V_k against their enumerated values."""

    M = 1_000_000
    B = 50

    def _check(self, model, kernels, seed):
        exact = exact_moments(model)
        trace = finite_trace(model, self.M, seed)
        for k in kernels:
            U_k, V_k = estimate_Uk_Vk(trace, k, self.B)
            assert U_k[0, 0] == pytest.approx(exact.U_k[k - 1][0, 0], rel=0.03)
            assert V_k[0, 0] == pytest.approx(exact.V_k[k - 1][0, 0], rel=0.03)

    def test_data_augmentation_chain(self, make_da_chain):
        self._check(make_da_chain(11), (1,), 51)

    def test_metropolis_checkerboard(self):
        model = build_finite_ising(2, 0.3, IsingSweep.CHECKERBOARD, IsingUpdate.METROPOLIS)
        self._check(model, (1, 2), 52)


@pytest.mark.slow
class TestWeightsOnFiniteChains:
    """Estimated weights against C = pinv(U) V on an enumerated chain."""

    def test_data_augmentation_weight(self, make_da_chain):
        model = make_da_chain(11)
        exact = exact_moments(model)
        C = psd_pinv(exact.U) @ exact.V
        C_hat = estimate_weights(finite_trace(model, 1_000_000, 53)).C_hat
        assert C_hat[0, 0] == pytest.approx(C[0, 0], rel=0.05)

    def test_errors_shrink_with_chain_length(self, make_da_chain):
        model = make_da_chain(12)
        exact = exact_moments(model)
        targets = (exact.U, exact.V, psd_pinv(exact.U) @ exact.V)
        lengths = (10_000, 100_000, 1_000_000)
        errors = np.empty((20, len(lengths), 3))
        for seed in range(20):
            full = finite_trace(model, lengths[-1], 600 + seed)
            for j, M in enumerate(lengths):
                trace = full.truncated(M)
                U, V = estimate_U(trace), estimate_V_gibbs(trace)
                for q, (est, target) in enumerate(zip((U, V, psd_pinv(U) @ V), targets)):
                    errors[seed, j, q] = np.linalg.norm(est - target) / np.linalg.norm(target)
        medians = np.median(errors, axis=0)
        assert np.all(np.diff(medians, axis=0) < 0)
