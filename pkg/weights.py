"""
Control-variate weights from chain output.

U is estimated from one-step martingale increments f(X_{t+1}) - Pi f(X_t);
V either through the Gibbs shortcut (valid only when every kernel is a Gibbs
kernel) or through lag-B batch means. Weights are C = pinv(U) V.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np
import scipy.linalg

from config import DEFAULT_BATCH_SWEEPS, PINV_TOL
from errors import ConfigError, UnsupportedScheduleError
from sweep_core import Trace, sigma

logger = logging.getLogger("sweepcv.weights")

Matrix = np.ndarray
MatrixOrList = Union[Matrix, Tuple[Matrix, ...]]

# model names already warned about a forced Gibbs V estimate
_forced_warned = set()


class MomentMode(str, Enum):
    FIXED_GIBBS = "gibbs"
    FIXED_BATCH = "batch"
    PER_KERNEL_BATCH = "per_kernel"


@dataclass(frozen=True)
class MomentEstimate:
    """U_hat, V_hat are single matrices, or K-tuples indexed by kernel in per-kernel mode."""
    U_hat: MatrixOrList
    V_hat: MatrixOrList
    B: int
    mode: MomentMode

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "B": self.B,
                "U_hat": _listify(self.U_hat), "V_hat": _listify(self.V_hat)}


@dataclass(frozen=True)
class WeightSolution:
    """C_hat is one p x d matrix, or a K-tuple where C_hat[j] weights kernel j+1."""
    C_hat: MatrixOrList
    rank_used: Union[int, Tuple[int, ...]]
    truncation_tol: float

    @property
    def per_kernel(self) -> bool:
        return isinstance(self.C_hat, tuple)

    def to_dict(self) -> dict:
        return {"C_hat": _listify(self.C_hat), "rank_used": self.rank_used,
                "truncation_tol": self.truncation_tol}


def _listify(m):
    if isinstance(m, tuple):
        return [x.tolist() for x in m]
    return m.tolist()


def _symmetrize(A: np.ndarray) -> np.ndarray:
    return (A + A.T) / 2


def _centered_g(g: np.ndarray) -> np.ndarray:
    return g - g.mean(axis=0)


def _window_sums(gbar: np.ndarray, start: np.ndarray, stop: np.ndarray) -> np.ndarray:
    """Sums of gbar[start..stop] inclusive; empty when start > stop."""
    cs = np.vstack([np.zeros((1, gbar.shape[1])), np.cumsum(gbar, axis=0)])
    return cs[np.maximum(stop + 1, start)] - cs[start]


# -------------------
# Moment estimators
# -------------------
def estimate_U(trace: Trace) -> np.ndarray:
    if trace.M < 2:
        raise ConfigError("estimating U needs at least two states")
    D = trace.f[1:] - trace.cond_f[:-1]
    return _symmetrize(D.T @ D / (trace.M - 1))


def estimate_V_gibbs(trace: Trace, force: bool = False) -> np.ndarray:
    """M^-1 sum f(X_t) gbar(X_t)^T; consistent only for Gibbs kernels."""
    if not trace.is_gibbs:
        if not force:
            raise ConfigError("the Gibbs V estimator is inconsistent for non-Gibbs kernels; "
                              "use batch means")
        if trace.model_name not in _forced_warned:
            _forced_warned.add(trace.model_name)
            logger.warning("Gibbs V estimator forced on non-Gibbs chain %s", trace.model_name)
    return trace.f.T @ _centered_g(trace.g) / trace.M


def estimate_V_batch(trace: Trace, B: int) -> np.ndarray:
    """Batch-means V with autocovariances up to lag B, windows capped at M-1."""
    if B < 0:
        raise ConfigError(f"batch lag must be non-negative, got {B}")
    M = trace.M
    gbar = _centered_g(trace.g)
    t = np.arange(M)
    first = _window_sums(gbar, t, np.minimum(t + B, M - 1))
    second = _window_sums(gbar, np.minimum(t + 1, M), np.minimum(t + 1 + B, M - 1))
    return (trace.f.T @ first - trace.cond_f.T @ second) / M


def estimate_Uk_Vk(trace: Trace, k: int, B: int) -> Tuple[np.ndarray, np.ndarray]:
    """Moments of kernel k from the pairs (X_{k+Kn-1}, X_{k+Kn}) over N full sweeps.

    The trace is truncated to N = M // K sweeps; the batch window for V_k
    starts at X_{k+Kn}, the state kernel k produced.
    """
    if not trace.schedule.is_deterministic:
        raise UnsupportedScheduleError("per-kernel moments need a deterministic sweep")
    K = trace.K
    if not 1 <= k <= K:
        raise ConfigError(f"kernel index {k} outside 1..{K}")
    if B < 0:
        raise ConfigError(f"batch lag must be non-negative, got {B}")
    N = trace.M // K
    if N < 2:
        raise ConfigError(f"per-kernel moments need at least two full sweeps, got {N}")
    L = N * K
    f, cond_f = trace.f[:L], trace.cond_f[:L]
    gbar = _centered_g(trace.g[:L])

    before = k - 1 + K * np.arange(N)
    after = before + 1
    D = f[after[:-1]] - cond_f[before[:-1]]
    U_k = _symmetrize(D.T @ D / (N - 1))

    # for k = K the last produced state falls past the truncated trace
    keep = after <= L - 1
    before, after = before[keep], after[keep]
    W = _window_sums(gbar, after, np.minimum(after + B, L - 1))
    V_k = (f[after] - cond_f[before]).T @ W / N
    return U_k, V_k


# -------------------
# Pseudoinverse and weights
# -------------------
def _pinv_with_rank(A, tol: float) -> Tuple[np.ndarray, int]:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError(f"pseudoinverse needs a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ConfigError("pseudoinverse input has non-finite entries")
    w, Q = scipy.linalg.eigh(_symmetrize(A))
    top = w.max() if w.size else 0.0
    if top <= 0:
        return np.zeros_like(A), 0
    keep = w > tol * top
    Qk = Q[:, keep]
    return _symmetrize((Qk / w[keep]) @ Qk.T), int(keep.sum())


def psd_pinv(A, tol: float = PINV_TOL) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric PSD matrix; eigenvalues below tol * lambda_max are dropped."""
    return _pinv_with_rank(A, tol)[0]


def _solve_one(U, V, tol):
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    if U.ndim != 2 or V.ndim != 2 or U.shape[0] != V.shape[0]:
        raise ConfigError(f"U {U.shape} and V {V.shape} do not match")
    Uinv, rank = _pinv_with_rank(U, tol)
    if rank < U.shape[0]:
        logger.warning("U is rank deficient (rank %d of %d); weights use the pseudoinverse",
                       rank, U.shape[0])
    return Uinv @ V, rank


def solve_weights(moments: MomentEstimate, tol: float = PINV_TOL) -> WeightSolution:
    if moments.mode is not MomentMode.PER_KERNEL_BATCH:
        C, rank = _solve_one(moments.U_hat, moments.V_hat, tol)
        return WeightSolution(C, rank, tol)
    K = len(moments.U_hat)
    if len(moments.V_hat) != K:
        raise ConfigError("per-kernel moments need one V_k for every U_k")
    weights = [None] * K
    ranks = [0] * K
    for k in range(1, K + 1):
        # kernel k's moments give the weight applied from sigma(k) onward
        C, rank = _solve_one(moments.U_hat[k - 1], moments.V_hat[k - 1], tol)
        weights[sigma(k, K) - 1] = C
        ranks[sigma(k, K) - 1] = rank
    return WeightSolution(tuple(weights), tuple(ranks), tol)


def default_batch_lag(K: int) -> int:
    return DEFAULT_BATCH_SWEEPS * K


def estimate_moments(trace: Trace, mode=MomentMode.FIXED_GIBBS, B: Optional[int] = None,
                     force: bool = False) -> MomentEstimate:
    mode = MomentMode(mode)
    if B is None:
        B = default_batch_lag(trace.K)
    if mode is MomentMode.FIXED_GIBBS:
        return MomentEstimate(estimate_U(trace), estimate_V_gibbs(trace, force=force), 0, mode)
    if mode is MomentMode.FIXED_BATCH:
        return MomentEstimate(estimate_U(trace), estimate_V_batch(trace, B), B, mode)
    pairs = [estimate_Uk_Vk(trace, k, B) for k in range(1, trace.K + 1)]
    return MomentEstimate(tuple(u for u, _ in pairs), tuple(v for _, v in pairs), B, mode)


def estimate_weights(trace: Trace, mode=MomentMode.FIXED_GIBBS, B: Optional[int] = None,
                     tol: float = PINV_TOL, force: bool = False) -> WeightSolution:
    solution = solve_weights(estimate_moments(trace, mode, B, force=force), tol)
    logger.debug("weights for %s (%s): %s", trace.model_name, MomentMode(mode).value,
                 solution.to_dict()["C_hat"])
    return solution
