"""
Averaging schemes computed from a Trace.

Every mean is an exactly rounded sum (math.fsum) of elementwise terms, so
schemes that agree algebraically (C = 0 and the plain average, C = I with
f = g and Rao-Blackwell, equal general weights and a fixed weight) agree to
the last bit.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, UnsupportedScheduleError
from sweep_core import Trace

logger = logging.getLogger("sweepcv.estimators")


class Scheme(str, Enum):
    EMPIRICAL = "empirical"
    RAO_BLACKWELL = "rb"
    FIXED_CV = "fixed"
    GENERAL_CV = "general"
    LWK = "lwk"


@dataclass(frozen=True)
class EstimateResult:
    mean: np.ndarray
    M: int
    scheme: Scheme
    weights_used: Optional[Tuple[np.ndarray, ...]] = None


def _fsum_mean(M: int, d: int, *blocks: np.ndarray) -> np.ndarray:
    """blocks are (M, ..., d) term arrays; component j sums every [..., j] entry."""
    mean = np.empty(d)
    for j in range(d):
        terms = np.concatenate([b[..., j].ravel() for b in blocks])
        mean[j] = math.fsum(terms) / M
    return mean


def as_weight(C, p: int, d: int) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    if C.ndim == 0:
        C = C * np.eye(p, d)
    if C.shape != (p, d):
        raise ConfigError(f"weight matrix must be {p}x{d}, got {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ConfigError("weight matrix has non-finite entries")
    return C


def empirical_mean(trace: Trace) -> EstimateResult:
    return EstimateResult(_fsum_mean(trace.M, trace.d, trace.g), trace.M, Scheme.EMPIRICAL)


def rao_blackwell_mean(trace: Trace) -> EstimateResult:
    return EstimateResult(_fsum_mean(trace.M, trace.d, trace.cond_g), trace.M, Scheme.RAO_BLACKWELL)


def fixed_cv_mean(trace: Trace, C) -> EstimateResult:
    """M^-1 sum of g(X_t) - C^T {f(X_t) - Pi_{sigma^t(1)} f(X_t)}."""
    C = as_weight(C, trace.p, trace.d)
    minus = -(trace.f[:, :, None] * C[None])
    plus = trace.cond_f[:, :, None] * C[None]
    mean = _fsum_mean(trace.M, trace.d, trace.g, minus, plus)
    return EstimateResult(mean, trace.M, Scheme.FIXED_CV, (C,))


def general_cv_mean(trace: Trace, weights: Sequence) -> EstimateResult:
    """Kernel-indexed weights: C_{sigma^t(1)} on f(X_t), C_{sigma^{t+1}(1)} on its conditional mean.

    At t = M-1 the successor weight wraps cyclically.
    """
    if not trace.schedule.is_deterministic:
        raise UnsupportedScheduleError("general control variates need a deterministic sweep")
    if len(weights) != trace.K:
        raise ConfigError(f"general scheme needs {trace.K} weight matrices, got {len(weights)}")
    stack = np.stack([as_weight(C, trace.p, trace.d) for C in weights])
    current = trace.kernel_at - 1
    successor = trace.kernel_at % trace.K
    minus = -(trace.f[:, :, None] * stack[current])
    plus = trace.cond_f[:, :, None] * stack[successor]
    mean = _fsum_mean(trace.M, trace.d, trace.g, minus, plus)
    return EstimateResult(mean, trace.M, Scheme.GENERAL_CV, tuple(stack))


def lwk_mean(trace: Trace) -> EstimateResult:
    """M^-1 sum of Pi_1 g(X_t) over every t (data-augmentation chains)."""
    if not trace.schedule.is_deterministic:
        raise UnsupportedScheduleError("the LWK estimator needs a deterministic sweep")
    if trace.K != 2 or not trace.data_augmentation or trace.cond_g_first is None:
        raise ConfigError("the LWK estimator needs a two-kernel data-augmentation chain")
    return EstimateResult(_fsum_mean(trace.M, trace.d, trace.cond_g_first), trace.M, Scheme.LWK)


def estimate(trace: Trace, scheme, weights=None) -> EstimateResult:
    scheme = Scheme(scheme)
    if scheme is Scheme.EMPIRICAL:
        return empirical_mean(trace)
    if scheme is Scheme.RAO_BLACKWELL:
        return rao_blackwell_mean(trace)
    if scheme is Scheme.LWK:
        return lwk_mean(trace)
    if weights is None:
        raise ConfigError(f"scheme {scheme.value} needs weights")
    if scheme is Scheme.FIXED_CV:
        return fixed_cv_mean(trace, weights)
    return general_cv_mean(trace, weights)
