"""
Exact finite-state computations for deterministic-sweep chains.

Poisson solutions come from the fundamental matrix of the sweep composition
P_1^K = P_1 P_2 ... P_K; every variance below is assembled from them without
series truncation. Matrices are densified, so models are capped at
config.MAX_STATES states.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from config import (MAX_STATES, POISSON_RESIDUAL_TOL, PSD_TOL, ROW_SUM_TOL,
                    STATIONARITY_TOL)
from errors import ConfigError, ModelCertificationError
from models import FiniteModel
from sweep_core import sigma, sigma_power
from weights import psd_pinv

logger = logging.getLogger("sweepcv.oracle")

EIGEN_DIAGNOSTIC_MAX_STATES = 512
LWK_TOL = 1e-10

Weights = Union[str, float, np.ndarray, Sequence[np.ndarray]]


# -------------------
# Helpers
# -------------------
def _require_dense(model: FiniteModel) -> None:
    if model.n_states > MAX_STATES:
        raise ConfigError(f"oracle is limited to {MAX_STATES} states, model has {model.n_states}")


def _integral(pi: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """int pi(dx) a(x) b(x)^T for (n, p) and (n, d) tables."""
    return a.T @ (pi[:, None] * b)


def _sym(A: np.ndarray) -> np.ndarray:
    return (A + A.T) / 2


def psd_leq(A, B, tol: float = PSD_TOL) -> bool:
    """A <= B in the positive-semidefinite order, up to -tol on the smallest eigenvalue."""
    return float(np.linalg.eigvalsh(_sym(np.asarray(B) - np.asarray(A))).min()) >= -tol


def psd_lt(A, B, tol: float = PSD_TOL) -> bool:
    """A <= B with at least one eigenvalue of B - A above tol."""
    w = np.linalg.eigvalsh(_sym(np.asarray(B) - np.asarray(A)))
    return float(w.min()) >= -tol and float(w.max()) > tol


def composition(model: FiniteModel, k: int = 1) -> np.ndarray:
    """Dense P_k^K = Pi_k Pi_{sigma(k)} ... Pi_{sigma^{K-1}(k)}."""
    _require_dense(model)
    order = [sigma_power(k, m, model.K) for m in range(model.K)]
    prod = model.P[order[0] - 1]
    for j in order[1:]:
        prod = prod @ model.P[j - 1]
    return prod.toarray()


def _fundamental_solve(A: np.ndarray, pi: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (I - A + 1 pi^T) x = rhs, i.e. x = sum_t A^t rhs for pi-centered rhs."""
    n = len(pi)
    system = np.eye(n) - A + np.outer(np.ones(n), pi)
    lu, piv = scipy.linalg.lu_factor(system)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= n * np.finfo(float).eps * pivots.max():
        raise ModelCertificationError("fundamental matrix is singular; the sweep composition is not ergodic")
    return scipy.linalg.lu_solve((lu, piv), rhs)


def _center(model: FiniteModel, values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != model.n_states:
        raise ConfigError(f"integrand needs {model.n_states} rows, got {values.shape[0]}")
    return values - model.pi @ values


# -------------------
# Stationarity and ergodicity
# -------------------
@dataclass(frozen=True)
class StationarityDiagnostics:
    stationarity_residual: float
    row_sum_residual: float
    centering_residual: float
    ergodic: bool
    positive_power: Optional[int]
    eigen_pi_residual: Optional[float] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def stationary_check(model: FiniteModel, tol: float = STATIONARITY_TOL) -> StationarityDiagnostics:
    """Certify row-stochasticity, pi-invariance of every kernel, and primitivity of P_1^K."""
    _require_dense(model)
    pi = model.pi
    row_res = max(float(np.max(np.abs(np.asarray(P.sum(axis=1)).ravel() - 1.0))) for P in model.P)
    stat_res = max(float(np.max(np.abs(P.T @ pi - pi))) for P in model.P)
    center_res = float(np.max(np.abs(pi @ model.g_vals)))
    if row_res > ROW_SUM_TOL:
        raise ModelCertificationError(f"transition rows do not sum to one (residual {row_res:.3g})")
    if abs(math.fsum(pi) - 1.0) > tol:
        raise ModelCertificationError("pi does not sum to one")
    if stat_res > tol:
        raise ModelCertificationError(f"pi is not stationary for every kernel (residual {stat_res:.3g})")

    A = composition(model, 1)
    n = model.n_states
    reach = (A > 0).astype(float)
    power = 1
    bound = (n - 1) ** 2 + 1
    while not reach.all() and power < bound:
        reach = ((reach @ reach) > 0).astype(float)
        power *= 2
    ergodic = bool(reach.all())
    if not ergodic:
        raise ModelCertificationError("sweep composition is not irreducible and aperiodic")

    eig_res = None
    if n <= EIGEN_DIAGNOSTIC_MAX_STATES:
        w, vl = scipy.linalg.eig(A, left=True, right=False)
        v = np.real(vl[:, np.argmin(np.abs(w - 1.0))])
        eig_res = float(np.max(np.abs(v / v.sum() - pi)))
    logger.info("model %s certified: stationarity %.2e, P_1^K positive by power %d",
                model.name, stat_res, power)
    return StationarityDiagnostics(stat_res, row_res, center_res, ergodic, power, eig_res)


# -------------------
# Poisson equation
# -------------------
@dataclass(frozen=True)
class PoissonSolutions:
    """g_hat[k-1] solves g_hat_k - P_k g_hat_{sigma(k)} = g."""
    g_hat: Tuple[np.ndarray, ...]
    residual: float
    centering: float


def _poisson(model: FiniteModel, values: np.ndarray) -> PoissonSolutions:
    _require_dense(model)
    K = model.K
    P = model.P
    # r = sum_{m<K} P_1^m v, nested from the innermost kernel outwards
    r = values
    for k in range(K - 1, 0, -1):
        r = values + P[k - 1] @ r
    g_hat = [None] * K
    g_hat[0] = _fundamental_solve(composition(model, 1), model.pi, r)
    nxt = g_hat[0]
    for k in range(K, 1, -1):
        nxt = values + P[k - 1] @ nxt
        g_hat[k - 1] = nxt
    residual = max(float(np.max(np.abs(g_hat[k - 1] - P[k - 1] @ g_hat[sigma(k, K) - 1] - values)))
                   for k in range(1, K + 1))
    centering = max(float(np.max(np.abs(model.pi @ gh))) for gh in g_hat)
    return PoissonSolutions(tuple(g_hat), residual, centering)


def poisson_solve(model: FiniteModel) -> PoissonSolutions:
    sols = _poisson(model, model.g_vals)
    if sols.residual > POISSON_RESIDUAL_TOL or sols.centering > POISSON_RESIDUAL_TOL:
        raise ModelCertificationError(
            f"Poisson solution residual {sols.residual:.3g} (centering {sols.centering:.3g}) "
            f"exceeds {POISSON_RESIDUAL_TOL}")
    return sols


def poisson_series(model: FiniteModel, terms: int = 200) -> Tuple[np.ndarray, ...]:
    """sum_{t=0}^{terms} P_k^t g for every k, as a truncation cross-check."""
    K = model.K
    acc = [model.g_vals] * K
    for _ in range(terms):
        acc = [model.g_vals + model.P[k - 1] @ acc[sigma(k, K) - 1] for k in range(1, K + 1)]
    return tuple(acc)


def composition_slem(model: FiniteModel, k: int = 1) -> float:
    """Second-largest eigenvalue modulus of P_k^K."""
    w = np.sort(np.abs(scipy.linalg.eigvals(composition(model, k))))[::-1]
    return float(w[1]) if len(w) > 1 else 0.0


# -------------------
# Moments and variances
# -------------------
@dataclass(frozen=True)
class ExactMoments:
    U_k: Tuple[np.ndarray, ...]
    V_k: Tuple[np.ndarray, ...]
    U: np.ndarray
    V: np.ndarray


def exact_moments(model: FiniteModel, solutions: Optional[PoissonSolutions] = None) -> ExactMoments:
    if solutions is None:
        solutions = poisson_solve(model)
    K, pi, f = model.K, model.pi, model.f_vals
    U_k, V_k = [], []
    for k in range(1, K + 1):
        Pf = model.kernel_f(k)
        gh = solutions.g_hat[sigma(k, K) - 1]
        U_k.append(_sym(_integral(pi, f, f) - _integral(pi, Pf, Pf)))
        V_k.append(_integral(pi, f, gh) - _integral(pi, Pf, model.P[k - 1] @ gh))
    return ExactMoments(tuple(U_k), tuple(V_k), sum(U_k) / K, sum(V_k) / K)


def _sigma0(model: FiniteModel, values: np.ndarray, g_hat: Sequence[np.ndarray]) -> np.ndarray:
    pi = model.pi
    cross = sum(_integral(pi, values, gh) + _integral(pi, gh, values) for gh in g_hat) / model.K
    return _sym(cross - _integral(pi, values, values))


def exact_sigma_integrand(model: FiniteModel, values) -> np.ndarray:
    """Asymptotic variance of the plain average of an arbitrary integrand on the sweep chain."""
    values = _center(model, values)
    sols = _poisson(model, values)
    if sols.residual > POISSON_RESIDUAL_TOL:
        raise ModelCertificationError(f"Poisson residual {sols.residual:.3g} for integrand")
    return _sigma0(model, values, sols.g_hat)


def resolve_weights(model: FiniteModel, moments: ExactMoments, weights: Weights):
    """Array, scalar multiple of I, K-list (entry j weights kernel j+1), or preset name."""
    p, d, K = model.p, model.d, model.K
    if isinstance(weights, str):
        if weights == "zero":
            return np.zeros((p, d))
        if weights in ("identity", "two"):
            if p != d:
                raise ConfigError(f"preset {weights!r} needs p = d")
            return (1.0 if weights == "identity" else 2.0) * np.eye(d)
        if weights == "optimal":
            return psd_pinv(moments.U) @ moments.V
        if weights == "optimal_general":
            return optimal_general_weights(model, moments)
        raise ConfigError(f"unknown weight preset {weights!r}")
    if isinstance(weights, (list, tuple)):
        if len(weights) != K:
            raise ConfigError(f"per-kernel weights need {K} matrices")
        return tuple(_check_weight(w, p, d) for w in weights)
    return _check_weight(weights, p, d)


def _check_weight(C, p, d) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    if C.ndim == 0:
        if p != d:
            raise ConfigError("scalar weight needs p = d")
        C = C * np.eye(d)
    if C.shape != (p, d):
        raise ConfigError(f"weight must be {p}x{d}, got {C.shape}")
    return C


def optimal_general_weights(model: FiniteModel, moments: ExactMoments) -> Tuple[np.ndarray, ...]:
    """C_{sigma(k)} = U_k^+ V_k, returned indexed by kernel."""
    K = model.K
    out = [None] * K
    for k in range(1, K + 1):
        out[sigma(k, K) - 1] = psd_pinv(moments.U_k[k - 1]) @ moments.V_k[k - 1]
    return tuple(out)


def exact_sigma_c(model: FiniteModel, weights: Weights, solutions: Optional[PoissonSolutions] = None,
                  moments: Optional[ExactMoments] = None) -> np.ndarray:
    if solutions is None:
        solutions = poisson_solve(model)
    if moments is None:
        moments = exact_moments(model, solutions)
    C = resolve_weights(model, moments, weights)
    K = model.K
    total = _sigma0(model, model.g_vals, solutions.g_hat)
    for k in range(1, K + 1):
        Ck = C[sigma(k, K) - 1] if isinstance(C, tuple) else C
        Vk = moments.V_k[k - 1]
        total = total + (Ck.T @ moments.U_k[k - 1] @ Ck - Ck.T @ Vk - Vk.T @ Ck) / K
    return _sym(total)


# -------------------
# Random sweep (K = 2)
# -------------------
class _RandomSweep:
    """Q = (P_1 + P_2)/2 with its fundamental solve."""

    def __init__(self, model: FiniteModel):
        if model.K != 2:
            raise ConfigError(f"random-sweep comparison needs K = 2, model has K = {model.K}")
        if not model.is_gibbs:
            raise ConfigError("random-sweep comparison needs Gibbs kernels")
        _require_dense(model)
        self.model = model
        self.Q = ((model.P[0] + model.P[1]) / 2).toarray()
        n = model.n_states
        self.lu = scipy.linalg.lu_factor(np.eye(n) - self.Q + np.outer(np.ones(n), model.pi))

    def series(self, h: np.ndarray) -> np.ndarray:
        """sum_{t>=0} Q^t h for pi-centered h."""
        return scipy.linalg.lu_solve(self.lu, h)

    def h(self, C: np.ndarray) -> np.ndarray:
        m = self.model
        return m.g_vals - (m.f_vals - self.Q @ m.f_vals) @ C

    def tail(self, h: np.ndarray) -> np.ndarray:
        """sum_{t>=1} int h (Q^t h)^T."""
        return _sym(_integral(self.model.pi, h, self.series(h) - h))

    def form(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return _integral(self.model.pi, a, 2 * self.series(b) - b)


def random_sweep_tail(model: FiniteModel, C) -> np.ndarray:
    rs = _RandomSweep(model)
    return rs.tail(rs.h(_check_weight(C, model.p, model.d)))


def exact_sigma_rev(model: FiniteModel, C) -> np.ndarray:
    """Random-sweep variance int hh^T + 2 sum_{t>=1} int h (Q^t h)^T, h = g - C^T(f - Qf)."""
    rs = _RandomSweep(model)
    h = rs.h(_check_weight(C, model.p, model.d))
    return _sym(_integral(model.pi, h, h) + 2 * rs.tail(h))


def exact_sigma_det_h(model: FiniteModel, C) -> np.ndarray:
    """Deterministic-sweep variance written through h: int hh^T + sum_{t>=1} int h (Q^t h)^T."""
    rs = _RandomSweep(model)
    h = rs.h(_check_weight(C, model.p, model.d))
    return _sym(_integral(model.pi, h, h) + rs.tail(h))


def random_sweep_optimal_weight(model: FiniteModel) -> np.ndarray:
    """C-bar minimising the random-sweep variance."""
    rs = _RandomSweep(model)
    F = model.f_vals - rs.Q @ model.f_vals
    return psd_pinv(rs.form(F, F)) @ rs.form(F, model.g_vals)


@dataclass(frozen=True)
class SweepGap:
    Ctilde: np.ndarray
    Cbar: np.ndarray
    sigma_det: np.ndarray
    sigma_rev: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.lhs - self.rhs)))


def exact_sweep_gap(model: FiniteModel, solutions: Optional[PoissonSolutions] = None) -> SweepGap:
    """Optimal deterministic sweep against optimal random sweep, both sides of the gap identity."""
    solutions = solutions or poisson_solve(model)
    moments = exact_moments(model, solutions)
    Ctilde = psd_pinv(moments.U) @ moments.V
    Cbar = random_sweep_optimal_weight(model)
    sigma_det = exact_sigma_c(model, Ctilde, solutions, moments)
    sigma_rev = exact_sigma_rev(model, Cbar)
    diff = Cbar - Ctilde
    rhs = -_sym(diff.T @ moments.U @ diff) - random_sweep_tail(model, Cbar)
    return SweepGap(Ctilde, Cbar, sigma_det, sigma_rev, sigma_det - sigma_rev, rhs)


# -------------------
# Batch-means limit
# -------------------
def exact_batch_limit(model: FiniteModel, B: int) -> np.ndarray:
    """Large-M limit of the lag-B batch-means V estimator on a stationary deterministic sweep."""
    if B < 0:
        raise ConfigError(f"batch lag must be non-negative, got {B}")
    K, pi, f, g = model.K, model.pi, model.f_vals, model.g_vals
    # level[k-1] = P_k^s g for the current s
    level = [g] * K
    total = np.zeros((model.p, model.d))
    for s in range(B + 2):
        for k in range(1, K + 1):
            if s <= B:
                total = total + _integral(pi, f, level[k - 1])
            if s >= 1:
                total = total - _integral(pi, model.kernel_f(k), level[k - 1])
        level = [model.P[k - 1] @ level[sigma(k, K) - 1] for k in range(1, K + 1)]
    return total / K


# -------------------
# LWK
# -------------------
@dataclass(frozen=True)
class LwkReport:
    A: np.ndarray
    B: np.ndarray
    Sigma0: np.ndarray
    Sigma1: np.ndarray
    Sigma2: np.ndarray
    SigmaLWK: np.ndarray
    SigmaCtilde: np.ndarray
    Ctilde: np.ndarray
    residuals: Dict[str, float]
    ordering: Dict[str, bool]

    @property
    def holds(self) -> bool:
        return all(r <= LWK_TOL for r in self.residuals.values()) and all(self.ordering.values())

    def to_dict(self) -> dict:
        out = {k: getattr(self, k).tolist() for k in
               ("A", "B", "Sigma0", "Sigma1", "Sigma2", "SigmaLWK", "SigmaCtilde", "Ctilde")}
        out.update(residuals=self.residuals, ordering=self.ordering, holds=self.holds)
        return out


def _maxabs(A) -> float:
    return float(np.max(np.abs(A)))


def lwk_certify(model: FiniteModel, solutions: Optional[PoissonSolutions] = None) -> LwkReport:
    """Check the LWK variance identities on a two-block data-augmentation chain with f = g."""
    if model.K != 2:
        raise ConfigError("LWK certification needs K = 2")
    if not model.data_augmentation:
        raise ConfigError("LWK certification needs P_2 g = g")
    if model.f_vals.shape != model.g_vals.shape or not np.array_equal(model.f_vals, model.g_vals):
        raise ConfigError("LWK certification needs f = g")
    pi, g = model.pi, model.g_vals
    A = _sym(_integral(pi, g, g))
    if float(np.linalg.eigvalsh(A).min()) <= 0:
        raise ConfigError("int g g^T must be positive definite")
    P1g = model.kernel_g(1)
    B = _sym(_integral(pi, P1g, P1g))

    solutions = solutions or poisson_solve(model)
    moments = exact_moments(model, solutions)
    Sigma0 = exact_sigma_c(model, "zero", solutions, moments)
    Sigma1 = exact_sigma_c(model, "identity", solutions, moments)
    Sigma2 = exact_sigma_c(model, "two", solutions, moments)
    Ctilde = psd_pinv(moments.U) @ moments.V
    SigmaCt = exact_sigma_c(model, Ctilde, solutions, moments)
    SigmaLWK = exact_sigma_integrand(model, P1g)

    AmB_inv = np.linalg.inv(A - B)
    residuals = {
        "sigma2_vs_lwk": _maxabs(Sigma2 - SigmaLWK),
        "ctilde_minus_sigma2": _maxabs(SigmaCt - Sigma2 + 2 * B @ AmB_inv @ B),
        "sigma2_minus_sigma1": _maxabs(Sigma2 - Sigma1 + (A + 3 * B) / 2),
        "sigma1_minus_sigma0": _maxabs(Sigma1 - Sigma0 + (B + 3 * A) / 2),
        "ctilde_closed_form": _maxabs(Ctilde - 2 * AmB_inv @ A),
    }
    ordering = {
        "ctilde_le_sigma2": psd_leq(SigmaCt, Sigma2),
        "sigma2_lt_sigma1": psd_lt(Sigma2, Sigma1),
        "sigma1_lt_sigma0": psd_lt(Sigma1, Sigma0),
    }
    report = LwkReport(A, B, Sigma0, Sigma1, Sigma2, SigmaLWK, SigmaCt, Ctilde, residuals, ordering)
    logger.info("LWK certification for %s: %s", model.name, "holds" if report.holds else "FAILS")
    return report


# -------------------
# Full report
# -------------------
@dataclass(frozen=True)
class VarianceReport:
    Sigma0: np.ndarray
    Sigma1: Optional[np.ndarray]
    Sigma2: Optional[np.ndarray]
    Ctilde: np.ndarray
    SigmaCtilde: np.ndarray
    Ctilde_general: Tuple[np.ndarray, ...]
    SigmaCtilde_general: np.ndarray
    U: np.ndarray
    V: np.ndarray
    SigmaC: Optional[np.ndarray] = None
    SigmaRev: Optional[np.ndarray] = None
    Cbar: Optional[np.ndarray] = None
    SigmaRevCbar: Optional[np.ndarray] = None
    lwk_block: Optional[LwkReport] = None
    diagnostics: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {}
        for key, value in self.__dict__.items():
            if value is None:
                out[key] = None
            elif isinstance(value, LwkReport):
                out[key] = value.to_dict()
            elif isinstance(value, tuple):
                out[key] = [v.tolist() for v in value]
            elif isinstance(value, np.ndarray):
                out[key] = value.tolist()
            else:
                out[key] = value
        return out


def exact_sigma(model: FiniteModel, solutions: Optional[PoissonSolutions] = None,
                weights: Optional[Weights] = None) -> VarianceReport:
    """Sigma_0, Sigma_1, Sigma_2, the optimal weights and, when asked, Sigma_C for `weights`."""
    solutions = solutions or poisson_solve(model)
    moments = exact_moments(model, solutions)
    square = model.p == model.d
    Ctilde = psd_pinv(moments.U) @ moments.V
    general = optimal_general_weights(model, moments)
    SigmaC = None
    if weights is not None:
        SigmaC = exact_sigma_c(model, weights, solutions, moments)

    SigmaRev = Cbar = SigmaRevCbar = None
    if model.K == 2 and model.is_gibbs:
        Cbar = random_sweep_optimal_weight(model)
        SigmaRevCbar = exact_sigma_rev(model, Cbar)
        if weights is not None:
            C = resolve_weights(model, moments, weights)
            if not isinstance(C, tuple):
                SigmaRev = exact_sigma_rev(model, C)

    lwk = None
    if model.data_augmentation and model.f_vals.shape == model.g_vals.shape \
            and np.array_equal(model.f_vals, model.g_vals):
        lwk = lwk_certify(model, solutions)

    return VarianceReport(
        Sigma0=exact_sigma_c(model, "zero", solutions, moments),
        Sigma1=exact_sigma_c(model, "identity", solutions, moments) if square else None,
        Sigma2=exact_sigma_c(model, "two", solutions, moments) if square else None,
        Ctilde=Ctilde,
        SigmaCtilde=exact_sigma_c(model, Ctilde, solutions, moments),
        Ctilde_general=general,
        SigmaCtilde_general=exact_sigma_c(model, general, solutions, moments),
        U=moments.U, V=moments.V,
        SigmaC=SigmaC, SigmaRev=SigmaRev, Cbar=Cbar, SigmaRevCbar=SigmaRevCbar,
        lwk_block=lwk,
        diagnostics={"poisson_residual": solutions.residual},
    )


def certify(model: FiniteModel, weights: Optional[Weights] = None) -> VarianceReport:
    """stationary_check, poisson_solve and exact_sigma in one pass."""
    diag = stationary_check(model)
    solutions = poisson_solve(model)
    report = exact_sigma(model, solutions, weights)
    report.diagnostics.update(diag.to_dict())
    return report
