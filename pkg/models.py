"""
Concrete sweep models.

- BvnModel: two-block Gibbs sampler for the standard bivariate normal.
- IsingModel: free-boundary Ising lattice, Gibbs or Metropolis site kernels,
  raster (K = n^2) or checkerboard (K = 2) sweeps.
- FiniteModel: enumerated chains with explicit transition matrices, the
  input of the oracle. Built from joint tables or Ising enumerations, or
  loaded from JSON.

Ising sites are numbered column-major, i = c*n + r, so the raster sweep
proceeds down each column and then across.
"""
from __future__ import annotations

import bisect
import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache, reduce
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.special import expit

from config import IDENTITY_TOL, MAX_ISING_ENUMERATION, MAX_JOINT_CELLS
from errors import ConfigError
from sweep_core import SweepModel

logger = logging.getLogger("sweepcv.models")

DEFAULT_PROPOSAL_PROB = 0.9


# -------------------
# Bivariate normal
# -------------------
class BvnIntegrand(str, Enum):
    X2 = "x2"
    QUADRATIC = "quadratic"
    SUM = "sum"


@dataclass(frozen=True)
class CustomIntegrand:
    """User integrand with closed-form conditional expectations.

    value(states) -> (M,) and cond_exp(kernels, states, rho) -> (M,).
    """
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    cond_exp: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    data_augmentation: bool = False


Integrand = Union[BvnIntegrand, CustomIntegrand, str]


def _resolve_integrand(integrand: Integrand) -> Union[BvnIntegrand, CustomIntegrand]:
    if isinstance(integrand, CustomIntegrand):
        return integrand
    try:
        return BvnIntegrand(integrand)
    except ValueError:
        raise ConfigError(f"unsupported bivariate-normal integrand: {integrand!r}") from None


def _check_rho(rho: float) -> None:
    if not -1.0 < rho < 1.0:
        raise ConfigError(f"rho must lie in (-1, 1), got {rho}")


def _bvn_value(integrand, states: np.ndarray) -> np.ndarray:
    if isinstance(integrand, CustomIntegrand):
        return np.asarray(integrand.value(states), dtype=float)
    x1, x2 = states[:, 0], states[:, 1]
    if integrand is BvnIntegrand.X2:
        return x2.copy()
    if integrand is BvnIntegrand.QUADRATIC:
        return x1 ** 2 + x2 ** 2 / 3 - 4 / 3
    return x1 + x2


def _bvn_cond(integrand, rho: float, kernels: np.ndarray, states: np.ndarray) -> np.ndarray:
    if isinstance(integrand, CustomIntegrand):
        return np.asarray(integrand.cond_exp(kernels, states, rho), dtype=float)
    x1, x2 = states[:, 0], states[:, 1]
    first = kernels == 1
    r2 = rho * rho
    if integrand is BvnIntegrand.X2:
        return np.where(first, rho * x1, x2)
    if integrand is BvnIntegrand.QUADRATIC:
        # E[x2^2 | x1] = rho^2 x1^2 + 1 - rho^2
        return np.where(first,
                        x1 ** 2 + (r2 * x1 ** 2 + 1 - r2) / 3 - 4 / 3,
                        r2 * x2 ** 2 + 1 - r2 + x2 ** 2 / 3 - 4 / 3)
    return np.where(first, (1 + rho) * x1, (1 + rho) * x2)


def bvn_cond_exp(rho: float, k: int, integrand: Integrand, x) -> float:
    """Pi_k applied to the integrand at x. Pi_1 redraws x2 given x1, Pi_2 redraws x1 given x2."""
    _check_rho(rho)
    if k not in (1, 2):
        raise ConfigError(f"bivariate-normal kernel index must be 1 or 2, got {k}")
    states = np.asarray(x, dtype=float).reshape(1, 2)
    return float(_bvn_cond(_resolve_integrand(integrand), rho, np.array([k]), states)[0])


class BvnModel(SweepModel):
    K = 2
    is_gibbs = True

    def __init__(self, rho: float, integrand: Integrand = BvnIntegrand.X2,
                 basis: Optional[Sequence[Integrand]] = None):
        _check_rho(rho)
        self.rho = float(rho)
        self.integrand = _resolve_integrand(integrand)
        if basis is None:
            self.basis = (self.integrand,)
        else:
            self.basis = tuple(_resolve_integrand(b) for b in basis)
            if not self.basis:
                raise ConfigError("basis needs at least one integrand")
        self.d = 1
        self.p = len(self.basis)
        self.data_augmentation = (self.integrand is BvnIntegrand.X2 or (
            isinstance(self.integrand, CustomIntegrand) and self.integrand.data_augmentation))
        label = self.integrand.name if isinstance(self.integrand, CustomIntegrand) else self.integrand.value
        self.name = f"bvn(rho={self.rho:g},g={label})"
        self._sd = math.sqrt(1.0 - self.rho ** 2)

    def sample(self, k, x, rng):
        x = np.array(x, dtype=float)
        z = self._sd * rng.standard_normal()
        if k == 1:
            x[1] = self.rho * x[0] + z
        else:
            x[0] = self.rho * x[1] + z
        return x

    def sample_path(self, kernels, init, rng):
        M = len(kernels)
        rho = self.rho
        z = (self._sd * rng.standard_normal(M - 1)).tolist()
        x1, x2 = (float(v) for v in init)
        path = [(x1, x2)]
        for t, k in enumerate(kernels[:-1].tolist()):
            if k == 1:
                x2 = rho * x1 + z[t]
            else:
                x1 = rho * x2 + z[t]
            path.append((x1, x2))
        return np.array(path, dtype=float)

    def initial_state(self, rng):
        x1 = rng.standard_normal()
        return np.array([x1, self.rho * x1 + self._sd * rng.standard_normal()])

    def validate_state(self, x):
        x = np.array(x, dtype=float)
        if x.shape != (2,) or not np.all(np.isfinite(x)):
            raise ConfigError(f"bivariate-normal state must be two finite numbers, got {x!r}")
        return x

    def g_values(self, states):
        return _bvn_value(self.integrand, states)[:, None]

    def f_values(self, states):
        return np.column_stack([_bvn_value(b, states) for b in self.basis])

    def cond_g(self, kernels, states):
        return _bvn_cond(self.integrand, self.rho, kernels, states)[:, None]

    def cond_f(self, kernels, states):
        return np.column_stack([_bvn_cond(b, self.rho, kernels, states) for b in self.basis])


# -------------------
# Ising lattice
# -------------------
class IsingUpdate(str, Enum):
    GIBBS = "gibbs"
    METROPOLIS = "metropolis"


class IsingSweep(str, Enum):
    RASTER = "raster"
    CHECKERBOARD = "checkerboard"


@dataclass(frozen=True)
class Lattice:
    n: int
    # (n^2, 4) neighbor indices, padded with n^2 where the boundary cuts an edge
    neighbors: np.ndarray
    edges: np.ndarray
    # checkerboard kernel k updates the sites with update_masks[k-1] set
    update_masks: np.ndarray

    @property
    def n_sites(self) -> int:
        return self.n * self.n

    @property
    def n_edges(self) -> int:
        return len(self.edges)


@lru_cache(maxsize=None)
def lattice(n: int) -> Lattice:
    if n < 2:
        raise ConfigError(f"Ising grid side must be >= 2, got {n}")
    sites = n * n
    neighbors = np.full((sites, 4), sites, dtype=np.int64)
    edges = []
    parity = np.empty(sites, dtype=bool)
    for c in range(n):
        for r in range(n):
            i = c * n + r
            parity[i] = (r + c) % 2 == 0
            for slot, (rr, cc) in enumerate(((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1))):
                if 0 <= rr < n and 0 <= cc < n:
                    j = cc * n + rr
                    neighbors[i, slot] = j
                    if i < j:
                        edges.append((i, j))
    # W_1 holds the even sites; kernel 1 conditions on it and redraws the odd ones
    update_masks = np.stack([~parity, parity])
    for arr in (neighbors, update_masks):
        arr.setflags(write=False)
    edge_arr = np.array(edges, dtype=np.int64)
    edge_arr.setflags(write=False)
    return Lattice(n=n, neighbors=neighbors, edges=edge_arr, update_masks=update_masks)


def _side_from_sites(sites: int) -> int:
    n = math.isqrt(sites)
    if n * n != sites or n < 2:
        raise ConfigError(f"an Ising configuration needs n^2 >= 4 spins, got {sites}")
    return n


def _flat_config(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2 and x.shape[0] == x.shape[1]:
        x = x.ravel(order="F")
    if x.ndim != 1 or not np.all(np.isin(x, (-1, 1))):
        raise ConfigError("Ising configuration must hold spins in {-1, +1}")
    _side_from_sites(x.size)
    return x.astype(np.int8)


def neighbor_sums(states: np.ndarray, lat: Lattice) -> np.ndarray:
    """s_i(x) for every site of every row of `states` (M, n^2)."""
    states = np.atleast_2d(states).astype(np.int64)
    padded = np.concatenate([states, np.zeros((len(states), 1), dtype=np.int64)], axis=1)
    return padded[:, lat.neighbors].sum(axis=2)


def sufficient_stat(x) -> Union[int, np.ndarray]:
    """T(x) = sum over grid edges of x_i x_j; batched over leading rows."""
    x = np.asarray(x)
    single = x.ndim == 1
    states = np.atleast_2d(x).astype(np.int64)
    lat = lattice(_side_from_sites(states.shape[1]))
    T = (states[:, lat.edges[:, 0]] * states[:, lat.edges[:, 1]]).sum(axis=1)
    return int(T[0]) if single else T


def ising_site_conditional(eta: float, x, i: int) -> float:
    """P(x_i = +1 | rest) under pi proportional to exp(eta T(x))."""
    x = _flat_config(x)
    lat = lattice(_side_from_sites(x.size))
    if not 0 <= i < lat.n_sites:
        raise ConfigError(f"site {i} outside the {lat.n}x{lat.n} grid")
    s = int(neighbor_sums(x, lat)[0, i])
    return float(expit(2.0 * eta * s))


class IsingModel(SweepModel):
    d = 1
    p = 1

    def __init__(self, n: int, eta: float, update=IsingUpdate.GIBBS,
                 sweep=IsingSweep.CHECKERBOARD, proposal_prob: float = DEFAULT_PROPOSAL_PROB):
        self.lattice = lattice(n)
        self.n = n
        self.eta = float(eta)
        try:
            self.update = IsingUpdate(update)
            self.sweep = IsingSweep(sweep)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not 0.0 < proposal_prob <= 1.0:
            raise ConfigError(f"proposal probability must lie in (0, 1], got {proposal_prob}")
        self.proposal_prob = float(proposal_prob)
        self.K = n * n if self.sweep is IsingSweep.RASTER else 2
        self.is_gibbs = self.update is IsingUpdate.GIBBS
        self.name = f"ising(n={n},eta={self.eta:g},{self.update.value},{self.sweep.value})"
        if self.sweep is IsingSweep.RASTER:
            self._sites = [np.array([i]) for i in range(self.K)]
        else:
            self._sites = [np.flatnonzero(m) for m in self.lattice.update_masks]

    @property
    def n_edges(self) -> int:
        return self.lattice.n_edges

    def sample(self, k, x, rng):
        x = np.array(x, dtype=np.int8)
        sites = self._sites[k - 1]
        nb = self.lattice.neighbors[sites]
        padded = np.append(x.astype(np.int64), 0)
        s = padded[nb].sum(axis=1)
        u = rng.random(len(sites))
        if self.is_gibbs:
            p_plus = 1.0 / (1.0 + np.exp(-2.0 * self.eta * s))
            x[sites] = np.where(u < p_plus, 1, -1)
        else:
            xi = padded[sites]
            accept = np.minimum(np.exp(-2.0 * self.eta * xi * s), 1.0)
            x[sites] = np.where(u < self.proposal_prob * accept, -xi, xi)
        return x

    def initial_state(self, rng):
        return (rng.integers(0, 2, size=self.lattice.n_sites) * 2 - 1).astype(np.int8)

    def validate_state(self, x):
        x = _flat_config(x)
        if x.size != self.lattice.n_sites:
            raise ConfigError(f"expected {self.lattice.n_sites} spins, got {x.size}")
        return x

    def g_values(self, states):
        return np.asarray(sufficient_stat(np.atleast_2d(states)), dtype=float)[:, None]

    def cond_g(self, kernels, states):
        x = np.atleast_2d(states).astype(np.int64)
        s = neighbor_sums(x, self.lattice)
        T = sufficient_stat(x).astype(float)
        eta, q = self.eta, self.proposal_prob
        if self.sweep is IsingSweep.RASTER:
            rows = np.arange(len(x))
            idx = np.asarray(kernels) - 1
            xi, si = x[rows, idx], s[rows, idx]
            if self.is_gibbs:
                val = T - xi * si + np.tanh(eta * si) * si
            else:
                qa = q * np.minimum(np.exp(-2.0 * eta * xi * si), 1.0)
                val = qa * (T - 2 * xi * si) + (1.0 - qa) * T
        else:
            mask = self.lattice.update_masks[np.asarray(kernels) - 1]
            if self.is_gibbs:
                contrib = np.tanh(eta * s) * s
            else:
                qa = q * np.minimum(np.exp(-2.0 * eta * x * s), 1.0)
                contrib = x * (1.0 - 2.0 * qa) * s
            val = np.where(mask, contrib, 0.0).sum(axis=1)
        return val[:, None]


def ising_cond_exp_T(model: IsingModel, k: int, x) -> float:
    if not 1 <= k <= model.K:
        raise ConfigError(f"kernel index {k} outside 1..{model.K}")
    x = model.validate_state(x)
    return float(model.cond_g(np.array([k]), x[None, :])[0, 0])


# -------------------
# Finite chains
# -------------------
def _as_columns(values, n: int, label: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != n:
        raise ConfigError(f"{label} must have one row per state ({n}), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{label} has non-finite entries")
    return arr


def _sparse_max_abs(m) -> float:
    return float(abs(m).max()) if m.nnz else 0.0


class FiniteModel(SweepModel):
    """Chain on states 0..n-1 with K transition matrices and stationary vector pi.

    g is centered by its exact pi-mean at construction (`g_offset` keeps the
    shift); f defaults to the centered g. Stochasticity and stationarity are
    certified by `oracle.stationary_check`, not here.
    """

    def __init__(self, P: Sequence, pi, g_vals, f_vals=None, labels=None,
                 is_gibbs: Optional[bool] = None, name: str = "finite"):
        if len(P) == 0:
            raise ConfigError("finite model needs at least one transition matrix")
        mats = []
        for m in P:
            m = sparse.csr_matrix(m, dtype=float)
            m.sum_duplicates()
            m.sort_indices()
            mats.append(m)
        n = mats[0].shape[0]
        for k, m in enumerate(mats, start=1):
            if m.shape != (n, n):
                raise ConfigError(f"P_{k} has shape {m.shape}, expected ({n}, {n})")
            if not np.all(np.isfinite(m.data)) or np.any(m.data < 0):
                raise ConfigError(f"P_{k} must have finite non-negative entries")
        pi = np.asarray(pi, dtype=float).ravel()
        if pi.shape != (n,) or not np.all(np.isfinite(pi)) or np.any(pi < 0):
            raise ConfigError(f"pi must be a non-negative vector of length {n}")

        self.P = tuple(mats)
        self.pi = pi
        self.K = len(mats)
        self.n_states = n
        self.name = name
        self.labels = labels
        g = _as_columns(g_vals, n, "g")
        self.g_offset = np.array([math.fsum(pi * g[:, j]) for j in range(g.shape[1])])
        self.g_vals = g - self.g_offset
        self.f_vals = self.g_vals if f_vals is None else _as_columns(f_vals, n, "f")
        self.d = self.g_vals.shape[1]
        self.p = self.f_vals.shape[1]
        self.is_gibbs = self._looks_gibbs() if is_gibbs is None else bool(is_gibbs)
        self.data_augmentation = self.K == 2 and bool(
            np.max(np.abs(self.P[1] @ self.g_vals - self.g_vals)) <= IDENTITY_TOL)
        self._Pg = [None] * self.K
        self._Pf = [None] * self.K
        self._rows = [dict() for _ in range(self.K)]
        self._pi_cdf = np.cumsum(pi)

    def dense(self, k: int) -> np.ndarray:
        return self.P[k - 1].toarray()

    def kernel_g(self, k: int) -> np.ndarray:
        """P_k g as an (n, d) array."""
        if self._Pg[k - 1] is None:
            self._Pg[k - 1] = np.asarray(self.P[k - 1] @ self.g_vals)
        return self._Pg[k - 1]

    def kernel_f(self, k: int) -> np.ndarray:
        if self._Pf[k - 1] is None:
            self._Pf[k - 1] = np.asarray(self.P[k - 1] @ self.f_vals)
        return self._Pf[k - 1]

    def _looks_gibbs(self) -> bool:
        D = sparse.diags(self.pi)
        for m in self.P:
            if _sparse_max_abs(m @ m - m) > IDENTITY_TOL:
                return False
            flow = D @ m
            if _sparse_max_abs(flow - flow.T) > IDENTITY_TOL:
                return False
        return True

    def _row(self, k: int, i: int):
        cache = self._rows[k - 1]
        row = cache.get(i)
        if row is None:
            m = self.P[k - 1]
            a, b = m.indptr[i], m.indptr[i + 1]
            if a == b:
                raise ConfigError(f"P_{k} row {i} is empty")
            row = (m.indices[a:b].tolist(), np.cumsum(m.data[a:b]).tolist())
            cache[i] = row
        return row

    def _step(self, k: int, i: int, u: float) -> int:
        cols, cum = self._row(k, i)
        j = bisect.bisect_right(cum, u * cum[-1])
        return cols[min(j, len(cols) - 1)]

    def sample(self, k, x, rng):
        return np.int64(self._step(k, int(x), rng.random()))

    def sample_path(self, kernels, init, rng):
        M = len(kernels)
        u = rng.random(M - 1).tolist()
        i = int(init)
        path = [i]
        for t, k in enumerate(kernels[:-1].tolist()):
            i = self._step(k, i, u[t])
            path.append(i)
        return np.array(path, dtype=np.int64)

    def initial_state(self, rng):
        j = int(np.searchsorted(self._pi_cdf, rng.random() * self._pi_cdf[-1], side="right"))
        return np.int64(min(j, self.n_states - 1))

    def validate_state(self, x):
        i = int(np.asarray(x))
        if not 0 <= i < self.n_states:
            raise ConfigError(f"state {i} outside 0..{self.n_states - 1}")
        return np.int64(i)

    def g_values(self, states):
        return self.g_vals[np.asarray(states, dtype=np.int64)]

    def f_values(self, states):
        return self.f_vals[np.asarray(states, dtype=np.int64)]

    def _apply(self, table, kernels, states, width):
        states = np.asarray(states, dtype=np.int64)
        kernels = np.asarray(kernels)
        out = np.empty((len(states), width))
        for k in range(1, self.K + 1):
            sel = kernels == k
            if np.any(sel):
                out[sel] = table(k)[states[sel]]
        return out

    def cond_g(self, kernels, states):
        return self._apply(self.kernel_g, kernels, states, self.d)

    def cond_f(self, kernels, states):
        return self._apply(self.kernel_f, kernels, states, self.p)


def build_finite_gibbs(joint, g, f=None, name: str = "joint-gibbs") -> FiniteModel:
    """Two-block Gibbs chain on S1 x S2; state index a*|S2| + b.

    Pi_1 redraws coordinate 2 given coordinate 1, Pi_2 redraws coordinate 1
    given coordinate 2. g (and f) are tables of shape (|S1|, |S2|) or
    (|S1|, |S2|, dim).
    """
    joint = np.asarray(joint, dtype=float)
    if joint.ndim != 2:
        raise ConfigError("joint table must be two-dimensional")
    n1, n2 = joint.shape
    if n1 * n2 > MAX_JOINT_CELLS:
        raise ConfigError(f"joint table has {n1 * n2} cells, limit is {MAX_JOINT_CELLS}")
    if not np.all(np.isfinite(joint)) or np.any(joint <= 0):
        raise ConfigError("joint table must be strictly positive")
    if abs(math.fsum(joint.ravel()) - 1.0) > 1e-10:
        raise ConfigError("joint table must sum to 1")

    def flatten(values, label):
        arr = np.asarray(values, dtype=float)
        if arr.shape[:2] != (n1, n2) or arr.ndim not in (2, 3):
            raise ConfigError(f"{label} must be a ({n1}, {n2}[, dim]) table")
        return arr.reshape(n1 * n2, -1)

    a = np.arange(n1)
    b = np.arange(n2)
    given_first = joint / joint.sum(axis=1, keepdims=True)
    given_second = joint / joint.sum(axis=0, keepdims=True)
    # Pi_1: (a, b) -> (a, b')
    A, B, B2 = np.meshgrid(a, b, b, indexing="ij")
    P1 = sparse.csr_matrix((given_first[A, B2].ravel(), ((A * n2 + B).ravel(), (A * n2 + B2).ravel())),
                           shape=(n1 * n2, n1 * n2))
    # Pi_2: (a, b) -> (a', b)
    A, B, A2 = np.meshgrid(a, b, a, indexing="ij")
    P2 = sparse.csr_matrix((given_second[A2, B].ravel(), ((A * n2 + B).ravel(), (A2 * n2 + B).ravel())),
                           shape=(n1 * n2, n1 * n2))
    labels = [[int(i), int(j)] for i in a for j in b]
    return FiniteModel([P1, P2], joint.ravel(), flatten(g, "g"),
                       None if f is None else flatten(f, "f"),
                       labels=labels, is_gibbs=True, name=name)


def ising_configurations(n: int) -> np.ndarray:
    """All 2^(n^2) spin configurations; bit i of the state index is site i."""
    sites = n * n
    if n < 2 or 2 ** sites > MAX_ISING_ENUMERATION:
        raise ConfigError(f"cannot enumerate a {n}x{n} Ising grid (limit {MAX_ISING_ENUMERATION} states)")
    codes = np.arange(2 ** sites, dtype=np.int64)
    return (((codes[:, None] >> np.arange(sites)) & 1) * 2 - 1).astype(np.int8)


def _ising_pi(n: int, eta: float):
    configs = ising_configurations(n)
    T = sufficient_stat(configs).astype(float)
    w = np.exp(eta * (T - T.max()))
    return configs, T, w / w.sum()


def ising_exact_mean(n: int, eta: float) -> float:
    """E_pi T(x) by enumeration."""
    _, T, pi = _ising_pi(n, eta)
    return math.fsum(pi * T)


def build_finite_ising(n: int, eta: float, sweep=IsingSweep.CHECKERBOARD,
                       update=IsingUpdate.GIBBS,
                       proposal_prob: float = DEFAULT_PROPOSAL_PROB) -> FiniteModel:
    sweep, update = IsingSweep(sweep), IsingUpdate(update)
    configs, T, pi = _ising_pi(n, eta)
    lat = lattice(n)
    S = len(configs)
    codes = np.arange(S, dtype=np.int64)
    s = neighbor_sums(configs, lat)

    def site_matrix(i: int):
        bit = np.int64(1) << i
        xi = configs[:, i].astype(np.int64)
        si = s[:, i]
        if update is IsingUpdate.GIBBS:
            p_plus = 1.0 / (1.0 + np.exp(-2.0 * eta * si))
            cols = np.concatenate([codes | bit, codes & ~bit])
            data = np.concatenate([p_plus, 1.0 - p_plus])
        else:
            qa = proposal_prob * np.minimum(np.exp(-2.0 * eta * xi * si), 1.0)
            cols = np.concatenate([codes ^ bit, codes])
            data = np.concatenate([qa, 1.0 - qa])
        m = sparse.csr_matrix((data, (np.concatenate([codes, codes]), cols)), shape=(S, S))
        m.eliminate_zeros()
        return m

    if sweep is IsingSweep.RASTER:
        P = [site_matrix(i) for i in range(lat.n_sites)]
    else:
        P = [reduce(lambda acc, m: acc @ m, [site_matrix(i) for i in np.flatnonzero(mask)])
             for mask in lat.update_masks]
    logger.debug("enumerated %dx%d Ising grid: %d states, K=%d", n, n, S, len(P))
    return FiniteModel(P, pi, T, labels=configs, is_gibbs=update is IsingUpdate.GIBBS,
                       name=f"ising-enum(n={n},eta={eta:g},{update.value},{sweep.value})")


# -------------------
# Import / export
# -------------------
_FINITE_KEYS = {"name", "states", "P", "pi", "g", "f", "gibbs"}


def finite_model_to_dict(model: FiniteModel) -> dict:
    labels = model.labels
    if labels is None:
        labels = list(range(model.n_states))
    elif isinstance(labels, np.ndarray):
        labels = labels.tolist()
    return {
        "name": model.name,
        "states": labels,
        "P": [model.dense(k).tolist() for k in range(1, model.K + 1)],
        "pi": model.pi.tolist(),
        "g": (model.g_vals + model.g_offset).tolist(),
        "f": model.f_vals.tolist(),
        "gibbs": model.is_gibbs,
    }


def finite_model_from_dict(doc: dict) -> FiniteModel:
    unknown = set(doc) - _FINITE_KEYS
    if unknown:
        raise ConfigError(f"unknown finite-model keys: {sorted(unknown)}")
    missing = {"P", "pi", "g"} - set(doc)
    if missing:
        raise ConfigError(f"finite-model document lacks {sorted(missing)}")
    return FiniteModel([np.asarray(m, dtype=float) for m in doc["P"]], doc["pi"], doc["g"],
                       doc.get("f"), labels=doc.get("states"), is_gibbs=doc.get("gibbs"),
                       name=doc.get("name", "finite"))


def save_finite_model(model: FiniteModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(finite_model_to_dict(model), fh)


def load_finite_model(path) -> FiniteModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read finite model {path}: {exc}") from exc
    return finite_model_from_dict(doc)
