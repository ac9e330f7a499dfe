"""
Kernel schedules, the sweep chain runner and trace storage.

Kernel indices are 1-based throughout. The kernel that produces X_{t+1} from
X_t is Pi_{sigma^t(1)}, so under a deterministic sweep kernel_at[t] = (t mod K)+1.
"""
from __future__ import annotations

import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np

from errors import ConfigError, UnsupportedScheduleError

logger = logging.getLogger("sweepcv.sweep_core")

MASK64 = (1 << 64) - 1


# -------------------
# Permutation
# -------------------
def sigma(k: int, K: int) -> int:
    """Cyclic successor: k+1 for k < K, 1 for k = K."""
    _check_kernel_index(k, K)
    return k + 1 if k < K else 1


def sigma_power(k: int, t: int, K: int) -> int:
    """sigma applied t times to k."""
    _check_kernel_index(k, K)
    if t < 0:
        raise ConfigError(f"sigma power must be non-negative, got {t}")
    return (k - 1 + t) % K + 1


def _check_kernel_index(k: int, K: int) -> None:
    if K < 1:
        raise ConfigError(f"number of kernels must be >= 1, got {K}")
    if not 1 <= k <= K:
        raise ConfigError(f"kernel index {k} outside 1..{K}")


# -------------------
# Schedules and RNG
# -------------------
class SweepKind(str, Enum):
    DETERMINISTIC = "deterministic"
    RANDOM = "random"


@dataclass(frozen=True)
class SweepSchedule:
    kind: SweepKind
    K: int

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"schedule needs K >= 1, got {self.K}")
        object.__setattr__(self, "kind", SweepKind(self.kind))

    @classmethod
    def deterministic(cls, K: int) -> "SweepSchedule":
        return cls(SweepKind.DETERMINISTIC, K)

    @classmethod
    def random(cls, K: int) -> "SweepSchedule":
        return cls(SweepKind.RANDOM, K)

    @property
    def is_deterministic(self) -> bool:
        return self.kind is SweepKind.DETERMINISTIC

    def kernels(self, M: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Kernel indices for steps 0..M-1."""
        if self.is_deterministic:
            return np.arange(M, dtype=np.int64) % self.K + 1
        if rng is None:
            raise ConfigError("random sweep needs a generator")
        return rng.integers(1, self.K + 1, size=M, dtype=np.int64)


def kernel_at_step(schedule: SweepSchedule, t: int,
                   rng: Optional[np.random.Generator] = None) -> int:
    if t < 0:
        raise ConfigError(f"step index must be non-negative, got {t}")
    if schedule.is_deterministic:
        return t % schedule.K + 1
    if rng is None:
        raise ConfigError("random sweep needs a generator")
    return int(rng.integers(1, schedule.K + 1))


@dataclass(frozen=True)
class RngPolicy:
    """Philox stream keyed by (master_seed, stream_id); replications use stream_id = rep."""
    master_seed: int
    stream_id: int = 0

    def generator(self, substream: int = 0) -> np.random.Generator:
        """Chain draws use substream 0; starting states are drawn from substream 1."""
        key = [self.master_seed & MASK64, self.stream_id & MASK64]
        if substream:
            key.append(substream)
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


# -------------------
# Model interface
# -------------------
class SweepModel(ABC):
    """A family of K pi-stationary kernels with closed-form conditional expectations.

    Batch methods take `kernels` (M,) and `states` (M, ...) and return (M, d) or
    (M, p) arrays; row t is evaluated at states[t] under kernel kernels[t].
    """

    name = "model"
    K = 1
    d = 1
    p = 1
    is_gibbs = False
    data_augmentation = False

    @abstractmethod
    def sample(self, k: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One draw from Pi_k(x, .)."""

    @abstractmethod
    def g_values(self, states: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def cond_g(self, kernels: np.ndarray, states: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        ...

    def f_values(self, states: np.ndarray) -> np.ndarray:
        return self.g_values(states)

    def cond_f(self, kernels: np.ndarray, states: np.ndarray) -> np.ndarray:
        return self.cond_g(kernels, states)

    def validate_state(self, x) -> np.ndarray:
        return np.array(x, copy=True)

    def sample_path(self, kernels: np.ndarray, init: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
        """States X_0..X_{M-1}; kernels[t] moves X_t to X_{t+1}."""
        M = len(kernels)
        x = np.array(init, copy=True)
        states = np.empty((M,) + x.shape, dtype=x.dtype)
        states[0] = x
        for t in range(M - 1):
            x = self.sample(int(kernels[t]), x, rng)
            states[t + 1] = x
        return states


# -------------------
# Trace
# -------------------
@dataclass(frozen=True)
class Trace:
    states: np.ndarray
    kernel_at: np.ndarray
    g: np.ndarray
    f: np.ndarray
    cond_g: np.ndarray
    cond_f: np.ndarray
    schedule: SweepSchedule
    rng_policy: Optional[RngPolicy] = None
    # Pi_1 g(X_t) at every t, data-augmentation models only
    cond_g_first: Optional[np.ndarray] = None
    is_gibbs: bool = False
    data_augmentation: bool = False
    model_name: str = ""

    def __post_init__(self):
        M = len(self.kernel_at)
        if M < 1:
            raise ConfigError("trace must hold at least one state")
        for label in ("states", "g", "f", "cond_g", "cond_f"):
            arr = getattr(self, label)
            if len(arr) != M:
                raise ConfigError(f"trace field {label} has length {len(arr)}, expected {M}")
        for label in ("g", "f", "cond_g", "cond_f"):
            if getattr(self, label).ndim != 2:
                raise ConfigError(f"trace field {label} must be 2-D (M, dim)")
        if self.g.shape != self.cond_g.shape or self.f.shape != self.cond_f.shape:
            raise ConfigError("cached conditional expectations do not match integrand shapes")
        if self.cond_g_first is not None and self.cond_g_first.shape != self.g.shape:
            raise ConfigError("cond_g_first must match g in shape")
        if self.schedule.is_deterministic:
            expected = np.arange(M) % self.schedule.K + 1
            if not np.array_equal(self.kernel_at, expected):
                raise ConfigError("deterministic trace must satisfy kernel_at[t] = (t mod K)+1")

    @property
    def M(self) -> int:
        return len(self.kernel_at)

    @property
    def K(self) -> int:
        return self.schedule.K

    @property
    def d(self) -> int:
        return self.g.shape[1]

    @property
    def p(self) -> int:
        return self.f.shape[1]

    @property
    def seed(self) -> Optional[int]:
        return None if self.rng_policy is None else self.rng_policy.master_seed

    def truncated(self, M: int) -> "Trace":
        if not 1 <= M <= self.M:
            raise ConfigError(f"cannot truncate a length-{self.M} trace to {M}")
        first = None if self.cond_g_first is None else self.cond_g_first[:M]
        return replace(self, states=self.states[:M], kernel_at=self.kernel_at[:M],
                       g=self.g[:M], f=self.f[:M], cond_g=self.cond_g[:M],
                       cond_f=self.cond_f[:M], cond_g_first=first)


def run_chain(model: SweepModel, schedule: SweepSchedule, M: int, init,
              rng: RngPolicy, burn_in_sweeps: int = 0) -> Trace:
    """Simulate X_0..X_{M-1} from `init` and cache the conditional expectations."""
    if M < 1:
        raise ConfigError(f"chain length must be >= 1, got {M}")
    if schedule.K != model.K:
        raise ConfigError(f"schedule has K={schedule.K} but model {model.name} has K={model.K}")
    if burn_in_sweeps < 0:
        raise ConfigError("burn_in_sweeps must be non-negative")
    gen = rng.generator()
    x0 = model.validate_state(init)
    if burn_in_sweeps:
        burn = schedule.kernels(burn_in_sweeps * model.K + 1, gen)
        x0 = model.sample_path(burn, x0, gen)[-1]
    kernels = schedule.kernels(M, gen)
    states = model.sample_path(kernels, x0, gen)
    try:
        cond_g = model.cond_g(kernels, states)
        cond_f = model.cond_f(kernels, states)
        first = None
        if model.data_augmentation:
            first = model.cond_g(np.ones(M, dtype=np.int64), states)
    except NotImplementedError as exc:
        raise ConfigError(f"model {model.name} has no conditional expectation for this integrand") from exc
    logger.debug("chain %s: M=%d seed=%d stream=%d", model.name, M, rng.master_seed, rng.stream_id)
    return Trace(states=states, kernel_at=kernels, g=model.g_values(states),
                 f=model.f_values(states), cond_g=cond_g, cond_f=cond_f,
                 schedule=schedule, rng_policy=rng, cond_g_first=first,
                 is_gibbs=model.is_gibbs, data_augmentation=model.data_augmentation,
                 model_name=model.name)


def subchain(trace: Trace, k: int) -> np.ndarray:
    """States visited just before kernel k fires: X_{k-1}, X_{k-1+K}, ..."""
    if not trace.schedule.is_deterministic:
        raise UnsupportedScheduleError("subchains are only defined for deterministic sweeps")
    _check_kernel_index(k, trace.K)
    return trace.states[k - 1::trace.K]


# -------------------
# Import / export
# -------------------
def save_trace(trace: Trace, path) -> None:
    meta = {
        "kind": trace.schedule.kind.value,
        "K": trace.K,
        "master_seed": trace.seed,
        "stream_id": None if trace.rng_policy is None else trace.rng_policy.stream_id,
        "is_gibbs": trace.is_gibbs,
        "data_augmentation": trace.data_augmentation,
        "model_name": trace.model_name,
    }
    arrays = dict(states=trace.states, kernel_at=trace.kernel_at, g=trace.g, f=trace.f,
                  cond_g=trace.cond_g, cond_f=trace.cond_f)
    if trace.cond_g_first is not None:
        arrays["cond_g_first"] = trace.cond_g_first
    np.savez_compressed(path, meta=np.array(json.dumps(meta)), **arrays)


def load_trace(path) -> Trace:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        policy = None
        if meta["master_seed"] is not None:
            policy = RngPolicy(meta["master_seed"], meta["stream_id"])
        return Trace(states=data["states"], kernel_at=data["kernel_at"], g=data["g"],
                     f=data["f"], cond_g=data["cond_g"], cond_f=data["cond_f"],
                     schedule=SweepSchedule(SweepKind(meta["kind"]), meta["K"]),
                     rng_policy=policy,
                     cond_g_first=data["cond_g_first"] if "cond_g_first" in data.files else None,
                     is_gibbs=meta["is_gibbs"], data_augmentation=meta["data_augmentation"],
                     model_name=meta["model_name"])
