"""
Simulation-study runner: replicated chains per grid point, one estimate per
scheme and replication, MSE against a reference mean.

Replication r always uses RngPolicy(master_seed, r), so results do not
depend on the worker count or on scheduling order.
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import (CSV_FLOAT_FORMAT, DEFAULT_WORKERS, LONG_RUN_CYCLES,
                    MAX_KERNEL_APPLICATIONS, PINV_TOL)
from errors import ConfigError
from estimators import (empirical_mean, fixed_cv_mean, general_cv_mean, lwk_mean,
                        rao_blackwell_mean)
from models import (BvnIntegrand, BvnModel, FiniteModel, IsingModel, ising_exact_mean,
                    load_finite_model)
from sweep_core import RngPolicy, SweepModel, SweepSchedule, Trace, run_chain
from weights import MomentMode, default_batch_lag, estimate_weights

logger = logging.getLogger("sweepcv.harness")

ESTIMATORS = ("empirical", "rb", "lwk", "fixed", "fixed_batch", "general")
REPORT_COLUMNS = ["model", "param", "estimator", "B", "M", "reps",
                  "mean_of_estimates", "mse", "var_of_estimates", "wall_ms"]
DEFAULT_RHO_GRID = (-0.9, -0.7, -0.5, -0.3, -0.1, 0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_ETA_GRID = (0.1, 0.2, 0.3, 0.4)
LONG_RUN_STREAM = 2 ** 62


# -------------------
# Config
# -------------------
@dataclass(frozen=True)
class ModelSpec:
    kind: str
    rho_grid: Tuple[float, ...] = DEFAULT_RHO_GRID
    integrand: str = BvnIntegrand.X2.value
    n: int = 3
    eta_grid: Tuple[float, ...] = DEFAULT_ETA_GRID
    update: str = "gibbs"
    sweep: str = "checkerboard"
    path: Optional[str] = None

    def grid(self) -> List[Optional[float]]:
        if self.kind == "bvn":
            return list(self.rho_grid)
        if self.kind == "ising":
            return list(self.eta_grid)
        return [None]

    def build(self, param: Optional[float]) -> SweepModel:
        if self.kind == "bvn":
            return BvnModel(param, self.integrand)
        if self.kind == "ising":
            return IsingModel(self.n, param, update=self.update, sweep=self.sweep)
        return load_finite_model(self.path)


@dataclass(frozen=True)
class WeightSpec:
    B: Optional[int] = None
    v_mode: str = "gibbs"


@dataclass(frozen=True)
class ReferenceSpec:
    mode: Optional[str] = None
    cycles: int = LONG_RUN_CYCLES


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    estimators: Tuple[str, ...] = ("empirical", "rb")
    weights: WeightSpec = field(default_factory=WeightSpec)
    M: Optional[int] = None
    sweeps: Optional[int] = None
    reps: int = 100
    master_seed: int = 0
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    workers: int = DEFAULT_WORKERS
    burn_in_sweeps: int = 0
    pinv_tol: float = PINV_TOL
    initial: str = "stationary"

    def chain_length(self, K: int) -> int:
        return self.M if self.M is not None else self.sweeps * K

    def batch_lag(self, K: int) -> int:
        return self.weights.B if self.weights.B is not None else default_batch_lag(K)

    def reference_mode(self) -> str:
        if self.reference.mode:
            return self.reference.mode
        return "analytic" if self.model.kind == "bvn" else "enumeration"


def _take(doc: dict, allowed: set, where: str) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return doc


def config_from_dict(doc: dict) -> ExperimentConfig:
    _take(doc, {"model", "estimators", "weights", "M", "sweeps", "reps", "master_seed",
                "reference", "workers", "burn_in_sweeps", "pinv_tol", "initial"}, "config")
    if "model" not in doc:
        raise ConfigError("config needs a model section")
    m = dict(_take(doc["model"], {"kind", "rho_grid", "integrand", "n", "eta_grid",
                                  "update", "sweep", "path"}, "model"))
    for key in ("rho_grid", "eta_grid"):
        if key in m:
            m[key] = tuple(float(v) for v in m[key])
    model = ModelSpec(**m)
    weights = WeightSpec(**_take(doc.get("weights", {}), {"B", "v_mode"}, "weights"))
    reference = ReferenceSpec(**_take(doc.get("reference", {}), {"mode", "cycles"}, "reference"))
    rest = {k: doc[k] for k in ("M", "sweeps", "reps", "master_seed", "workers",
                                "burn_in_sweeps", "pinv_tol", "initial") if k in doc}
    if "estimators" in doc:
        rest["estimators"] = tuple(doc["estimators"])
    config = ExperimentConfig(model=model, weights=weights, reference=reference, **rest)
    _check_static(config)
    return config


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(doc)


def _check_static(config: ExperimentConfig) -> None:
    m = config.model
    if m.kind not in ("bvn", "ising", "finite"):
        raise ConfigError(f"unknown model kind {m.kind!r}")
    if m.kind == "finite" and not m.path:
        raise ConfigError("finite model needs a path")
    if not m.grid():
        raise ConfigError("parameter grid is empty")
    bad = [e for e in config.estimators if e not in ESTIMATORS]
    if bad or not config.estimators:
        raise ConfigError(f"unknown estimators {bad}; choose from {list(ESTIMATORS)}")
    if (config.M is None) == (config.sweeps is None):
        raise ConfigError("give exactly one of M or sweeps")
    if config.reps < 1:
        raise ConfigError("reps must be >= 1")
    if config.weights.v_mode not in ("gibbs", "batch"):
        raise ConfigError(f"v_mode must be gibbs or batch, got {config.weights.v_mode!r}")
    if config.weights.B is not None and config.weights.B < 0:
        raise ConfigError("batch lag B must be non-negative")
    if config.reference_mode() not in ("analytic", "enumeration", "long_run"):
        raise ConfigError(f"unknown reference mode {config.reference.mode!r}")
    if config.initial not in ("stationary", "uniform", "ones"):
        raise ConfigError(f"unknown initial state rule {config.initial!r}")
    if config.workers < 1 or config.burn_in_sweeps < 0:
        raise ConfigError("workers must be >= 1 and burn_in_sweeps >= 0")


# -------------------
# Validation against built models
# -------------------
def _check_model(config: ExperimentConfig, model: SweepModel, estimators: Sequence[str]) -> None:
    M = config.chain_length(model.K)
    if M < model.K:
        raise ConfigError(f"M = {M} is shorter than one sweep (K = {model.K})")
    weighted = [e for e in estimators if e in ("fixed", "fixed_batch", "general")]
    if weighted and M < 2:
        raise ConfigError(f"{', '.join(weighted)} estimate weights from the trace and need M >= 2")
    if "lwk" in estimators and not (model.K == 2 and model.data_augmentation):
        raise ConfigError(f"lwk needs a two-kernel data-augmentation model; {model.name} is not")
    if "general" in estimators and M // model.K < 2:
        raise ConfigError("general control variates need at least two full sweeps")
    if config.initial == "uniform" and isinstance(model, BvnModel):
        raise ConfigError("uniform initial states are not defined for the bivariate normal")
    if config.initial == "ones" and isinstance(model, FiniteModel):
        raise ConfigError("initial state 'ones' is only defined for lattice and normal models")


def _budget(config: ExperimentConfig, models: Sequence[SweepModel]) -> float:
    total = 0.0
    for model in models:
        total += config.reps * (config.chain_length(model.K) + config.burn_in_sweeps * model.K)
        if config.reference_mode() == "long_run":
            total += config.reference.cycles * model.K
    return total


def _prepare(config: ExperimentConfig, estimators: Sequence[str], force: bool) -> List[SweepModel]:
    models = [config.model.build(p) for p in config.model.grid()]
    for model in models:
        _check_model(config, model, estimators)
    total = _budget(config, models)
    if total > MAX_KERNEL_APPLICATIONS and not force:
        raise ConfigError(f"experiment needs {total:.3g} kernel applications "
                          f"(limit {MAX_KERNEL_APPLICATIONS:.3g}); pass --force to run it")
    return models


# -------------------
# Reference means
# -------------------
def initial_state(config: ExperimentConfig, model: SweepModel, rng: np.random.Generator):
    if config.initial == "stationary":
        return model.initial_state(rng)
    if config.initial == "uniform":
        if isinstance(model, FiniteModel):
            return np.int64(rng.integers(model.n_states))
        return model.initial_state(rng)
    if isinstance(model, IsingModel):
        return np.ones(model.lattice.n_sites, dtype=np.int8)
    return np.ones(2)


def reference_mean(config: ExperimentConfig, grid_index: int = 0,
                   model: Optional[SweepModel] = None) -> np.ndarray:
    spec = config.model
    param = spec.grid()[grid_index]
    if model is None:
        model = spec.build(param)
    mode = config.reference_mode()
    if mode == "analytic":
        if spec.kind != "bvn" or not isinstance(model.integrand, BvnIntegrand):
            raise ConfigError("analytic reference is only known for built-in normal integrands")
        return np.zeros(model.d)
    if mode == "enumeration":
        if spec.kind == "finite":
            # g is centered at construction
            return np.zeros(model.d)
        if spec.kind == "ising":
            if spec.n > 4:
                raise ConfigError(f"enumeration reference needs n <= 4, got n = {spec.n}")
            return np.array([ising_exact_mean(spec.n, param)])
        raise ConfigError("enumeration reference is not available for the bivariate normal")
    policy = RngPolicy(config.master_seed, LONG_RUN_STREAM + grid_index)
    schedule = SweepSchedule.deterministic(model.K)
    init = initial_state(config, model, policy.generator(1))
    trace = run_chain(model, schedule, config.reference.cycles * model.K, init, policy,
                      burn_in_sweeps=config.burn_in_sweeps)
    return rao_blackwell_mean(trace).mean


# -------------------
# Replications
# -------------------
Job = Tuple[str, Optional[int], Callable[[Trace], np.ndarray]]


def _estimator_job(name: str, config: ExperimentConfig, K: int) -> Job:
    B = config.batch_lag(K)
    tol = config.pinv_tol
    if name == "empirical":
        return name, None, lambda tr: empirical_mean(tr).mean
    if name == "rb":
        return name, None, lambda tr: rao_blackwell_mean(tr).mean
    if name == "lwk":
        return name, None, lambda tr: lwk_mean(tr).mean
    if name == "fixed":
        if config.weights.v_mode == "batch":
            return name, B, lambda tr: fixed_cv_mean(
                tr, estimate_weights(tr, MomentMode.FIXED_BATCH, B, tol).C_hat).mean
        return name, None, lambda tr: fixed_cv_mean(
            tr, estimate_weights(tr, MomentMode.FIXED_GIBBS, tol=tol, force=True).C_hat).mean
    if name == "fixed_batch":
        return name, B, lambda tr: fixed_cv_mean(
            tr, estimate_weights(tr, MomentMode.FIXED_BATCH, B, tol).C_hat).mean
    return name, B, lambda tr: general_cv_mean(
        tr, estimate_weights(tr, MomentMode.PER_KERNEL_BATCH, B, tol).C_hat).mean


def _replicate(config: ExperimentConfig, model: SweepModel, rep: int, jobs: Sequence[Job]):
    policy = RngPolicy(config.master_seed, rep)
    start = time.perf_counter()
    init = initial_state(config, model, policy.generator(1))
    trace = run_chain(model, SweepSchedule.deterministic(model.K), config.chain_length(model.K),
                      init, policy, burn_in_sweeps=config.burn_in_sweeps)
    chain_ms = (time.perf_counter() - start) * 1000
    out = []
    for _, _, fn in jobs:
        t0 = time.perf_counter()
        value = np.asarray(fn(trace), dtype=float)
        out.append((value, chain_ms + (time.perf_counter() - t0) * 1000))
    return out


@dataclass
class MseReport:
    frame: pd.DataFrame

    def to_csv(self, path) -> None:
        self.frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, encoding="utf-8")

    def to_excel(self, path) -> None:
        with pd.ExcelWriter(path, engine="xlsxwriter") as writer:
            self.frame.to_excel(writer, index=False, sheet_name="MSE")

    def row(self, estimator: str, param=None, B=None) -> pd.Series:
        df = self.frame[self.frame["estimator"] == estimator]
        if param is not None:
            df = df[np.isclose(df["param"].astype(float), param)]
        if B is not None:
            df = df[df["B"] == B]
        if len(df) != 1:
            raise KeyError(f"no unique row for {estimator} (param={param}, B={B})")
        return df.iloc[0]


def _run(config: ExperimentConfig, models: Sequence[SweepModel],
         job_factory: Callable[[SweepModel], List[Job]]) -> MseReport:
    grid = config.model.grid()
    jobs = [job_factory(m) for m in models]
    refs = [reference_mean(config, i, m) for i, m in enumerate(models)]
    results: Dict[Tuple[int, int], list] = {}
    logger.info("running %d grid point(s) x %d replications on %d worker(s)",
                len(models), config.reps, config.workers)
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        futures = {(gi, rep): pool.submit(_replicate, config, model, rep, jobs[gi])
                   for gi, model in enumerate(models) for rep in range(config.reps)}
        for key, fut in futures.items():
            results[key] = fut.result()

    rows = []
    for gi, model in enumerate(models):
        param = grid[gi]
        M = config.chain_length(model.K)
        for ji, (label, B, _) in enumerate(jobs[gi]):
            values = np.stack([results[(gi, rep)][ji][0] for rep in range(config.reps)])
            wall = math.fsum(results[(gi, rep)][ji][1] for rep in range(config.reps))
            for j in range(values.shape[1]):
                v = values[:, j]
                name = label if values.shape[1] == 1 else f"{label}[{j}]"
                rows.append({
                    "model": model.name, "param": param, "estimator": name, "B": B,
                    "M": M, "reps": config.reps,
                    "mean_of_estimates": float(v.mean()),
                    "mse": float(np.mean((v - refs[gi][j]) ** 2)),
                    "var_of_estimates": float(v.var()),
                    "wall_ms": wall,
                })
        logger.info("grid point %s done (%s)", param, model.name)
    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    return MseReport(frame)


def run_experiment(config: ExperimentConfig, force: bool = False) -> MseReport:
    models = _prepare(config, config.estimators, force)
    return _run(config, models,
                lambda m: [_estimator_job(e, config, m.K) for e in config.estimators])


def batch_sweep(config: ExperimentConfig, B_grid: Sequence[int], force: bool = False) -> MseReport:
    """fixed_batch at every lag in B_grid, plus rb and Gibbs-V fixed reference rows."""
    if "fixed_batch" not in config.estimators:
        raise ConfigError("batch sweep needs the fixed_batch estimator enabled")
    if not B_grid or any(b < 0 for b in B_grid):
        raise ConfigError("B grid must hold non-negative lags")
    models = _prepare(config, ("rb", "fixed", "fixed_batch"), force)
    tol = config.pinv_tol

    def jobs(model):
        gibbs = WeightSpec(B=config.weights.B, v_mode="gibbs")
        out = [_estimator_job("rb", config, model.K),
               _estimator_job("fixed", _with_weights(config, gibbs), model.K)]
        for b in B_grid:
            out.append(("fixed_batch", int(b), _batch_fn(int(b), tol)))
        return out

    return _run(config, models, jobs)


def _batch_fn(B: int, tol: float):
    return lambda tr: fixed_cv_mean(tr, estimate_weights(tr, MomentMode.FIXED_BATCH, B, tol).C_hat).mean


def _with_weights(config: ExperimentConfig, weights: WeightSpec) -> ExperimentConfig:
    return replace(config, weights=weights)
