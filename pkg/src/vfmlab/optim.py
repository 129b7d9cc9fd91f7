"""MAP objective, SGD/Adam steps, scheduling, early stopping, grid search.

The objective is

    L(theta) = sum_i (y_i - yhat_i)^2 / sigma_eps^2
             + sum_{j in enabled priors} (theta_j - mu_j)^2 / sigma_j^2

with the prior sum controlled by :class:`PriorMode`: all parameters, only the
physical (mechanistic) ones, or none.  Multiplied by sigma_eps^2/N and with
priors off, this is plain MSE.

Optimizers work on the flat parameter vector.  Physical entries are clipped to
their hard bounds after every step.  The learning-rate schedule is
gamma_k = gamma0 / k^a (power decay) or constant; the step index k restarts at
1 for every fit and for every per-observation online update.
"""

from __future__ import annotations

import enum
import itertools
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .core import WellDataset, as_columns, substream
from .errors import ConfigError, DataError, NumericError, SchemaError
from .models import KernelPlan, ModelKind, ModelSpec, ParameterSet, build_plan, scale_inputs


class PriorMode(enum.Enum):
    FULL = "Full"
    PHYSICAL_ONLY = "PhysicalOnly"
    NONE = "None"

    @classmethod
    def from_str(cls, s: str) -> "PriorMode":
        for p in cls:
            if p.value.lower() == s.strip().lower():
                return p
        raise ConfigError(f"unknown prior mode {s!r}")


class Method(enum.Enum):
    SGD = "SGD"
    ADAM = "Adam"

    @classmethod
    def from_str(cls, s: str) -> "Method":
        for m in cls:
            if m.value.lower() == s.strip().lower():
                return m
        raise ConfigError(f"unknown optimizer method {s!r}")


@dataclass(frozen=True)
class LossSpec:
    """Noise level and prior selection of the MAP objective."""

    noise_std: float
    prior_mode: PriorMode = PriorMode.FULL

    def __post_init__(self):
        if not self.noise_std > 0:
            raise ConfigError("noise_std must be positive")

    @classmethod
    def from_data(cls, train: WellDataset, rel: float = 0.05,
                  prior_mode: PriorMode = PriorMode.FULL) -> "LossSpec":
        """Default sigma_eps = rel * mean(train y)."""
        _, _, y, _ = as_columns(train)
        if y.size == 0:
            raise DataError("cannot derive noise_std from an empty dataset")
        mean_y = float(np.mean(np.abs(y)))
        if mean_y == 0.0:
            raise DataError("cannot derive noise_std from all-zero targets")
        return cls(rel * mean_y, prior_mode)


@dataclass(frozen=True)
class OptimizerConfig:
    method: Method = Method.ADAM
    gamma0: float = 1e-3
    schedule: str = "constant"       # "constant" | "power"
    power_a: float = 1.0
    steps: int = 10                  # E: per-observation step count in OL
    batch_size: int | None = 32      # None = full batch
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ConfigError("gamma0 must be positive")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.schedule not in ("constant", "power"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1 or None (full batch)")


@dataclass(frozen=True)
class EarlyStoppingConfig:
    val_fraction: float = 0.2
    patience: int = 10
    max_epochs: int = 200

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")


def gamma_at(cfg: OptimizerConfig, k: int) -> float:
    """Learning rate at step k >= 1 under the configured schedule."""
    if cfg.schedule == "power":
        return cfg.gamma0 / float(k) ** cfg.power_a
    return cfg.gamma0


# ------------------------------------------------------------ optimizer state


@dataclass
class OptimizerState:
    """Mutable optimizer state over one fit or one online update event."""

    values: np.ndarray
    m: np.ndarray
    v: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    k: int = 0  # steps taken

    @classmethod
    def for_params(cls, params: ParameterSet) -> "OptimizerState":
        n = len(params)
        return cls(values=params.values.copy(), m=np.zeros(n), v=np.zeros(n),
                   lower=params.lower.copy(), upper=params.upper.copy())


def optimizer_step(state: OptimizerState, grad: np.ndarray,
                   cfg: OptimizerConfig, k: int) -> OptimizerState:
    """Apply one SGD or Adam step at schedule index k (1-based).

    Non-finite gradients raise and leave the state untouched.  Physical
    parameters are clipped to their hard bounds.
    """
    if k < 1:
        raise ConfigError("step index k must be >= 1")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient; parameters untouched")
    g = gamma_at(cfg, k)
    if cfg.method is Method.SGD:
        state.values = kernels.sgd_step(state.values, grad, g, state.lower, state.upper)
    else:
        state.values = kernels.adam_step(state.values, grad, state.m, state.v,
                                         k, g, cfg.adam_beta1, cfg.adam_beta2,
                                         cfg.adam_eps, state.lower, state.upper)
    state.k = k
    return state


# -------------------------------------------------------------------- losses


def prior_loss_and_grad(params: ParameterSet, theta: np.ndarray,
                        mode: PriorMode) -> tuple[float, np.ndarray]:
    grad = np.zeros_like(theta)
    if mode is PriorMode.NONE or len(params) == 0:
        return 0.0, grad
    z = (theta - params.prior_mean) / params.prior_std
    if mode is PriorMode.PHYSICAL_ONLY:
        mask = params.is_physical
        loss = float(np.sum(z[mask] ** 2))
        grad[mask] = 2.0 * z[mask] / params.prior_std[mask]
    else:
        loss = float(np.sum(z ** 2))
        grad[:] = 2.0 * z / params.prior_std
    return loss, grad


def _mtl_cols(m: ModelSpec, well: np.ndarray) -> np.ndarray:
    lookup = {w: j for j, w in enumerate(m.mtl.well_ids)}
    try:
        return np.array([lookup[int(w)] for w in well], dtype=np.int64)
    except KeyError as e:
        raise ConfigError(f"well_id {e.args[0]} not in MTL task set") from None


def _batch_arrays(m: ModelSpec, plan: KernelPlan, data):
    _, X, y, well = as_columns(data)
    if X.shape[0] == 0:
        raise DataError("empty batch")
    X = np.ascontiguousarray(X)
    Xs = scale_inputs(plan, X)
    wells = _mtl_cols(m, well) if m.kind is ModelKind.MTL else np.zeros(len(y), dtype=np.int64)
    return X, Xs, np.ascontiguousarray(y), wells


def map_loss(m: ModelSpec, data, loss: LossSpec) -> float:
    """The MAP objective of the model on `data` (list of Observation or dataset)."""
    from .models import plan_predict  # local: avoids re-export clutter

    plan = build_plan(m)
    X, Xs, y, wells = _batch_arrays(m, plan, data)
    yhat = plan_predict(plan, m.params.values, X, Xs, wells)
    if not np.all(np.isfinite(yhat)):
        raise NumericError("non-finite forward value in map_loss")
    inv_var = 1.0 / (loss.noise_std * loss.noise_std)
    sse = float(np.sum((y - yhat) ** 2)) * inv_var
    p, _ = prior_loss_and_grad(m.params, m.params.values, loss.prior_mode)
    return sse + p


# ------------------------------------------------------------------- fitting


def _loss_and_grad(m: ModelSpec, plan: KernelPlan, theta, X, Xs, y, wells,
                   inv_var: float, prior_mode: PriorMode) -> tuple[float, np.ndarray]:
    from .models import plan_loss_grad

    sse, grad = plan_loss_grad(plan, theta, X, Xs, y, inv_var, wells)
    ploss, pgrad = prior_loss_and_grad(m.params, theta, prior_mode)
    return sse + ploss, grad + pgrad


def fit_map(m: ModelSpec, train: WellDataset, loss: LossSpec,
            ocfg: OptimizerConfig, escfg: EarlyStoppingConfig,
            curve_sink: list | None = None) -> ModelSpec:
    """MAP fit with mini-batches and chronological-tail early stopping.

    The last val_fraction of `train` (by time) is held out; training stops
    when its loss has not improved for `patience` epochs, and the
    best-validation parameters are returned.  An empty tail (too little data)
    falls back to a fixed run of max_epochs with a warning.
    """
    if m.kind is ModelKind.BENCHMARK:
        raise ConfigError("benchmark predictor has no parameters to fit")
    if len(train) < 2:
        raise DataError("fit_map needs at least 2 observations")

    plan = build_plan(m)
    X, Xs, y, wells = _batch_arrays(m, plan, train)
    n = X.shape[0]
    n_val = int(math.floor(escfg.val_fraction * n))
    n_tr = n - n_val
    degenerate = n_val == 0 or n_tr == 0
    if degenerate:
        warnings.warn("degenerate validation split; fixed epoch count", stacklevel=2)
        n_tr, n_val = n, 0
    Xt, Xst, yt, wt = X[:n_tr], Xs[:n_tr], y[:n_tr], wells[:n_tr]
    Xv, Xsv, yv, wv = X[n_tr:], Xs[n_tr:], y[n_tr:], wells[n_tr:]

    inv_var = 1.0 / (loss.noise_std * loss.noise_std)
    state = OptimizerState.for_params(m.params)
    rng = substream(ocfg.seed, "batches")
    bs = n_tr if ocfg.batch_size is None else min(ocfg.batch_size, n_tr)

    best_values = state.values.copy()
    best_val = math.inf
    since_improve = 0
    k = 0
    for epoch in range(1, escfg.max_epochs + 1):
        order = rng.permutation(n_tr) if bs < n_tr else np.arange(n_tr)
        for start in range(0, n_tr, bs):
            idx = order[start:start + bs]
            k += 1
            _, grad = _loss_and_grad(m, plan, state.values, Xt[idx], Xst[idx],
                                     yt[idx], wt[idx], inv_var, loss.prior_mode)
            optimizer_step(state, grad, ocfg, k)
        if degenerate:
            val_loss = math.nan
            if curve_sink is not None:
                tr_loss, _ = _loss_and_grad(m, plan, state.values, Xt, Xst, yt, wt,
                                            inv_var, loss.prior_mode)
                curve_sink.append((epoch, tr_loss, val_loss))
            best_values = state.values.copy()
            continue
        val_loss, _ = _loss_and_grad(m, plan, state.values, Xv, Xsv, yv, wv,
                                     inv_var, loss.prior_mode)
        if curve_sink is not None:
            tr_loss, _ = _loss_and_grad(m, plan, state.values, Xt, Xst, yt, wt,
                                        inv_var, loss.prior_mode)
            curve_sink.append((epoch, tr_loss, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_values = state.values.copy()
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= escfg.patience:
                break
    return m.with_values(best_values)


# --------------------------------------------------------------- grid search


_GRID_KEYS = ("gamma0", "steps", "method", "schedule", "batch_size")

DEFAULT_INIT_OCFG = OptimizerConfig(method=Method.ADAM, gamma0=1e-3, steps=1,
                                    batch_size=32)


def grid_search(kind: ModelKind | str, grids: dict, train, protocol,
                *, loss_rel: float = 0.05,
                escfg: EarlyStoppingConfig | None = None,
                init_ocfg: OptimizerConfig | None = None,
                shape=None, mtl=None, geometry=None, priors=None,
                seed: int = 0, val_fraction: float = 0.2,
                results_sink: list | None = None) -> OptimizerConfig:
    """Exhaustive search over optimizer hyperparameters.

    Each combination runs the given learning protocol (a ScheduleConfig,
    PBL or OL) prequentially over the chronological tail of the training
    data; the score is the cross-well mean MAPE.  Ties break toward smaller
    gamma0, then smaller E.  `train` is one WellDataset or a list of them.
    """
    # imported here: learning builds on optim, so the top level must not cycle
    from . import learning
    from .core import DataSplit, chronological_split, fit_scaler
    from .models import init_model

    kind = ModelKind.from_str(kind) if isinstance(kind, str) else kind
    if not grids or any(len(v) == 0 for v in grids.values()):
        raise ConfigError("grids must be nonempty")
    unknown = set(grids) - set(_GRID_KEYS)
    if unknown:
        raise ConfigError(f"unknown grid keys {sorted(unknown)}")
    escfg = escfg or EarlyStoppingConfig()

    datasets = [train] if isinstance(train, WellDataset) else list(train)
    if kind is ModelKind.MTL:
        if mtl is None:
            all_ids = sorted({w for ds in datasets for w in ds.well_ids})
            from .models import MtlParams
            mtl = MtlParams(well_ids=tuple(all_ids))
        datasets = [WellDataset.merge(datasets)]

    # chronological holdout per dataset
    splits: list[DataSplit] = []
    for ds in datasets:
        cut = ds.t[int(math.floor((1.0 - val_fraction) * len(ds)))]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            splits.append(chronological_split(ds, cut))
    for sp in splits:
        if len(sp.train) < 2 or len(sp.test) == 0:
            raise DataError("grid_search needs data on both sides of the holdout cut")

    keys = [k for k in _GRID_KEYS if k in grids]
    combos = list(itertools.product(*(grids[k] for k in keys)))
    diagnostics = []
    best = None
    best_score = math.inf

    for combo in combos:
        override = dict(zip(keys, combo))
        if "method" in override and isinstance(override["method"], str):
            override["method"] = Method.from_str(override["method"])
        ocfg = replace(protocol.ocfg, **override)
        mapes = []
        failed = False
        for sp in splits:
            scaler = fit_scaler(sp.train)
            m0 = init_model(kind, shape=shape, mtl=mtl, seed=seed,
                            priors=priors, geometry=geometry, scaler=scaler)
            ls = LossSpec.from_data(sp.train, rel=loss_rel)
            cfg = replace(protocol, ocfg=ocfg, loss=ls)
            fit_cfg = ocfg if cfg.mode == "pbl" else (init_ocfg or DEFAULT_INIT_OCFG)
            try:
                m_fit = fit_map(m0, sp.train, ls, fit_cfg, escfg)
                log = (learning.run_pbl if cfg.mode == "pbl" else learning.run_ol)(m_fit, sp, cfg)
                for w in log.well_ids():
                    mask = (log.well == w) & (log.y_true != 0) & np.isfinite(log.y_pred)
                    if not np.any(mask):
                        failed = True
                        break
                    mapes.append(100.0 * float(np.mean(
                        np.abs(log.y_true[mask] - log.y_pred[mask]) / np.abs(log.y_true[mask]))))
            except (NumericError, FloatingPointError):
                failed = True
            if failed:
                break
        score = math.inf if (failed or not mapes or not np.all(np.isfinite(mapes))) \
            else float(np.mean(mapes))
        diagnostics.append((override, score))
        if results_sink is not None:
            results_sink.append((dict(override), score))
        better = score < best_score
        if not better and best is not None and score == best_score and math.isfinite(score):
            better = (ocfg.gamma0, ocfg.steps) < (best.gamma0, best.steps)
        if better or best is None:
            best, best_score = ocfg, score

    if not math.isfinite(best_score):
        raise NumericError(f"all grid combinations diverged: {diagnostics}")
    return best


# ----------------------------------------------------- state (de)serialization

_STATE_MAGIC = "vfmlab-optimizer-state 1"


def save_optimizer_state(state: OptimizerState, path: str | Path) -> None:
    lines = [_STATE_MAGIC, f"k {state.k}"]
    for name, arr in (("values", state.values), ("m", state.m), ("v", state.v),
                      ("lower", state.lower), ("upper", state.upper)):
        lines.append(name + " " + " ".join(float(v).hex() for v in arr))
    Path(path).write_text("\n".join(lines) + "\n")


def load_optimizer_state(path: str | Path) -> OptimizerState:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _STATE_MAGIC:
        raise SchemaError(f"{path}: not an optimizer state file")
    fields = {}
    k = 0
    for line in lines[1:]:
        name, _, rest = line.partition(" ")
        if name == "k":
            k = int(rest)
        else:
            fields[name] = np.array([float.fromhex(v) for v in rest.split()])
    return OptimizerState(values=fields["values"], m=fields["m"], v=fields["v"],
                          lower=fields["lower"], upper=fields["upper"], k=k)
