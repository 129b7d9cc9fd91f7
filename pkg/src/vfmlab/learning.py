"""Passive-learning drivers over a chronological stream.

Two schedules share one prequential loop (predict first, then consume):

* periodic batch learning: every period boundary after the split, refit from
  prior initialization on all history observed so far (optionally a trailing
  window), re-fitting the input scaler;
* online learning: after every prediction, take k warm-started optimizer
  steps on that single observation, with the physical parameters regularized
  toward their initial priors and the scaler frozen.

Version bookkeeping: the logged model_version is the version that produced
the prediction, and it increments exactly once per successful refit or
per-observation update.  A degenerate schedule (infinite period, or k = 0)
therefore logs a constant version, and the two schedules produce
bit-identical logs in that case.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import Source, DataSplit, WellDataset, fit_scaler
from .errors import ConfigError, DataError, NumericError, SchemaError
from .models import ModelKind, ModelSpec, build_plan, plan_loss_grad, plan_predict, scale_inputs
from .optim import (EarlyStoppingConfig, LossSpec, OptimizerConfig, OptimizerState,
                    PriorMode, fit_map, optimizer_step, prior_loss_and_grad)


@dataclass(frozen=True)
class ScheduleConfig:
    """How a model follows the stream: batch period or per-observation steps."""

    mode: str                              # "pbl" | "ol"
    ocfg: OptimizerConfig
    loss: LossSpec
    period_s: float | None = None          # PBL period; math.inf disables retraining
    ol_steps: int | None = None            # OL step count; None = ocfg.steps
    window_s: float | None = None          # None = all history
    escfg: EarlyStoppingConfig = field(default_factory=EarlyStoppingConfig)
    update_sources: tuple[str, ...] | None = None  # None = every arrival updates

    def __post_init__(self):
        if self.mode not in ("pbl", "ol"):
            raise ConfigError(f"unknown schedule mode {self.mode!r}")
        if self.mode == "pbl":
            if self.period_s is None or not self.period_s > 0:
                raise ConfigError("pbl needs a positive period")
        else:
            if self.steps_per_obs() < 0:
                raise ConfigError("ol step count must be >= 0")
        if self.window_s is not None and not self.window_s > 0:
            raise ConfigError("window_s must be positive when set")

    def steps_per_obs(self) -> int:
        return self.ocfg.steps if self.ol_steps is None else self.ol_steps


@dataclass(frozen=True)
class PredictionLog:
    """Prequential record: each y_pred was emitted before its observation
    was consumed by any update."""

    t: np.ndarray
    well: np.ndarray
    y_true: np.ndarray
    y_pred: np.ndarray
    model_version: np.ndarray
    source: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        for name in ("well", "y_true", "y_pred", "model_version", "source"):
            if len(getattr(self, name)) != n:
                raise DataError(f"column {name} has mismatched length")
        if n and np.any(np.diff(self.t) < 0):
            raise DataError("log must be chronological")

    def __len__(self) -> int:
        return len(self.t)

    def well_ids(self) -> tuple[int, ...]:
        return tuple(int(w) for w in np.unique(self.well))

    def for_well(self, well_id: int) -> "PredictionLog":
        m = self.well == well_id
        return PredictionLog(self.t[m], self.well[m], self.y_true[m],
                             self.y_pred[m], self.model_version[m],
                             self.source[m], dict(self.metadata))

    @classmethod
    def concat(cls, logs: "list[PredictionLog]") -> "PredictionLog":
        if not logs:
            raise DataError("nothing to concatenate")
        t = np.concatenate([l.t for l in logs])
        order = np.argsort(t, kind="stable")
        meta = dict(logs[0].metadata)
        return cls(t[order],
                   np.concatenate([l.well for l in logs])[order],
                   np.concatenate([l.y_true for l in logs])[order],
                   np.concatenate([l.y_pred for l in logs])[order],
                   np.concatenate([l.model_version for l in logs])[order],
                   np.concatenate([l.source for l in logs])[order], meta)


class _LogBuilder:
    def __init__(self):
        self.rows: list[tuple] = []

    def add(self, t, well, y_true, y_pred, version, source):
        self.rows.append((t, well, y_true, y_pred, version, source))

    def build(self, metadata: dict) -> PredictionLog:
        if self.rows:
            cols = list(zip(*self.rows))
        else:
            cols = [[]] * 6
        return PredictionLog(
            np.asarray(cols[0], dtype=np.int64), np.asarray(cols[1], dtype=np.int64),
            np.asarray(cols[2], dtype=np.float64), np.asarray(cols[3], dtype=np.float64),
            np.asarray(cols[4], dtype=np.int64), np.asarray(cols[5], dtype=np.uint8),
            metadata)


def _predict_one(m: ModelSpec, plan, x_row: np.ndarray, well_id: int) -> float:
    X = x_row[None, :]
    Xs = scale_inputs(plan, X)
    if m.kind is ModelKind.MTL:
        col = m.mtl.col_of(well_id)
        wells = np.array([col], dtype=np.int64)
    else:
        wells = np.zeros(1, dtype=np.int64)
    return float(plan_predict(plan, m.params.values, X, Xs, wells)[0])


def _history_dataset(split: DataSplit, consumed: int) -> WellDataset:
    tr, te = split.train, split.test
    if consumed == 0:
        return tr
    return WellDataset(t=np.concatenate([tr.t, te.t[:consumed]]),
                       X=np.concatenate([tr.X, te.X[:consumed]]),
                       y=np.concatenate([tr.y, te.y[:consumed]]),
                       source=np.concatenate([tr.source, te.source[:consumed]]),
                       well=np.concatenate([tr.well, te.well[:consumed]]))


def _source_allows(cfg: ScheduleConfig, source_code: int) -> bool:
    if cfg.update_sources is None:
        return True
    return Source(source_code).to_str() in cfg.update_sources


def _prev_y_by_well(train: WellDataset) -> dict[int, float]:
    prev: dict[int, float] = {}
    for w in train.well_ids:
        mask = train.well == w
        prev[int(w)] = float(train.y[mask][-1])
    return prev


def run_pbl(m0: ModelSpec, split: DataSplit, cfg: ScheduleConfig) -> PredictionLog:
    """Periodic batch learning: full refits at period boundaries after the split.

    A refit happens at the first arrival crossing one or more boundaries and
    uses every observation consumed before that arrival; a failed refit keeps
    the previous model and flags the period.
    """
    if cfg.mode != "pbl":
        raise ConfigError("run_pbl needs a pbl schedule")
    te = split.test
    builder = _LogBuilder()
    current = m0
    plan = build_plan(current)
    prev_y = _prev_y_by_well(split.train) if m0.kind is ModelKind.BENCHMARK else {}
    next_boundary = split.split_time + cfg.period_s
    n_retrains = 0
    failed_periods: list[int] = []

    for i in range(len(te)):
        t_i = int(te.t[i])
        if t_i >= next_boundary and m0.kind is not ModelKind.BENCHMARK:
            history = _history_dataset(split, i)
            if cfg.update_sources is not None:
                keep = np.array([_source_allows(cfg, s) for s in history.source])
                history = history.take(np.flatnonzero(keep))
            if cfg.window_s is not None and len(history):
                history = history.from_time(float(history.t[-1]) - cfg.window_s)
            try:
                scaler = fit_scaler(history)
                start = replace(m0, scaler=scaler)  # fresh from prior init
                fitted = fit_map(start, history, cfg.loss, cfg.ocfg, cfg.escfg)
                current = replace(fitted, version=current.version + 1)
                plan = build_plan(current)
                n_retrains += 1
            except (NumericError, DataError):
                failed_periods.append(t_i)
            while next_boundary <= t_i:
                next_boundary += cfg.period_s

        w = int(te.well[i])
        if m0.kind is ModelKind.BENCHMARK:
            y_hat = prev_y.get(w, math.nan)
            prev_y[w] = float(te.y[i])
        else:
            y_hat = _predict_one(current, plan, te.X[i], w)
        builder.add(t_i, w, float(te.y[i]), y_hat, current.version, int(te.source[i]))

    meta = {"mode": "pbl", "period_s": cfg.period_s, "window_s": cfg.window_s,
            "kind": m0.kind.value, "n_retrains": n_retrains,
            "failed_periods": failed_periods}
    return builder.build(meta)


def run_ol(m0: ModelSpec, split: DataSplit, cfg: ScheduleConfig) -> PredictionLog:
    """Online learning: k warm-started steps per observation, prior-anchored
    physical parameters, frozen scaler.

    A non-finite update is skipped (flagged) and the previous parameters
    carry on.  k = 0 degenerates to pure prediction with m0.
    """
    if cfg.mode != "ol":
        raise ConfigError("run_ol needs an ol schedule")
    te = split.test
    builder = _LogBuilder()
    current = m0
    plan = build_plan(current)
    steps = cfg.steps_per_obs()
    inv_var = 1.0 / (cfg.loss.noise_std * cfg.loss.noise_std)
    prev_y = _prev_y_by_well(split.train) if m0.kind is ModelKind.BENCHMARK else {}
    n_updates = 0
    skipped: list[int] = []

    for i in range(len(te)):
        t_i = int(te.t[i])
        w = int(te.well[i])
        if m0.kind is ModelKind.BENCHMARK:
            y_hat = prev_y.get(w, math.nan)
            prev_y[w] = float(te.y[i])
            builder.add(t_i, w, float(te.y[i]), y_hat, current.version, int(te.source[i]))
            continue

        y_hat = _predict_one(current, plan, te.X[i], w)
        builder.add(t_i, w, float(te.y[i]), y_hat, current.version, int(te.source[i]))

        if steps == 0 or not _source_allows(cfg, int(te.source[i])):
            continue
        X1 = te.X[i][None, :]
        Xs1 = scale_inputs(plan, X1)
        if current.kind is ModelKind.MTL:
            wells1 = np.array([current.mtl.col_of(w)], dtype=np.int64)
        else:
            wells1 = np.zeros(1, dtype=np.int64)
        y1 = te.y[i:i + 1]
        state = OptimizerState.for_params(current.params)
        ok = True
        for k in range(1, steps + 1):
            _, grad = plan_loss_grad(plan, state.values, X1, Xs1, y1, inv_var, wells1)
            _, pgrad = prior_loss_and_grad(current.params, state.values,
                                           PriorMode.PHYSICAL_ONLY)
            try:
                optimizer_step(state, grad + pgrad, cfg.ocfg, k)
            except NumericError:
                ok = False
                break
        if ok and np.all(np.isfinite(state.values)):
            current = current.with_values(state.values)
            n_updates += 1
        else:
            skipped.append(t_i)

    meta = {"mode": "ol", "steps": steps, "kind": m0.kind.value,
            "n_updates": n_updates, "skipped_updates": skipped}
    return builder.build(meta)


def run_schedule(m0: ModelSpec, split: DataSplit, cfg: ScheduleConfig) -> PredictionLog:
    return (run_pbl if cfg.mode == "pbl" else run_ol)(m0, split, cfg)


# ------------------------------------------------------------------ log I/O

_LOG_HEADER = "t,well_id,y_true,y_pred,model_version,source"


def write_log(log: PredictionLog, path: str | Path) -> None:
    path = Path(path)
    lines = [_LOG_HEADER]
    for i in range(len(log)):
        lines.append(f"{int(log.t[i])},{int(log.well[i])},{float(log.y_true[i])!r},"
                     f"{float(log.y_pred[i])!r},{int(log.model_version[i])},"
                     f"{Source(int(log.source[i])).to_str()}")
    path.write_text("\n".join(lines) + "\n")
    sidecar = path.with_name(path.name + ".meta.json")
    sidecar.write_text(json.dumps(log.metadata, indent=2, sort_keys=True) + "\n")


def read_log(path: str | Path) -> PredictionLog:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != _LOG_HEADER:
        raise SchemaError(f"{path}: not a prediction log")
    rows = []
    for ln in lines[1:]:
        if not ln:
            continue
        t, w, yt, yp, v, src = ln.split(",")
        rows.append((int(t), int(w), float(yt), float(yp), int(v),
                     int(Source.from_str(src))))
    sidecar = path.with_name(path.name + ".meta.json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    b = _LogBuilder()
    b.rows = rows
    return b.build(meta)
