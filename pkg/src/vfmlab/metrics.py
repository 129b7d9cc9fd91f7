"""Prequential metrics: MAPE, rolling absolute error, cross-well summaries.

Zero-target entries cannot be percentage-scored; they are excluded and
counted rather than silently dropped.  Percentiles interpolate linearly
between closest ranks.  The summary table follows the study layout: one row
per learning method, one column per model kind, plus an "All" column that
averages the trainable kinds (the naive previous-value predictor is reported
but not averaged).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import SECONDS_PER_DAY
from .errors import ConfigError, DataError
from .learning import PredictionLog
from .models import ModelKind

DEFAULT_WINDOW_S = 14 * SECONDS_PER_DAY
PERCENTILES = (10, 25, 50, 75, 90)


@dataclass(frozen=True)
class MetricReport:
    per_well_mape: dict
    cross_well_mean: float
    percentiles: tuple  # P10, P25, P50, P75, P90 of per-well MAPEs
    rolling_series: tuple  # (t, rolling_mae, p25_band, p75_band) arrays
    n_zero_targets: int = 0


def _scored(log: PredictionLog, well_id: int | None):
    sel = np.ones(len(log), dtype=bool) if well_id is None else log.well == well_id
    zero = sel & (log.y_true == 0.0)
    ok = sel & ~zero
    return ok, int(np.sum(zero))


def mape_details(log: PredictionLog, well_id: int | None = None) -> tuple[float, int, int]:
    """(MAPE %, scored count, excluded zero-target count)."""
    ok, n_zero = _scored(log, well_id)
    n = int(np.sum(ok))
    if n == 0:
        raise DataError("no scoreable entries")
    val = 100.0 * float(np.mean(np.abs(log.y_true[ok] - log.y_pred[ok])
                                / np.abs(log.y_true[ok])))
    return val, n, n_zero


def mape(log: PredictionLog, well_id: int | None = None) -> float:
    return mape_details(log, well_id)[0]


def _rolling_mean(t: np.ndarray, v: np.ndarray, window_s: float,
                  at: np.ndarray) -> np.ndarray:
    """Mean of v over (at_i - window, at_i] for each query time; nan on empty."""
    out = np.full(len(at), np.nan)
    csum = np.concatenate([[0.0], np.cumsum(v)])
    lo = np.searchsorted(t, at - window_s, side="right")
    hi = np.searchsorted(t, at, side="right")
    nz = hi > lo
    out[nz] = (csum[hi[nz]] - csum[lo[nz]]) / (hi[nz] - lo[nz])
    return out


def rolling_mae(log: PredictionLog, window_s: float = DEFAULT_WINDOW_S) -> tuple:
    """(t, value) rolling mean absolute error over all entries, trailing window."""
    if len(log) == 0:
        raise DataError("empty log")
    err = np.abs(log.y_true - log.y_pred)
    return log.t.copy(), _rolling_mean(log.t, err, window_s, log.t)


def metric_report(log: PredictionLog, window_s: float = DEFAULT_WINDOW_S) -> MetricReport:
    wells = log.well_ids()
    per_well = {}
    n_zero_total = 0
    for w in wells:
        val, _, nz = mape_details(log, w)
        per_well[w] = val
        n_zero_total += nz
    vals = np.array(sorted(per_well.values()), dtype=np.float64)
    pct = tuple(float(p) for p in np.percentile(vals, PERCENTILES))
    t_all, pooled = rolling_mae(log, window_s)
    per_well_rolling = np.full((len(wells), len(t_all)), np.nan)
    for j, w in enumerate(wells):
        m = log.well == w
        per_well_rolling[j] = _rolling_mean(log.t[m], np.abs(log.y_true[m] - log.y_pred[m]),
                                            window_s, t_all)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)  # all-nan slices
        p25 = np.nanpercentile(per_well_rolling, 25, axis=0)
        p75 = np.nanpercentile(per_well_rolling, 75, axis=0)
    return MetricReport(per_well_mape=per_well,
                        cross_well_mean=float(np.mean(vals)),
                        percentiles=pct,
                        rolling_series=(t_all, pooled, p25, p75),
                        n_zero_targets=n_zero_total)


@dataclass(frozen=True)
class SummaryTable:
    """Rows = learning methods, columns = model kinds, plus the All average."""

    methods: tuple
    kinds: tuple
    cells: np.ndarray           # cross-well MAPE per (method, kind)
    all_column: np.ndarray      # mean over trainable kinds per method
    reports: dict = field(default_factory=dict)

    def cell(self, method: str, kind: str) -> float:
        return float(self.cells[self.methods.index(method), self.kinds.index(kind)])


def summarize(logs: dict, window_s: float = DEFAULT_WINDOW_S) -> SummaryTable:
    """Aggregate {(method, kind): PredictionLog} into the study table."""
    if not logs:
        raise DataError("no logs to summarize")
    methods = tuple(dict.fromkeys(k[0] for k in logs))
    kinds = tuple(dict.fromkeys(k[1] for k in logs))
    cells = np.full((len(methods), len(kinds)), np.nan)
    reports = {}
    for (method, kind), log in logs.items():
        rep = metric_report(log, window_s)
        reports[(method, kind)] = rep
        cells[methods.index(method), kinds.index(kind)] = rep.cross_well_mean
    averaged = [k for k in kinds if str(k).lower() != ModelKind.BENCHMARK.value.lower()]
    idx = [kinds.index(k) for k in averaged]
    all_col = np.array([float(np.nanmean(cells[i, idx])) if idx else np.nan
                        for i in range(len(methods))])
    return SummaryTable(methods=methods, kinds=kinds, cells=cells,
                        all_column=all_col, reports=reports)


def write_summary_csv(table: SummaryTable, path: str | Path) -> None:
    lines = ["method," + ",".join(table.kinds) + ",All"]
    for i, m in enumerate(table.methods):
        cells = ",".join(f"{table.cells[i, j]:.6g}" for j in range(len(table.kinds)))
        lines.append(f"{m},{cells},{table.all_column[i]:.6g}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_rolling_csv(report: MetricReport, path: str | Path) -> None:
    t, v, p25, p75 = report.rolling_series
    lines = ["t,rolling_mae,p25,p75"]
    for i in range(len(t)):
        lines.append(f"{int(t[i])},{v[i]!r},{p25[i]!r},{p75[i]!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_plot(table: SummaryTable, path: str | Path) -> None:
    """Rolling-error curves per method plus a per-well MAPE box summary (SVG/PDF)."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as e:
        raise ConfigError("plotting needs the optional matplotlib dependency") from e
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    for (method, kind), rep in table.reports.items():
        t, v, _, _ = rep.rolling_series
        ax1.plot((t - t[0]) / SECONDS_PER_DAY, v, label=f"{method}/{kind}", lw=0.8)
    ax1.set_xlabel("days")
    ax1.set_ylabel("rolling MAE")
    ax1.legend(fontsize=6)
    data = [[rep.per_well_mape[w] for w in sorted(rep.per_well_mape)]
            for rep in table.reports.values()]
    labels = [f"{m}/{k}" for m, k in table.reports]
    ax2.boxplot(data)
    ax2.set_xticks(range(1, len(labels) + 1))
    ax2.set_xticklabels(labels)
    ax2.set_ylabel("per-well MAPE %")
    ax2.tick_params(axis="x", rotation=90, labelsize=6)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
