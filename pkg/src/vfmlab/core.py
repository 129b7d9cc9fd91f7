"""Domain types, chronological datasets, CSV ingestion, and feature scaling.

Conventions used across the package:

* Explanatory vector ``x`` has d = 6 components, ordered
  ``(u, p1, p2, T1, eta_oil, eta_gas)``: choke opening in [0, 1], upstream
  pressure [Pa], downstream pressure [Pa], upstream temperature [K], oil and
  gas volume fractions at standard conditions.  The water fraction is derived,
  ``eta_wat = max(0, 1 - eta_oil - eta_gas)``.
* Target ``y`` is the total volumetric flow rate [Sm3/h].
* Timestamps are seconds since the Unix epoch (float64 internally).  CSV
  files may carry ISO-8601 strings or numeric epoch seconds; the format is
  auto-detected from the first row and applied to the whole column.
* All randomness flows from one global integer seed, fanned out to named
  substreams (see :func:`substream`) backed by numpy's PCG64 generator.
"""

from __future__ import annotations

import csv
import datetime as _dt
import enum
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import EmptyDatasetError, SchemaError

D_INPUT = 6
COLUMNS = ("u", "p1", "p2", "T1", "eta_oil", "eta_gas")
CSV_HEADER = ("well_id", "t", "u", "p1", "p2", "T1", "eta_oil", "eta_gas", "q_total", "source")

SECONDS_PER_DAY = 86400.0


class Source(enum.IntEnum):
    """Measurement source tag. Stored columnar as uint8 codes."""

    MPFM = 0
    WELLTEST = 1

    @classmethod
    def from_str(cls, s: str) -> "Source":
        key = s.strip().lower()
        if key == "mpfm":
            return cls.MPFM
        if key in ("welltest", "well_test", "well-test"):
            return cls.WELLTEST
        raise ValueError(f"unknown source {s!r}")

    def to_str(self) -> str:
        return "MPFM" if self is Source.MPFM else "WellTest"


class EmptySplitWarning(UserWarning):
    """A chronological split produced an empty train or test side."""


# ---------------------------------------------------------------- observations


@dataclass(frozen=True)
class Observation:
    """One timestamped sample of a well."""

    t: float
    x: np.ndarray  # shape (6,), (u, p1, p2, T1, eta_oil, eta_gas)
    y: float
    source: Source
    well_id: int

    def invariant_violation(self) -> str | None:
        """Return a short reason string if the row is invalid, else None."""
        x = self.x
        if x.shape != (D_INPUT,):
            return "x_dim"
        if not (np.all(np.isfinite(x)) and np.isfinite(self.y) and np.isfinite(self.t)):
            return "non_finite"
        u, p1, p2, t1, eo, eg = x
        if not 0.0 <= u <= 1.0:
            return "u_range"
        if p1 <= 0.0:
            return "p1_nonpositive"
        if p2 <= 0.0:
            return "p2_nonpositive"
        if t1 <= 0.0:
            return "T1_nonpositive"
        if eo < 0.0 or eg < 0.0:
            return "fraction_negative"
        if eo + eg > 1.0:
            return "fraction_sum"
        if self.y < 0.0:
            return "y_negative"
        return None


def _as_f64(a) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class WellDataset:
    """Chronologically ordered observations, stored columnar.

    Normally all rows share one ``well_id`` (enforced on the ingestion and
    split paths).  A merged multi-well stream, used by the multi-task driver
    and cross-well tooling, is the same container built via :meth:`merge`;
    the :attr:`well_id` property raises on such mixed instances.
    """

    t: np.ndarray        # (n,) float64, nondecreasing
    X: np.ndarray        # (n, 6) float64
    y: np.ndarray        # (n,) float64
    source: np.ndarray   # (n,) uint8 Source codes
    well: np.ndarray     # (n,) int64

    def __post_init__(self):
        t = _as_f64(self.t)
        X = _as_f64(self.X)
        y = _as_f64(self.y)
        src = np.asarray(self.source, dtype=np.uint8)
        src.flags.writeable = False
        well = np.asarray(self.well, dtype=np.int64)
        well.flags.writeable = False
        n = t.shape[0]
        if X.shape != (n, D_INPUT) or y.shape != (n,) or src.shape != (n,) or well.shape != (n,):
            raise ValueError("column length mismatch")
        if n > 1 and np.any(np.diff(t) < 0.0):
            raise ValueError("timestamps must be nondecreasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "well", well)

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_observations(cls, obs: Sequence[Observation]) -> "WellDataset":
        obs = sorted(obs, key=lambda o: o.t)
        n = len(obs)
        t = np.array([o.t for o in obs], dtype=np.float64)
        X = np.array([o.x for o in obs], dtype=np.float64).reshape(n, D_INPUT)
        y = np.array([o.y for o in obs], dtype=np.float64)
        src = np.array([int(o.source) for o in obs], dtype=np.uint8)
        well = np.array([o.well_id for o in obs], dtype=np.int64)
        return cls(t, X, y, src, well)

    @classmethod
    def empty(cls, well_id: int = 0) -> "WellDataset":
        z = np.zeros(0)
        return cls(z, np.zeros((0, D_INPUT)), z, np.zeros(0, dtype=np.uint8), np.zeros(0, dtype=np.int64))

    @classmethod
    def merge(cls, datasets: Iterable["WellDataset"]) -> "WellDataset":
        """Merge several wells into one chronological stream (stable in time)."""
        parts = [d for d in datasets if len(d) > 0]
        if not parts:
            return cls.empty()
        t = np.concatenate([d.t for d in parts])
        order = np.argsort(t, kind="stable")
        return cls(
            t[order],
            np.concatenate([d.X for d in parts])[order],
            np.concatenate([d.y for d in parts])[order],
            np.concatenate([d.source for d in parts])[order],
            np.concatenate([d.well for d in parts])[order],
        )

    # -- access ---------------------------------------------------------------

    def __len__(self) -> int:
        return self.t.shape[0]

    def __getitem__(self, i: int) -> Observation:
        return Observation(
            t=float(self.t[i]), x=self.X[i].copy(), y=float(self.y[i]),
            source=Source(int(self.source[i])), well_id=int(self.well[i]),
        )

    @property
    def observations(self) -> Iterator[Observation]:
        for i in range(len(self)):
            yield self[i]

    @property
    def well_id(self) -> int:
        ids = np.unique(self.well)
        if ids.size == 0:
            raise EmptyDatasetError("empty dataset has no well_id")
        if ids.size > 1:
            raise ValueError("mixed-well stream has no single well_id")
        return int(ids[0])

    @property
    def well_ids(self) -> tuple[int, ...]:
        return tuple(int(w) for w in np.unique(self.well))

    def is_multiwell(self) -> bool:
        return np.unique(self.well).size > 1

    def take(self, idx) -> "WellDataset":
        return WellDataset(self.t[idx], self.X[idx], self.y[idx], self.source[idx], self.well[idx])

    def before(self, t: float) -> "WellDataset":
        return self.take(self.t < t)

    def from_time(self, t: float) -> "WellDataset":
        return self.take(self.t >= t)

    def only_source(self, source: Source) -> "WellDataset":
        return self.take(self.source == int(source))

    def for_well(self, well_id: int) -> "WellDataset":
        return self.take(self.well == well_id)


# ---------------------------------------------------------------------- splits


@dataclass(frozen=True)
class DataSplit:
    """Train/test partition at a fixed time: train t < split_time <= test t."""

    train: WellDataset
    test: WellDataset
    split_time: float

    def __post_init__(self):
        if len(self.train) and self.train.t[-1] >= self.split_time:
            raise ValueError("train side crosses split_time")
        if len(self.test) and self.test.t[0] < self.split_time:
            raise ValueError("test side precedes split_time")


def chronological_split(ds: WellDataset, split_time: float) -> DataSplit:
    """Split at a timestamp; the boundary observation goes to the test side.

    An empty side is allowed but flagged with :class:`EmptySplitWarning`.
    """
    if len(ds) == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    train = ds.before(split_time)
    test = ds.from_time(split_time)
    if len(train) == 0:
        warnings.warn("chronological_split: empty train side", EmptySplitWarning, stacklevel=2)
    if len(test) == 0:
        warnings.warn("chronological_split: empty test side", EmptySplitWarning, stacklevel=2)
    return DataSplit(train=train, test=test, split_time=float(split_time))


# ---------------------------------------------------------------------- scaler


@dataclass(frozen=True)
class FeatureScaler:
    """Componentwise standardization x -> (x - mean)/std.

    Uses the population standard deviation (ddof=0).  Components with zero
    empirical std get std 1, so constant columns scale to 0.

    Also carries the location/scale of the target variable from the same
    fitting window.  Purely data-driven predictors regress in this
    standardized target space (and map back on prediction), which keeps their
    parameters O(1) regardless of the engineering units of the flow rate;
    physical-output models ignore the target stats.
    """

    mean: np.ndarray
    std: np.ndarray
    target_mean: float = 0.0
    target_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mean", _as_f64(self.mean))
        object.__setattr__(self, "std", _as_f64(self.std))
        object.__setattr__(self, "target_mean", float(self.target_mean))
        object.__setattr__(self, "target_scale", float(self.target_scale))
        if np.any(self.std <= 0.0):
            raise ValueError("scaler std must be positive")
        if not self.target_scale > 0.0:
            raise ValueError("scaler target_scale must be positive")

    @classmethod
    def identity(cls, d: int = D_INPUT) -> "FeatureScaler":
        return cls(np.zeros(d), np.ones(d))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def fit_scaler(ds: WellDataset) -> FeatureScaler:
    if len(ds) == 0:
        raise EmptyDatasetError("cannot fit scaler on empty dataset")
    mean = ds.X.mean(axis=0)
    std = ds.X.std(axis=0)  # ddof=0
    std = np.where(std == 0.0, 1.0, std)
    ym = float(ds.y.mean())
    ys = float(ds.y.std())
    return FeatureScaler(mean, std, ym, ys if ys > 0.0 else 1.0)


def apply_scaler(s: FeatureScaler, x: np.ndarray) -> np.ndarray:
    return s.transform(x)


# ------------------------------------------------------------------ timestamps


def parse_timestamp(s: str) -> float:
    """Parse one ISO-8601 string to epoch seconds (naive times read as UTC)."""
    text = s.strip().replace("Z", "+00:00")
    dt = _dt.datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=_dt.timezone.utc)
    return dt.timestamp()


def _format_float(v: float) -> str:
    # shortest round-trip decimal; integral values print without the mantissa
    if float(v).is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(float(v))


# ------------------------------------------------------------------- ingestion


@dataclass
class IngestReport:
    """Counts from one ingestion pass."""

    n_read: int = 0
    n_accepted: int = 0
    n_rejected: int = 0
    reject_reasons: dict = field(default_factory=dict)


def ingest_csv_report(path: str | Path) -> tuple[list[WellDataset], IngestReport]:
    """Ingest a CSV file; return per-well datasets plus the reject report.

    Rows violating the Observation invariants (or unparseable) are dropped and
    counted; every run writes a sidecar ``<input>.rejects.csv`` with the
    offending rows and a reason column.
    """
    path = Path(path)
    report = IngestReport()
    rejects: list[tuple[list[str], str]] = []
    rows_by_well: dict[int, list[Observation]] = {}

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in CSV_HEADER if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        col = {name: header.index(name) for name in CSV_HEADER}

        iso_time: bool | None = None  # decided on the first data row
        for raw in reader:
            if not raw or all(not c.strip() for c in raw):
                continue
            report.n_read += 1
            reason = None
            obs = None
            try:
                tfield = raw[col["t"]].strip()
                if iso_time is None:
                    try:
                        float(tfield)
                        iso_time = False
                    except ValueError:
                        iso_time = True
                t = parse_timestamp(tfield) if iso_time else float(tfield)
                x = np.array([float(raw[col[c]]) for c in COLUMNS], dtype=np.float64)
                obs = Observation(
                    t=t, x=x, y=float(raw[col["q_total"]]),
                    source=Source.from_str(raw[col["source"]]),
                    well_id=int(raw[col["well_id"]]),
                )
            except (ValueError, IndexError):
                reason = "unparseable"
            if reason is None:
                reason = obs.invariant_violation()
            if reason is None:
                rows_by_well.setdefault(obs.well_id, []).append(obs)
                report.n_accepted += 1
            else:
                report.n_rejected += 1
                report.reject_reasons[reason] = report.reject_reasons.get(reason, 0) + 1
                rejects.append((list(raw), reason))

    reject_path = path.with_name(path.name + ".rejects.csv")
    with open(reject_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(CSV_HEADER) + ["reason"])
        for raw, reason in rejects:
            writer.writerow(raw + [reason])

    if not rows_by_well:
        raise EmptyDatasetError(f"{path}: no valid observations")
    datasets = [WellDataset.from_observations(rows_by_well[w]) for w in sorted(rows_by_well)]
    return datasets, report


def ingest_csv(path: str | Path) -> list[WellDataset]:
    datasets, _ = ingest_csv_report(path)
    return datasets


def write_csv(path: str | Path, datasets: Iterable[WellDataset]) -> None:
    """Write wells to one CSV in the ingestion schema (merged, time-ordered)."""
    merged = WellDataset.merge(list(datasets))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i in range(len(merged)):
            x = merged.X[i]
            writer.writerow(
                [int(merged.well[i]), _format_float(merged.t[i])]
                + [_format_float(v) for v in x]
                + [_format_float(merged.y[i]), Source(int(merged.source[i])).to_str()]
            )


# --------------------------------------------------------------------- batches


def as_columns(batch) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(t, X, y, well) column arrays from a WellDataset or Observation sequence."""
    if isinstance(batch, WellDataset):
        return batch.t, batch.X, batch.y, batch.well
    obs = list(batch)
    if obs and not isinstance(obs[0], Observation):
        raise TypeError("batch must be a WellDataset or a sequence of Observation")
    t = np.array([o.t for o in obs], dtype=np.float64)
    X = np.array([o.x for o in obs], dtype=np.float64).reshape(len(obs), D_INPUT)
    y = np.array([o.y for o in obs], dtype=np.float64)
    well = np.array([o.well_id for o in obs], dtype=np.int64)
    return t, X, y, well


# ------------------------------------------------------------------------- rng


def substream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Named, reproducible PCG64 substream of one global seed.

    The (name, index) pair maps to a SeedSequence spawn key via CRC-32, so
    distinct names give statistically independent streams and the same name
    always gives the same stream.
    """
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(int(seed), spawn_key=(key, int(index)))
    return np.random.Generator(np.random.PCG64(ss))
