"""Irregular multivariate time-series records, CSV I/O and derived inputs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .numeric import Rng


class DatasetError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass(frozen=True, eq=False)
class PatientRecord:
    """One patient's stamps, measurements and optional per-stamp labels.

    ``values`` holds 0.0 wherever ``observed`` is False; the flag, not the
    number, marks a cell as missing. ``labels`` is NaN for unlabeled stamps.
    """

    id: str
    stamps: np.ndarray
    values: np.ndarray
    observed: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        stamps = np.asarray(self.stamps, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        observed = np.asarray(self.observed, dtype=bool)
        if values.ndim != 2 or values.shape != observed.shape or values.shape[0] != stamps.shape[0]:
            raise DatasetError(f"record {self.id}: inconsistent shapes")
        if stamps.size and np.any(np.diff(stamps) <= 0):
            raise DatasetError(f"record {self.id}: stamps must be strictly increasing")
        if not np.all(np.isfinite(values[observed])):
            raise DatasetError(f"record {self.id}: non-finite observed value")
        values = np.where(observed, values, 0.0)
        object.__setattr__(self, "stamps", stamps)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.float64)
            if labels.shape != stamps.shape:
                raise DatasetError(f"record {self.id}: label length mismatch")
            object.__setattr__(self, "labels", labels)
        for arr in (self.stamps, self.values, self.observed, self.labels):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def length(self) -> int:
        return int(self.stamps.shape[0])

    @property
    def n_streams(self) -> int:
        return int(self.values.shape[1])

    @property
    def label_mask(self) -> np.ndarray:
        if self.labels is None:
            return np.zeros(self.length, dtype=bool)
        return ~np.isnan(self.labels)

    def with_values(self, values, observed) -> "PatientRecord":
        return replace(self, values=values, observed=observed)


@dataclass(frozen=True, eq=False)
class TemporalDataset:
    records: tuple[PatientRecord, ...]
    stream_names: tuple[str, ...]
    # per-stream (min, max) when the values have been min-max scaled
    normalization: np.ndarray | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "stream_names", tuple(self.stream_names))
        D = len(self.stream_names)
        for r in self.records:
            if r.n_streams != D:
                raise DatasetError(f"record {r.id} has {r.n_streams} streams, expected {D}")

    def __len__(self):
        return len(self.records)

    @property
    def n_streams(self) -> int:
        return len(self.stream_names)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    @property
    def has_labels(self) -> bool:
        return any(r.labels is not None and r.label_mask.any() for r in self.records)

    def n_observed(self) -> int:
        return int(sum(r.observed.sum() for r in self.records))

    def subset(self, indices: Sequence[int]) -> "TemporalDataset":
        return replace(self, records=tuple(self.records[i] for i in indices))

    def with_records(self, records) -> "TemporalDataset":
        return replace(self, records=tuple(records))

    def record_index(self) -> dict[str, int]:
        return {r.id: i for i, r in enumerate(self.records)}


# ------------------------------------------------------------------------ CSV

def _parse_float(text: str, path, line: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DatasetError(f"{path}:{line}: cannot parse {column}={text!r}") from None
    if not math.isfinite(v):
        raise DatasetError(f"{path}:{line}: non-finite {column}={text!r}")
    return v


def parse_csv(path) -> TemporalDataset:
    """Read the ``id,time,label,<streams...>`` layout into a dataset.

    Each id's stamps are shifted so its first observation is at 0. Records
    keep the order in which ids first appear.
    """
    path = Path(path)
    rows: dict[str, list[tuple[float, int, str, list[str]]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if len(header) < 4 or [h.strip() for h in header[:3]] != ["id", "time", "label"]:
            raise DatasetError(f"{path}:1: header must start with id,time,label and name at least one stream")
        streams = [h.strip() for h in header[3:]]
        width = len(header)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != width:
                raise DatasetError(f"{path}:{line}: expected {width} fields, found {len(row)}")
            pid = row[0]
            t = _parse_float(row[1], path, line, "time")
            rows.setdefault(pid, []).append((t, line, row[2].strip(), row[3:]))

    records = []
    for pid, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        times = [e[0] for e in entries]
        for a, b in zip(entries, entries[1:]):
            if b[0] == a[0]:
                raise DatasetError(f"{path}:{b[1]}: duplicate (id, time) = ({pid}, {b[0]!r})")
        T, D = len(entries), len(streams)
        values = np.zeros((T, D))
        observed = np.zeros((T, D), dtype=bool)
        labels = np.full(T, np.nan)
        for i, (_, line, lab, fields) in enumerate(entries):
            if lab:
                if lab not in ("0", "1"):
                    raise DatasetError(f"{path}:{line}: label must be empty, 0 or 1, got {lab!r}")
                labels[i] = float(lab)
            for j, text in enumerate(fields):
                text = text.strip()
                if text:
                    values[i, j] = _parse_float(text, path, line, streams[j])
                    observed[i, j] = True
        stamps = np.asarray(times) - times[0]
        has_labels = not np.all(np.isnan(labels))
        records.append(PatientRecord(pid, stamps, values, observed, labels if has_labels else None))
    return TemporalDataset(records, streams)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(ds: TemporalDataset, path) -> None:
    """Write rows sorted by (id, time) with shortest round-trip floats."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "time", "label", *ds.stream_names])
        for rec in sorted(ds.records, key=lambda r: r.id):
            for t in range(rec.length):
                lab = ""
                if rec.labels is not None and not np.isnan(rec.labels[t]):
                    lab = str(int(rec.labels[t]))
                cells = [_fmt(rec.values[t, d]) if rec.observed[t, d] else "" for d in range(rec.n_streams)]
                w.writerow([rec.id, _fmt(rec.stamps[t]), lab, *cells])


# -------------------------------------------------------------- normalization

def stream_minmax(ds: TemporalDataset) -> np.ndarray:
    D = ds.n_streams
    lo = np.full(D, np.inf)
    hi = np.full(D, -np.inf)
    for r in ds.records:
        if r.length:
            lo = np.minimum(lo, np.where(r.observed, r.values, np.inf).min(axis=0))
            hi = np.maximum(hi, np.where(r.observed, r.values, -np.inf).max(axis=0))
    missing = ~np.isfinite(lo)
    if missing.any():
        names = [ds.stream_names[i] for i in np.flatnonzero(missing)]
        raise DatasetError(f"streams never observed: {names}")
    return np.stack([lo, hi], axis=1)


def apply_minmax(ds: TemporalDataset, bounds: np.ndarray) -> TemporalDataset:
    lo, hi = bounds[:, 0], bounds[:, 1]
    span = hi - lo
    scale = np.where(span > 0, span, 1.0)
    recs = []
    for r in ds.records:
        v = np.where(span > 0, (r.values - lo) / scale, 0.0)
        recs.append(r.with_values(np.where(r.observed, v, 0.0), r.observed))
    return replace(ds, records=tuple(recs), normalization=np.array(bounds, dtype=np.float64))


def normalize_minmax(ds: TemporalDataset) -> TemporalDataset:
    """Scale each stream's observed values to [0, 1]; constant streams map to 0."""
    return apply_minmax(ds, stream_minmax(ds))


def denormalize(ds: TemporalDataset) -> TemporalDataset:
    if ds.normalization is None:
        return ds
    lo, hi = ds.normalization[:, 0], ds.normalization[:, 1]
    span = hi - lo
    recs = []
    for r in ds.records:
        v = np.where(span > 0, r.values * span + lo, lo)
        recs.append(r.with_values(np.where(r.observed, v, 0.0), r.observed))
    return replace(ds, records=tuple(recs), normalization=None)


# ------------------------------------------------------------- mask and delta

@dataclass(frozen=True)
class MaskDelta:
    mask: np.ndarray
    delta: np.ndarray


def compute_mask_delta(rec: PatientRecord) -> MaskDelta:
    """Presence mask and elapsed time since each stream's previous measurement."""
    m = rec.observed.astype(np.float64)
    T, D = m.shape
    delta = np.zeros((T, D))
    gaps = np.diff(rec.stamps)
    for t in range(1, T):
        delta[t] = gaps[t - 1] + np.where(m[t - 1] == 0, delta[t - 1], 0.0)
    return MaskDelta(m, delta)


# ---------------------------------------------------------------------- folds

def kfold_split(ds: TemporalDataset, k: int, rng: Rng) -> list[tuple[np.ndarray, np.ndarray]]:
    """Patient-level k-fold partition; returns (train_idx, test_idx) pairs."""
    n = len(ds)
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of patients ({n})")
    order = rng.permutation(n)
    folds = np.array_split(order, k)
    out = []
    for i in range(k):
        test = np.sort(folds[i])
        train = np.sort(np.concatenate([folds[j] for j in range(k) if j != i]))
        out.append((train, test))
    return out


# -------------------------------------------------------------------- padding

@dataclass(frozen=True)
class Batch:
    """Zero-padded arrays for a group of records.

    ``x`` carries 0 in missing and padded cells; ``m`` is 0 there too.
    """

    x: np.ndarray        # (B, T, D)
    m: np.ndarray        # (B, T, D)
    delta: np.ndarray    # (B, T, D)
    lengths: np.ndarray  # (B,)
    y: np.ndarray        # (B, T), 0 where unlabeled
    y_mask: np.ndarray   # (B, T)

    def __len__(self):
        return int(self.lengths.shape[0])

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx)
        T = max(int(self.lengths[idx].max()), 1) if idx.size else 1
        return Batch(
            self.x[idx, :T], self.m[idx, :T], self.delta[idx, :T],
            self.lengths[idx], self.y[idx, :T], self.y_mask[idx, :T],
        )

    @property
    def valid(self) -> np.ndarray:
        T = self.x.shape[1]
        return np.arange(T)[None, :] < self.lengths[:, None]


def to_batch(records: Sequence[PatientRecord], n_streams: int | None = None) -> Batch:
    if n_streams is None:
        n_streams = records[0].n_streams
    B = len(records)
    T = max([r.length for r in records] + [1])
    x = np.zeros((B, T, n_streams))
    m = np.zeros((B, T, n_streams))
    delta = np.zeros((B, T, n_streams))
    y = np.zeros((B, T))
    ym = np.zeros((B, T))
    lengths = np.zeros(B, dtype=np.int64)
    for i, r in enumerate(records):
        L = r.length
        md = compute_mask_delta(r)
        x[i, :L] = r.values
        m[i, :L] = md.mask
        delta[i, :L] = md.delta
        lengths[i] = L
        if r.labels is not None:
            lm = r.label_mask
            y[i, :L] = np.where(lm, np.nan_to_num(r.labels), 0.0)
            ym[i, :L] = lm
    return Batch(x, m, delta, lengths, y, ym)
