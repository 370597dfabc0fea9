"""Reproducible degradation of datasets, plus the record of what was removed."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import DatasetError, TemporalDataset
from .numeric import Rng


class Setting(str, enum.Enum):
    MCAR = "MCAR"
    STREAM_SUBSET = "STREAM_SUBSET"
    SAMPLE_SUBSET = "SAMPLE_SUBSET"
    LENGTH_TRUNCATE = "LENGTH_TRUNCATE"
    CORRELATED = "CORRELATED"


@dataclass(frozen=True)
class MaskPlan:
    """Cells ``(patient id, time index, stream index)`` removed from a source dataset."""

    removed_cells: tuple[tuple[str, int, int], ...]
    seed: int
    setting: Setting

    def __len__(self):
        return len(self.removed_cells)

    def by_record(self) -> dict[str, list[tuple[int, int]]]:
        out: dict[str, list[tuple[int, int]]] = {}
        for pid, t, d in self.removed_cells:
            out.setdefault(pid, []).append((t, d))
        return out


def apply_plan(ds: TemporalDataset, plan: MaskPlan) -> TemporalDataset:
    """Mark every planned cell missing; fails if a cell was not observed."""
    cells = plan.by_record()
    index = ds.record_index()
    unknown = set(cells) - set(index)
    if unknown:
        raise DatasetError(f"plan references unknown ids: {sorted(unknown)[:5]}")
    recs = list(ds.records)
    for pid, tds in cells.items():
        i = index[pid]
        r = recs[i]
        obs = r.observed.copy()
        t_idx, d_idx = np.array(tds).T
        if np.any(t_idx >= r.length) or np.any(d_idx >= r.n_streams):
            raise DatasetError(f"plan cell outside record {pid}")
        if not np.all(obs[t_idx, d_idx]):
            raise DatasetError(f"plan removes a cell that is already missing in record {pid}")
        obs[t_idx, d_idx] = False
        recs[i] = r.with_values(r.values, obs)
    return ds.with_records(recs)


def _observed_cells(ds: TemporalDataset, streams=None) -> list[tuple[str, int, int]]:
    cells = []
    for r in ds.records:
        obs = r.observed
        if streams is not None:
            keep = np.zeros(r.n_streams, dtype=bool)
            keep[list(streams)] = True
            obs = obs & keep[None, :]
        for t, d in zip(*np.nonzero(obs)):
            cells.append((r.id, int(t), int(d)))
    return cells


def _remove(ds, rate, rng: Rng, setting, streams=None):
    if not 0.0 < rate < 1.0:
        raise ValueError(f"rate must lie in (0, 1), got {rate}")
    cells = _observed_cells(ds, streams)
    n_remove = int(np.floor(rate * len(cells)))
    # a prefix of one permutation: same seed, higher rate -> superset plan
    picks = rng.permutation(len(cells))[:n_remove]
    removed = tuple(sorted(cells[i] for i in picks))
    plan = MaskPlan(removed, rng.seed, setting)
    out = apply_plan(ds, plan)
    emptied = [r.id for r in out.records if r.length and not r.observed.any()]
    if emptied:
        warnings.warn(f"{len(emptied)} record(s) lost every observation, e.g. {emptied[0]}", stacklevel=3)
    return out, plan


def mcar_remove(ds: TemporalDataset, rate: float, rng: Rng) -> tuple[TemporalDataset, MaskPlan]:
    """Remove ``floor(rate * observed)`` observed cells uniformly without replacement."""
    return _remove(ds, rate, rng, Setting.MCAR)


def subsample_streams(ds: TemporalDataset, d_keep: int, rng: Rng) -> TemporalDataset:
    D = ds.n_streams
    if not 2 <= d_keep <= D:
        raise ValueError(f"d_keep must lie in [2, {D}], got {d_keep}")
    if d_keep == D:
        return ds
    keep = np.sort(rng.choice(D, size=d_keep, replace=False))
    recs = [r.with_values(r.values[:, keep], r.observed[:, keep]) for r in ds.records]
    norm = None if ds.normalization is None else ds.normalization[keep]
    return TemporalDataset(recs, [ds.stream_names[i] for i in keep], norm)


def subsample_patients(ds: TemporalDataset, n_keep: int, rng: Rng) -> TemporalDataset:
    N = len(ds)
    if not 1 <= n_keep <= N:
        raise ValueError(f"n_keep must lie in [1, {N}], got {n_keep}")
    if n_keep == N:
        return ds
    return ds.subset(np.sort(rng.choice(N, size=n_keep, replace=False)))


def truncate_length(ds: TemporalDataset, t_keep: int) -> TemporalDataset:
    if t_keep < 1:
        raise ValueError("t_keep must be at least 1")
    recs = []
    for r in ds.records:
        if r.length <= t_keep:
            recs.append(r)
            continue
        labels = None if r.labels is None else r.labels[:t_keep]
        recs.append(type(r)(r.id, r.stamps[:t_keep], r.values[:t_keep], r.observed[:t_keep], labels))
    return ds.with_records(recs)


def feature_label_correlation(ds: TemporalDataset) -> np.ndarray:
    """Pearson correlation of each stream with the co-timed label over observed, labeled cells."""
    if not ds.has_labels:
        raise DatasetError("dataset has no labels")
    D = ds.n_streams
    xs = [[] for _ in range(D)]
    ys = [[] for _ in range(D)]
    for r in ds.records:
        if r.labels is None:
            continue
        lm = r.label_mask
        for d in range(D):
            sel = r.observed[:, d] & lm
            xs[d].append(r.values[sel, d])
            ys[d].append(r.labels[sel])
    out = np.empty(D)
    for d in range(D):
        x = np.concatenate(xs[d])
        y = np.concatenate(ys[d])
        if x.size < 2:
            raise DatasetError(f"stream {ds.stream_names[d]} has fewer than 2 labeled observations")
        xc, yc = x - x.mean(), y - y.mean()
        den = np.sqrt((xc @ xc) * (yc @ yc))
        out[d] = 0.0 if den == 0 else (xc @ yc) / den
    return out


def top_correlated_streams(ds: TemporalDataset, top_k: int) -> np.ndarray:
    """Indices of the ``top_k`` streams by |correlation|; ties go to the lower index."""
    score = np.abs(feature_label_correlation(ds))
    order = sorted(range(ds.n_streams), key=lambda d: (-score[d], d))
    return np.array(sorted(order[:top_k]), dtype=np.int64)


def correlated_remove(ds: TemporalDataset, rate: float, top_k: int, rng: Rng) -> tuple[TemporalDataset, MaskPlan]:
    """MCAR removal restricted to the streams most correlated with the label.

    ``rate`` is relative to the observed cells of the selected streams.
    """
    if not 1 <= top_k <= ds.n_streams:
        raise ValueError(f"top_k must lie in [1, {ds.n_streams}]")
    streams = top_correlated_streams(ds, top_k)
    setting = Setting.CORRELATED
    if top_k == ds.n_streams:
        streams = None
    return _remove(ds, rate, rng, setting, streams)


# ------------------------------------------------------------------- plan I/O

def write_plan(plan: MaskPlan, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# seed={plan.seed} setting={plan.setting.value}\n")
        fh.write("id,t_index,stream\n")
        for pid, t, d in plan.removed_cells:
            fh.write(f"{pid},{t},{d}\n")


def read_plan(path) -> MaskPlan:
    seed, setting = None, None
    cells = []
    with Path(path).open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    if key == "seed":
                        seed = int(val)
                    elif key == "setting":
                        setting = Setting(val)
                continue
            if not line or line == "id,t_index,stream":
                continue
            parts = line.rsplit(",", 2)
            if len(parts) != 3:
                raise DatasetError(f"{path}:{n}: expected id,t_index,stream")
            cells.append((parts[0], int(parts[1]), int(parts[2])))
    if seed is None or setting is None:
        raise DatasetError(f"{path}: missing '# seed=... setting=...' comment line")
    if len(set(cells)) != len(cells):
        raise DatasetError(f"{path}: duplicate cells")
    return MaskPlan(tuple(cells), seed, setting)
