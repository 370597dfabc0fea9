"""Classical single-stream and mean fills used as comparison arms.

``linear`` and ``spline`` interpolate in actual time and clamp outside the
observed range to the nearest observed value. The two arms correspond to
piecewise-linear and natural-cubic ``interp1``-style interpolation.
"""

from __future__ import annotations

import enum

import numpy as np
from scipy.interpolate import CubicSpline

from .dataset import DatasetError, TemporalDataset
from .model import ImputationResult


class BaselineKind(str, enum.Enum):
    MEAN = "mean"
    LOCF = "locf"
    LINEAR = "linear"
    CUBIC_SPLINE = "spline"
    ZERO = "zero"


def stream_means(ds: TemporalDataset) -> np.ndarray:
    """Observed mean of every stream over all records."""
    s = np.zeros(ds.n_streams)
    c = np.zeros(ds.n_streams)
    for r in ds.records:
        s += np.where(r.observed, r.values, 0.0).sum(axis=0)
        c += r.observed.sum(axis=0)
    if np.any(c == 0):
        names = [ds.stream_names[i] for i in np.flatnonzero(c == 0)]
        raise DatasetError(f"streams never observed: {names}")
    return s / c


def _finish(ds: TemporalDataset, fill_record, method: str) -> ImputationResult:
    recs, filled = [], []
    for r in ds.records:
        miss = ~r.observed
        vals = r.values.copy()
        if miss.any():
            vals = fill_record(r, vals, miss)
        recs.append(r.with_values(np.where(r.observed, r.values, vals), np.ones_like(r.observed)))
        filled.append(miss)
    return ImputationResult(ds.with_records(recs), tuple(filled), method)


def zero_impute(ds: TemporalDataset) -> ImputationResult:
    return _finish(ds, lambda r, v, miss: np.where(miss, 0.0, v), BaselineKind.ZERO.value)


def mean_impute(ds: TemporalDataset, means: np.ndarray | None = None) -> ImputationResult:
    """Fill with per-stream means; pass training-split ``means`` to avoid leakage."""
    mu = stream_means(ds) if means is None else np.asarray(means, dtype=np.float64)
    return _finish(ds, lambda r, v, miss: np.where(miss, mu[None, :], v), BaselineKind.MEAN.value)


def locf_impute(ds: TemporalDataset, means: np.ndarray | None = None) -> ImputationResult:
    """Carry the last observation forward; gaps before the first one take the stream mean."""
    mu = stream_means(ds) if means is None else np.asarray(means, dtype=np.float64)

    def fill(r, v, miss):
        out = v.copy()
        for d in range(r.n_streams):
            last = mu[d]
            for t in range(r.length):
                if r.observed[t, d]:
                    last = r.values[t, d]
                else:
                    out[t, d] = last
        return out

    return _finish(ds, fill, BaselineKind.LOCF.value)


def _per_stream(fn, method, means):
    def run(ds: TemporalDataset) -> ImputationResult:
        mu = stream_means(ds) if means is None else means

        def fill(r, v, miss):
            out = v.copy()
            for d in range(r.n_streams):
                obs = r.observed[:, d]
                if not miss[:, d].any():
                    continue
                if not obs.any():
                    out[miss[:, d], d] = mu[d]
                    continue
                out[miss[:, d], d] = fn(r.stamps[obs], r.values[obs, d], r.stamps[miss[:, d]], mu[d])
            return out

        return _finish(ds, fill, method)

    return run


def _linear(knots_t, knots_v, query, _mean):
    return np.interp(query, knots_t, knots_v)


def natural_spline_eval(knots_t, knots_v, query) -> np.ndarray:
    """Natural cubic spline through the knots, clamped to the end knot values outside them."""
    spline = CubicSpline(knots_t, knots_v, bc_type="natural", extrapolate=False)
    out = spline(query)
    out = np.where(query < knots_t[0], knots_v[0], out)
    out = np.where(query > knots_t[-1], knots_v[-1], out)
    # polynomial evaluation at a knot can be off by an ulp; return the knot itself
    pos = np.clip(np.searchsorted(knots_t, query), 0, knots_t.size - 1)
    hit = knots_t[pos] == query
    return np.where(hit, knots_v[pos], out)


def _spline(knots_t, knots_v, query, mean):
    if knots_t.size < 2:
        return np.full(query.shape, mean)
    return natural_spline_eval(knots_t, knots_v, query)


def linear_interp(ds: TemporalDataset, means: np.ndarray | None = None) -> ImputationResult:
    return _per_stream(_linear, BaselineKind.LINEAR.value, means)(ds)


def cubic_spline_interp(ds: TemporalDataset, means: np.ndarray | None = None) -> ImputationResult:
    """Natural cubic spline per stream; streams with a single knot fall back to the mean."""
    return _per_stream(_spline, BaselineKind.CUBIC_SPLINE.value, means)(ds)


_DISPATCH = {
    BaselineKind.MEAN: mean_impute,
    BaselineKind.LOCF: locf_impute,
    BaselineKind.LINEAR: linear_interp,
    BaselineKind.CUBIC_SPLINE: cubic_spline_interp,
}


def run_baseline(kind, ds: TemporalDataset, means: np.ndarray | None = None) -> ImputationResult:
    kind = BaselineKind(kind)
    if kind == BaselineKind.ZERO:
        return zero_impute(ds)
    return _DISPATCH[kind](ds, means)
