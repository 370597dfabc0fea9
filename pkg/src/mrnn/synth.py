"""Synthetic irregular multivariate series from a coupled VAR(1) process."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .dataset import PatientRecord, TemporalDataset
from .numeric import Rng, as_rng

def var_coefficients(n_streams: int, intra_corr: float, inter_corr: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit-gap transition matrix and stationary covariance of the generator.

    The transition is ``intra * I + inter * (1 - intra) * C`` with ``C`` the
    row-normalised all-pairs coupling ``(J - I) / (D - 1)``. The stationary
    covariance has unit variances and pairwise correlation ``inter``. Both lie
    in the algebra spanned by ``I`` and ``J``, so they commute.
    """
    D = n_streams
    coupling = (np.ones((D, D)) - np.eye(D)) / (D - 1)
    A = intra_corr * np.eye(D) + inter_corr * (1.0 - intra_corr) * coupling
    S = (1.0 - inter_corr) * np.eye(D) + inter_corr * np.ones((D, D))
    return A, S


def _gap_transition(evals, evecs, gap):
    """``A ** gap`` for symmetric ``A``; non-positive modes decorrelate at once."""
    lam = np.where(evals > 0, np.abs(evals) ** gap, 0.0)
    return (evecs * lam) @ evecs.T


def generate_synthetic(
    n_patients: int,
    n_streams: int,
    max_len: int,
    intra_corr: float = 0.7,
    inter_corr: float = 0.4,
    label_weights=None,
    rng: Rng | int | None = None,
    *,
    min_len: int | None = None,
    label_bias: float = 0.0,
    missing_rate: float = 0.0,
    gap_scale: float = 1.0,
    time_coupled: bool = False,
) -> TemporalDataset:
    """Draw ``n_patients`` independent records with values in (0, 1).

    The latent state is a stationary Gaussian VAR(1) with marginal covariance
    ``S``: each step moves it by ``A`` with innovation covariance
    ``S - A S A``. Stamps are cumulative exponential gaps with mean
    ``gap_scale``; they do not drive the process unless ``time_coupled`` is
    set, in which case a gap ``g`` moves the state by ``A ** g`` instead. Values are
    the logistic squash of the state. With ``label_weights``, each stamp gets
    ``y ~ Bernoulli(sigmoid(w . state + label_bias))``. ``missing_rate`` drops
    cells independently as the natural missingness of the source.
    """
    if n_streams < 2:
        raise ValueError("n_streams must be at least 2")
    if not (0.0 <= intra_corr < 1.0 and 0.0 <= inter_corr < 1.0):
        raise ValueError("correlations must lie in [0, 1)")
    if n_patients < 1 or max_len < 1:
        raise ValueError("n_patients and max_len must be positive")
    min_len = max_len if min_len is None else int(min_len)
    if not 1 <= min_len <= max_len:
        raise ValueError("min_len must lie in [1, max_len]")
    if not 0.0 <= missing_rate < 1.0:
        raise ValueError("missing_rate must lie in [0, 1)")

    A, S = var_coefficients(n_streams, intra_corr, inter_corr)
    check_stable(A)
    if label_weights is not None:
        label_weights = np.asarray(label_weights, dtype=np.float64)
        if label_weights.shape != (n_streams,):
            raise ValueError("label_weights must have one entry per stream")

    rng = as_rng(rng)
    r_len, r_state, r_time, r_label, r_miss = (rng.child(n) for n in ("length", "state", "time", "label", "missing"))
    evals, evecs = np.linalg.eigh(A)
    s_chol = np.linalg.cholesky(S)

    D = n_streams
    width = len(str(n_patients))
    records = []
    for n in range(n_patients):
        T = int(r_len.integers(min_len, max_len + 1))
        gaps = r_time.exponential(gap_scale, T - 1)
        traj = np.empty((T, D))
        state = s_chol @ r_state.normal(D)
        traj[0] = state
        for t, g in enumerate(gaps, 1):
            P = _gap_transition(evals, evecs, g if time_coupled else 1.0)
            cov = S - P @ S @ P.T
            noise = np.linalg.cholesky(cov + 1e-12 * np.eye(D)) @ r_state.normal(D)
            state = P @ state + noise
            traj[t] = state
        values = expit(traj)
        stamps = np.concatenate([[0.0], np.cumsum(gaps)])
        observed = r_miss.random((T, D)) >= missing_rate
        labels = None
        if label_weights is not None:
            p = expit(traj @ label_weights + label_bias)
            labels = (r_label.random(T) < p).astype(np.float64)
        records.append(PatientRecord(f"p{n:0{width}d}", stamps, values, observed, labels))
    names = [f"s{d + 1:02d}" for d in range(D)]
    return TemporalDataset(records, names)


def check_stable(A: np.ndarray) -> float:
    radius = float(np.max(np.abs(np.linalg.eigvals(A))))
    if radius >= 1.0:
        raise ValueError(f"unstable process: spectral radius {radius:.4f} >= 1")
    return radius


def lag1_autocorrelation(ds: TemporalDataset) -> np.ndarray:
    """Per-stream Pearson correlation of consecutive observed pairs, pooled over records."""
    D = ds.n_streams
    a = [[] for _ in range(D)]
    b = [[] for _ in range(D)]
    for r in ds.records:
        both = r.observed[1:] & r.observed[:-1]
        for d in range(D):
            a[d].append(r.values[:-1, d][both[:, d]])
            b[d].append(r.values[1:, d][both[:, d]])
    return np.array([np.corrcoef(np.concatenate(a[d]), np.concatenate(b[d]))[0, 1] for d in range(D)])


def cross_stream_correlation(ds: TemporalDataset) -> float:
    """Mean absolute pairwise Pearson correlation across streams at equal stamps."""
    rows = np.concatenate([r.values[r.observed.all(axis=1)] for r in ds.records])
    c = np.corrcoef(rows.T)
    off = c[~np.eye(c.shape[0], dtype=bool)]
    return float(np.mean(np.abs(off)))
