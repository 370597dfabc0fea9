"""Scoring of imputations and downstream predictions, and the k-fold benchmark.

RMSE is taken over exactly the cells a :class:`~mrnn.masking.MaskPlan`
removed, in normalised units. AUROC is the normalised Mann-Whitney statistic.
Congeniality compares logistic-regression weights fitted on imputed data with
the weights fitted on the complete data.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from . import baselines as BL
from . import model as M
from .dataset import DatasetError, TemporalDataset, kfold_split, normalize_minmax
from .masking import MaskPlan, correlated_remove, mcar_remove, subsample_patients, subsample_streams, truncate_length
from .numeric import Rng, as_rng

log = logging.getLogger(__name__)

FOLD_COLUMNS = ("method", "setting", "fold", "rmse", "auroc", "mean_bias", "weight_rmse")
SUMMARY_COLUMNS = (
    "setting", "method", "k_folds", "seed", "n_ok",
    "rmse_mean", "rmse_lo", "rmse_hi", "rmse_gain",
    "auroc_mean", "auroc_lo", "auroc_hi", "auroc_gain",
    "mean_bias", "weight_rmse", "error",
)
MRNN_ARMS = {"mrnn": M.Ablation.FULL, "mrnn-interp": M.Ablation.INTERP_ONLY, "mrnn-impute": M.Ablation.IMPUTE_ONLY}
METHODS = tuple(MRNN_ARMS) + tuple(k.value for k in BL.BaselineKind)


class ConvergenceError(RuntimeError):
    pass


# ------------------------------------------------------------------- metrics

def masked_rmse(imputed: TemporalDataset, truth: TemporalDataset, plan: MaskPlan) -> float:
    """Root mean squared difference over the plan's removed cells only."""
    if len(plan) == 0:
        raise ValueError("empty mask plan")
    idx_imp = imputed.record_index()
    idx_true = truth.record_index()
    se = 0.0
    for pid, cells in plan.by_record().items():
        if pid not in idx_true or pid not in idx_imp:
            raise DatasetError(f"plan record {pid} missing from the datasets")
        t, d = np.array(cells).T
        rt = truth.records[idx_true[pid]]
        ri = imputed.records[idx_imp[pid]]
        if not np.all(rt.observed[t, d]):
            raise DatasetError(f"plan cell of {pid} is not observed in the truth")
        diff = ri.values[t, d] - rt.values[t, d]
        se += float(diff @ diff)
    return math.sqrt(se / len(plan))


def auroc(scores, labels) -> float:
    """P(score of a random positive > score of a random negative), ties counted 1/2."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels must have equal length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be binary")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative label")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def fit_logistic(X, y, reg: float = 1e-2, fit_intercept: bool = True, tol: float = 1e-6, max_iter: int = 200_000) -> np.ndarray:
    """Minimise ``mean log-loss + reg/2 * ||w||^2`` by full-batch gradient descent.

    Steps are ``1/L`` for the loss's Lipschitz constant ``L``. The intercept,
    when fitted, is unpenalised and returned last.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be (n, p) and y (n,)")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    n, p = X.shape
    A = np.hstack([X, np.ones((n, 1))]) if fit_intercept else X
    pen = np.full(A.shape[1], reg)
    if fit_intercept:
        pen[-1] = 0.0
    L = np.linalg.eigvalsh(A.T @ A / (4.0 * n)).max() + reg
    w = np.zeros(A.shape[1])
    for it in range(max_iter):
        g = A.T @ (expit(A @ w) - y) / n + pen * w
        if np.linalg.norm(g) < tol:
            return w
        w -= g / L
    raise ConvergenceError(f"logistic fit did not reach gradient norm {tol} in {max_iter} iterations")


def congeniality(w_true, w_hat) -> tuple[float, float]:
    """Per-coordinate mean absolute and root-mean-square weight differences."""
    a = np.asarray(w_true, dtype=np.float64)
    b = np.asarray(w_hat, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"weight shapes differ: {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    return float(diff.mean()), float(np.sqrt(np.mean(diff * diff)))


def percent_gain(reference: float, other: float, higher_is_better: bool = False) -> float:
    """Relative improvement of ``reference`` over ``other``."""
    if higher_is_better:
        return (reference - other) / other
    return (other - reference) / other


def percentile_interval(values, level: float = 0.95) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    a = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(v, [a, 100.0 - a])
    return float(lo), float(hi)


# ------------------------------------------------------------------ settings

@dataclass(frozen=True)
class DegradationSpec:
    """What to do to a dataset before scoring.

    Reductions (``streams``, ``patients``, ``length``) run first; then cells
    are removed either uniformly (``mcar``) or within the ``topk`` streams most
    correlated with the label (``correlated``).
    """

    mcar: float | None = None
    correlated: float | None = None
    topk: int = 4
    streams: int | None = None
    patients: int | None = None
    length: int | None = None

    def __post_init__(self):
        if (self.mcar is None) == (self.correlated is None):
            raise ValueError("a setting needs exactly one of mcar=<rate> or correlated=<rate>")

    @property
    def tag(self) -> str:
        parts = []
        for key in ("streams", "patients", "length"):
            v = getattr(self, key)
            if v is not None:
                parts.append(f"{key}={v}")
        if self.mcar is not None:
            parts.append(f"mcar={self.mcar:g}")
        else:
            parts.append(f"correlated={self.correlated:g}")
            parts.append(f"topk={self.topk}")
        return ",".join(parts)


def parse_setting(text: str) -> DegradationSpec:
    """Parse ``"mcar=0.3"``, ``"correlated=0.3,topk=4"``, ``"streams=5,mcar=0.2"`` and so on."""
    kw = {}
    for tok in text.replace(";", ",").split(","):
        tok = tok.strip()
        if not tok:
            continue
        key, sep, val = tok.partition("=")
        key = key.strip().lower()
        if not sep:
            raise ValueError(f"setting token {tok!r} is not key=value")
        if key in ("mcar", "correlated"):
            kw[key] = float(val)
        elif key in ("topk", "streams", "patients", "length"):
            kw[key] = int(val)
        else:
            raise ValueError(f"unknown setting key {key!r}")
    return DegradationSpec(**kw)


def degrade(ds: TemporalDataset, spec: DegradationSpec, rng: Rng) -> tuple[TemporalDataset, TemporalDataset, MaskPlan]:
    """Return ``(truth, degraded, plan)`` for one setting."""
    truth = ds
    if spec.streams is not None:
        truth = subsample_streams(truth, spec.streams, rng.child("streams"))
    if spec.patients is not None:
        truth = subsample_patients(truth, spec.patients, rng.child("patients"))
    if spec.length is not None:
        truth = truncate_length(truth, spec.length)
    if spec.mcar is not None:
        deg, plan = mcar_remove(truth, spec.mcar, rng.child("cells"))
    else:
        deg, plan = correlated_remove(truth, spec.correlated, spec.topk, rng.child("cells"))
    return truth, deg, plan


def normalize_methods(methods) -> list[str]:
    """Validate method names and drop duplicates (first occurrence wins)."""
    out = []
    for m in methods:
        m = str(m).strip().lower()
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if m in out:
            warnings.warn(f"duplicate method {m!r} ignored", stacklevel=2)
            continue
        out.append(m)
    return out


# ----------------------------------------------------------------- benchmark

@dataclass(frozen=True)
class BenchmarkOptions:
    mrnn: M.MRnnConfig = field(default_factory=M.MRnnConfig)
    reference: str = "mrnn"
    predictor_epochs: int = 30
    predictor_lr: float = 0.01
    score_prediction: bool = True
    score_congeniality: bool = True
    logistic_reg: float = 1e-2


@dataclass
class FoldResult:
    method: str
    setting: str
    fold: int
    rmse: float = math.nan
    auroc: float = math.nan
    mean_bias: float = math.nan
    weight_rmse: float = math.nan
    error: str = ""


@dataclass
class EvalReport:
    """Per-fold metrics of every (method, setting) arm plus the seed and fold count."""

    folds: list[FoldResult]
    methods: list[str]
    settings: list[str]
    k_folds: int
    seed: int
    reference: str

    def rows(self, method: str, setting: str) -> list[FoldResult]:
        return [f for f in self.folds if f.method == method and f.setting == setting]

    def values(self, method: str, setting: str, metric: str = "rmse") -> np.ndarray:
        return np.array([getattr(f, metric) for f in self.rows(method, setting)])

    def mean(self, method: str, setting: str, metric: str = "rmse") -> float:
        v = self.values(method, setting, metric)
        v = v[np.isfinite(v)]
        return float(v.mean()) if v.size else math.nan

    def summary(self) -> list[dict]:
        out = []
        for setting in sorted(self.settings):
            ref_rmse = self.mean(self.reference, setting, "rmse")
            ref_auc = self.mean(self.reference, setting, "auroc")
            for method in sorted(self.methods):
                rows = self.rows(method, setting)
                errors = sorted({r.error for r in rows if r.error})
                row = {"setting": setting, "method": method, "k_folds": self.k_folds, "seed": self.seed,
                       "n_ok": sum(1 for r in rows if not r.error), "error": " | ".join(errors)}
                for metric in ("rmse", "auroc"):
                    v = self.values(method, setting, metric)
                    v = v[np.isfinite(v)]
                    row[f"{metric}_mean"] = float(v.mean()) if v.size else math.nan
                    row[f"{metric}_lo"], row[f"{metric}_hi"] = percentile_interval(v) if v.size else (math.nan, math.nan)
                mu = row["rmse_mean"]
                row["rmse_gain"] = percent_gain(ref_rmse, mu) if np.isfinite(mu) and mu > 0 else math.nan
                au = row["auroc_mean"]
                row["auroc_gain"] = percent_gain(ref_auc, au, higher_is_better=True) if np.isfinite(au) and au > 0 else math.nan
                row["mean_bias"] = self.mean(method, setting, "mean_bias")
                row["weight_rmse"] = self.mean(method, setting, "weight_rmse")
                out.append(row)
        return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.10g}"
    return str(v)


def _write_rows(path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_fold_csv(report: EvalReport, path) -> None:
    rows = sorted(report.folds, key=lambda f: (f.setting, f.method, f.fold))
    _write_rows(path, FOLD_COLUMNS, [vars(f) for f in rows])


def write_summary_csv(report: EvalReport, path) -> None:
    _write_rows(path, SUMMARY_COLUMNS, report.summary())


def _impute(method: str, train: TemporalDataset, target: TemporalDataset, config: M.MRnnConfig):
    """Impute ``target`` with ``method`` fitted on ``train``; also returns the training-fold completion."""
    if method in MRNN_ARMS:
        model = M.train(train, replace(config, ablation=MRNN_ARMS[method]))
        return M.impute_single(model, target), (lambda: M.impute_single(model, train))
    mu = BL.stream_means(train)
    return BL.run_baseline(method, target, mu), (lambda: BL.run_baseline(method, train, mu))


def _labeled_rows(ds: TemporalDataset, complete_in: TemporalDataset | None = None):
    """Stack per-stamp (features, label) rows; rows must be fully observed in ``complete_in``."""
    X, y = [], []
    ref = complete_in or ds
    for r, rr in zip(ds.records, ref.records):
        if r.labels is None:
            continue
        keep = r.label_mask & rr.observed.all(axis=1)
        X.append(r.values[keep])
        y.append(r.labels[keep])
    return np.concatenate(X), np.concatenate(y)


def _prediction_scores(train_imp, test_imp, train_deg, test_deg, opts: BenchmarkOptions, seed: int) -> float:
    from .predictor import train_predictor

    cfg = M.MRnnConfig(hidden_size=opts.mrnn.hidden_size, epochs=opts.predictor_epochs,
                       learning_rate=opts.predictor_lr, seed=seed, batch_size=opts.mrnn.batch_size)
    tr_masks = [r.observed.astype(np.float64) for r in train_deg.records]
    te_masks = [r.observed.astype(np.float64) for r in test_deg.records]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        head = train_predictor(train_imp.dataset, cfg, masks=tr_masks)
    prob = head.predict_proba(test_imp.dataset, masks=te_masks)
    scores, labels = [], []
    for i, r in enumerate(test_imp.dataset.records):
        if r.labels is None:
            continue
        lm = r.label_mask
        scores.append(prob[i, : r.length][lm])
        labels.append(r.labels[lm])
    return auroc(np.concatenate(scores), np.concatenate(labels))


def benchmark_run(
    ds: TemporalDataset,
    methods,
    settings,
    k_folds: int = 5,
    rng: Rng | int | None = None,
    options: BenchmarkOptions | None = None,
) -> EvalReport:
    """k-fold comparison of imputation methods under each degradation setting.

    The dataset is min-max normalised once. Each setting degrades it with the
    ``mask`` sub-stream, so every fold trains on data with the same missingness
    pattern it is tested on. Folds come from the ``split`` sub-stream and each
    method is fitted on the training folds and scored on the held-out fold's
    removed cells. With labels, AUROC of a recurrent predictor trained on the
    imputed training folds and the congeniality of logistic weights are added.
    A failing arm is recorded with its error and the run continues.
    """
    opts = options or BenchmarkOptions()
    rng = as_rng(rng)
    methods = normalize_methods(methods)
    specs = [parse_setting(s) if isinstance(s, str) else s for s in settings]
    if opts.reference not in methods:
        raise ValueError(f"reference method {opts.reference!r} is not among the methods")
    base = ds if ds.normalization is not None else normalize_minmax(ds)
    mrnn_cfg = replace(opts.mrnn, seed=int(rng.child("init").integers(0, 2**31)))
    folds: list[FoldResult] = []
    for spec in specs:
        tag = spec.tag
        truth, deg, plan = degrade(base, spec, rng.child("mask"))
        removed = plan.by_record()
        splits = kfold_split(truth, k_folds, rng.child("split"))
        for fold, (tr, te) in enumerate(splits):
            test_truth, test_deg, train_deg = truth.subset(te), deg.subset(te), deg.subset(tr)
            test_ids = set(test_truth.ids)
            fold_plan = MaskPlan(
                tuple((pid, t, d) for pid in sorted(test_ids & removed.keys()) for t, d in removed[pid]),
                plan.seed, plan.setting,
            )
            w_true = None
            labeled = truth.has_labels
            for method in methods:
                res = FoldResult(method, tag, fold)
                try:
                    test_imp, train_completion = _impute(method, train_deg, test_deg, mrnn_cfg)
                    res.rmse = masked_rmse(test_imp.dataset, test_truth, fold_plan)
                    if labeled and opts.score_prediction:
                        res.auroc = _prediction_scores(train_completion(), test_imp, train_deg, test_deg, opts, mrnn_cfg.seed)
                    if labeled and opts.score_congeniality:
                        if w_true is None:
                            w_true = fit_logistic(*_labeled_rows(test_truth), reg=opts.logistic_reg)
                        w_hat = fit_logistic(*_labeled_rows(test_imp.dataset, test_truth), reg=opts.logistic_reg)
                        res.mean_bias, res.weight_rmse = congeniality(w_true[:-1], w_hat[:-1])
                except Exception as exc:  # noqa: BLE001 - one failing arm must not sink the run
                    res.error = f"{type(exc).__name__}: {exc}"
                    log.warning("arm %s / %s / fold %d failed: %s", method, tag, fold, res.error)
                folds.append(res)
            log.info("setting %s fold %d done", tag, fold)
    return EvalReport(folds, methods, [s.tag for s in specs], k_folds, rng.seed, opts.reference)
