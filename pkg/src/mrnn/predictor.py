"""Per-stamp label prediction with a single recurrent layer.

``h_t = tanh(W h_{t-1} + V [x_t, m_t] + c)`` and ``p_t = sigmoid(u . h_t + b)``,
trained on the mean cross-entropy over labeled stamps. The same head can be
stacked on the imputation network and trained end to end.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import model as M
from . import tape as tp
from .dataset import Batch, DatasetError, TemporalDataset, to_batch
from .numeric import Rng
from .optim import make_optimizer

PREDICTOR_PARAMS = ("pred_W", "pred_V", "pred_c", "pred_u", "pred_b")


@dataclass
class PredictorParams:
    n_streams: int
    params: dict[str, np.ndarray]
    history: list[float] = field(default_factory=list)

    def predict_proba(self, ds_or_batch, masks=None) -> np.ndarray:
        batch = _as_batch(ds_or_batch, masks)
        return expit(_logits(self.params, _features(batch.x, batch.m)).value)


@dataclass
class PredictionOrientedModel:
    """Imputation network and predictor head trained jointly on cross-entropy."""

    imputer: M.MRnnModel
    head: PredictorParams
    history: list[float] = field(default_factory=list)

    def predict_proba(self, ds: TemporalDataset) -> np.ndarray:
        batch = to_batch(ds.records, ds.n_streams)
        P = {**self.imputer.params, **self.head.params}
        return expit(_end_to_end_logits(P, batch, self.imputer.config, None).value)


def init_predictor(n_inputs: int, hidden: int, rng: Rng) -> dict[str, np.ndarray]:
    bound = 1.0 / np.sqrt(hidden + n_inputs)
    ob = 1.0 / np.sqrt(hidden)
    return {
        "pred_W": rng.uniform(-bound, bound, (hidden, hidden)),
        "pred_V": rng.uniform(-bound, bound, (hidden, n_inputs)),
        "pred_c": rng.uniform(-bound, bound, (hidden,)),
        "pred_u": rng.uniform(-ob, ob, (hidden,)),
        "pred_b": np.zeros(()),
    }


def _features(x, m):
    return tp.concat_last([x, m])


def _logits(P: dict, feats) -> tp.Var:
    """Logits of shape (B, T) from per-stamp features (B, T, F)."""
    XV = tp.matmul_t(feats, P["pred_V"])
    T = XV.shape[1]
    B, H = XV.shape[0], XV.shape[2]
    h = np.zeros((B, H))
    hs = []
    for t in range(T):
        pre = tp.add(tp.add(tp.matmul_t(h, P["pred_W"]), tp.take_step(XV, t)), P["pred_c"])
        h = tp.tanh(pre)
        hs.append(h)
    H_all = tp.stack_axis1(hs)
    return tp.add(tp.sum_last(tp.mul(H_all, P["pred_u"])), P["pred_b"])


def _as_batch(ds_or_batch, masks=None) -> Batch:
    if isinstance(ds_or_batch, Batch):
        return ds_or_batch
    ds = ds_or_batch
    batch = to_batch(ds.records, ds.n_streams)
    if masks is not None:
        m = np.zeros_like(batch.m)
        for i, mk in enumerate(masks):
            m[i, : mk.shape[0]] = mk
        batch = Batch(batch.x, m, batch.delta, batch.lengths, batch.y, batch.y_mask)
    return batch


def _label_weight(batch: Batch) -> np.ndarray:
    return batch.y_mask * batch.valid


def _check_labels(ds: TemporalDataset):
    if not ds.has_labels:
        raise DatasetError("labels are required to train a predictor")
    ys = np.concatenate([r.labels[r.label_mask] for r in ds.records if r.labels is not None])
    if np.all(ys == ys[0]):
        warnings.warn("all labels are identical; AUROC will be undefined downstream", stacklevel=3)


def train_predictor(ds: TemporalDataset, config: M.MRnnConfig | None = None, masks=None) -> PredictorParams:
    """Fit the recurrent classifier on a completed dataset.

    The mask features come from ``masks`` (one (T, D) presence array per
    record, e.g. the pre-imputation observation flags) or else from the
    dataset's own flags.
    """
    config = config or M.MRnnConfig()
    _check_labels(ds)
    D = ds.n_streams
    root = Rng(config.seed).child("predictor")
    params = init_predictor(2 * D, config.hidden_size, root.child("init"))
    shuffle = root.child("shuffle")
    full = _as_batch(ds, masks)
    opt = make_optimizer(config.optimizer, config.learning_rate)
    out = PredictorParams(D, params)
    for epoch in range(config.epochs):
        total, n = 0.0, 0
        for idx in M.iterate_minibatches(len(ds), config.batch_size, shuffle):
            b = full.take(idx)
            w = _label_weight(b)
            if w.sum() == 0:
                continue
            tape = tp.GradTape()
            P = {k: tape.param(v, name=k) for k, v in params.items()}
            loss = tp.bce_with_logits(_logits(P, _features(b.x, b.m)), b.y, w)
            grads = tape.backward(loss)
            M._check_finite_loss(float(loss.value), epoch, config)
            opt.step(params, {k: grads[v] for k, v in P.items()})
            total += float(loss.value) * w.sum()
            n += w.sum()
        out.history.append(total / max(n, 1.0))
    return out


def _end_to_end_logits(P: dict, batch: Batch, config: M.MRnnConfig, drop):
    _, xhat = M.forward(P, batch, config.ablation, config.keep_p, drop)
    completed = tp.add(tp.mul(xhat, 1.0 - batch.m), batch.m * batch.x)
    return _logits(P, _features(completed, batch.m))


def cross_entropy_loss_and_grads(params: dict, batch: Batch, config: M.MRnnConfig, drop=None):
    """Mean cross-entropy of the stacked model and its gradient for every parameter."""
    tape = tp.GradTape()
    P = {k: tape.param(v, name=k) for k, v in params.items()}
    loss = tp.bce_with_logits(_end_to_end_logits(P, batch, config, drop), batch.y, _label_weight(batch))
    grads = tape.backward(loss)
    out = {k: grads[v] for k, v in P.items()}
    M._enforce_structure(out, config.ablation)
    return float(loss.value), out


def train_prediction_oriented(ds: TemporalDataset, config: M.MRnnConfig | None = None) -> PredictionOrientedModel:
    """Train imputation blocks and predictor head together on label cross-entropy."""
    config = config or M.MRnnConfig(loss_mode=M.LossMode.CROSS_ENTROPY)
    if config.loss_mode != M.LossMode.CROSS_ENTROPY:
        raise ValueError("prediction-oriented training needs loss_mode=cross-entropy")
    _check_labels(ds)
    D = ds.n_streams
    root = Rng(config.seed)
    params = M.init_params(D, config, root.child("init"))
    params.update(init_predictor(2 * D, config.hidden_size, root.child("predictor").child("init")))
    drop_rng, shuffle = root.child("dropout"), root.child("shuffle")
    full = to_batch(ds.records, D)
    opt = make_optimizer(config.optimizer, config.learning_rate)
    history = []
    for epoch in range(config.epochs):
        total, n = 0.0, 0.0
        for idx in M.iterate_minibatches(len(ds), config.batch_size, shuffle):
            b = full.take(idx)
            w = _label_weight(b).sum()
            if w == 0:
                continue
            drop = M._draw_dropout(drop_rng, M.hidden_shape(b, config), config.keep_p)
            loss, grads = cross_entropy_loss_and_grads(params, b, config, drop)
            M._check_finite_loss(loss, epoch, config)
            opt.step(params, grads)
            M._enforce_structure(params, config.ablation)
            total += loss * w
            n += w
        history.append(total / max(n, 1.0))
    imp = {k: v for k, v in params.items() if not k.startswith("pred_")}
    head = {k: v for k, v in params.items() if k.startswith("pred_")}
    imputer = M.MRnnModel(D, config, imp, ds.normalization, list(history))
    return PredictionOrientedModel(imputer, PredictorParams(D, head), history)


def cross_entropy(prob, labels, eps: float = 1e-12) -> float:
    """Mean negative log-likelihood with probabilities clamped to ``[eps, 1 - eps]``."""
    p = np.clip(np.asarray(prob, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
