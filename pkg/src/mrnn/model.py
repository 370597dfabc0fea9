"""Multi-directional recurrent imputation network.

Two stacked blocks estimate every cell without looking at that cell:

* interpolation, per stream: a bidirectional ReLU recurrence whose forward
  state at step t reads inputs from t-1 and whose backward state reads from
  t+1 (see :mod:`mrnn.kernels`);
* imputation, across streams at one stamp:
  ``h = relu(U x + V [x_interp, m] + beta)``, ``x_hat = sigmoid(W h + alpha)``.
  The hidden layer holds ``impute_width`` units per stream. Group d never reads
  ``x[d]`` or its presence flag (those entries of ``U`` and ``V`` are frozen at
  zero) and ``W`` is block-diagonal, so the estimate of stream d never depends
  on the value it replaces. With width 1 this is the square ``D x D`` layer with
  zero-diagonal ``U`` and diagonal ``W``.

Missing inputs are zero-filled; the mask and elapsed-time channels carry the
missingness. Dropout zeroes hidden units of the imputation layer while
training and when sampling multiple imputations; deterministic inference
scales the hidden layer by ``keep_p`` instead.
"""

from __future__ import annotations

import enum
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from . import tape as tp
from .dataset import Batch, DatasetError, TemporalDataset, to_batch
from .numeric import Rng, dropout_mask
from .optim import make_optimizer

log = logging.getLogger(__name__)

ARCHIVE_FORMAT = "mrnn-archive"
ARCHIVE_VERSION = 1

INTERP_PARAMS = kernels.PARAM_NAMES
IMPUTE_PARAMS = ("imp_U", "imp_V", "imp_beta", "imp_w", "imp_alpha")


class LossMode(str, enum.Enum):
    MSE = "mse"
    CROSS_ENTROPY = "cross-entropy"


class Ablation(str, enum.Enum):
    FULL = "full"
    INTERP_ONLY = "interp-only"
    IMPUTE_ONLY = "impute-only"


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class MRnnConfig:
    hidden_size: int = 8
    keep_p: float = 0.9
    learning_rate: float = 0.005
    epochs: int = 150
    batch_size: int = 32
    seed: int = 0
    loss_mode: LossMode = LossMode.MSE
    ablation: Ablation = Ablation.FULL
    mi_draws: int = 5
    optimizer: str = "adam"
    impute_width: int = 4

    def __post_init__(self):
        object.__setattr__(self, "loss_mode", LossMode(self.loss_mode))
        object.__setattr__(self, "ablation", Ablation(self.ablation))
        if not 0.0 < self.keep_p <= 1.0:
            raise ValueError("keep_p must lie in (0, 1]")
        if self.mi_draws < 1:
            raise ValueError("mi_draws must be at least 1")
        if self.impute_width < 1:
            raise ValueError("impute_width must be positive")
        if self.hidden_size < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("hidden_size and batch_size must be positive, epochs non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_mode"] = self.loss_mode.value
        d["ablation"] = self.ablation.value
        return d


@dataclass
class MRnnModel:
    n_streams: int
    config: MRnnConfig
    params: dict[str, np.ndarray]
    normalization: np.ndarray | None = None
    history: list[float] = field(default_factory=list)

    @property
    def uses_interp(self) -> bool:
        return self.config.ablation != Ablation.IMPUTE_ONLY

    @property
    def uses_impute(self) -> bool:
        return self.config.ablation != Ablation.INTERP_ONLY


@dataclass(frozen=True, eq=False)
class ImputationResult:
    """A completed dataset; ``filled[i]`` flags the cells of record i that were estimated."""

    dataset: TemporalDataset
    filled: tuple[np.ndarray, ...]
    method: str
    seed: int | None = None
    draw: int | None = None


# ----------------------------------------------------------- initialisation

def interp_param_count(n_streams: int, hidden: int) -> int:
    h = hidden
    return n_streams * (2 * h * h + 6 * h + 2 * h + 1 + 2 * h)


def init_params(n_streams: int, config: MRnnConfig, rng: Rng) -> dict[str, np.ndarray]:
    D, H = n_streams, config.hidden_size
    shapes, fan_in = {}, {}
    if config.ablation != Ablation.IMPUTE_ONLY:
        for side in ("fw", "bw"):
            shapes[f"{side}_W"] = (D, H, H)
            shapes[f"{side}_V"] = (D, H, 3)
            shapes[f"{side}_c"] = (D, H)
            shapes[f"{side}_U"] = (D, H)
            for s in "WVc":
                fan_in[f"{side}_{s}"] = H + 3
            fan_in[f"{side}_U"] = 2 * H
        shapes["out_c"] = (D,)
        fan_in["out_c"] = 2 * H
    if config.ablation != Ablation.INTERP_ONLY:
        G = config.impute_width
        shapes.update(imp_U=(D * G, D), imp_V=(D * G, 2 * D), imp_beta=(D * G,), imp_w=(D, G), imp_alpha=(D,))
        fan_in.update(imp_U=3 * D, imp_V=3 * D, imp_beta=3 * D, imp_w=G, imp_alpha=G)
    params = {}
    for name in sorted(shapes):
        bound = 1.0 / np.sqrt(fan_in[name])
        params[name] = rng.uniform(-bound, bound, shapes[name])
    if "out_c" in params:
        # ReLU output: start every stream inside the live region of [0, 1]
        params["out_c"] += 0.5
    _enforce_structure(params, config.ablation)
    return params


def frozen_masks(D: int, G: int, ablation: Ablation) -> dict[str, np.ndarray]:
    """Entries that must stay exactly zero so no estimate sees its own cell."""
    own = np.repeat(np.eye(D, dtype=bool), G, axis=0)  # (D*G, D): row group d, column d
    v = np.zeros((D * G, 2 * D), dtype=bool)
    v[:, D:] = own  # own presence flag: always 1 on training targets, 0 at inference
    if ablation == Ablation.IMPUTE_ONLY:
        v[:, :D] = own  # without interpolation this block carries x itself
    return {"imp_U": own, "imp_V": v}


def _enforce_structure(arrays: dict, ablation: Ablation) -> None:
    if "imp_U" not in arrays:
        return
    D = arrays["imp_U"].shape[1]
    G = arrays["imp_U"].shape[0] // D
    for k, frozen in frozen_masks(D, G, ablation).items():
        arrays[k][frozen] = 0.0


# -------------------------------------------------------------- forward pass

def _stack_inputs(batch: Batch) -> np.ndarray:
    return np.stack([batch.x, batch.m, batch.delta], axis=-1)


def _interp_op(P: dict, z: np.ndarray, lengths: np.ndarray):
    ws = [P[k] for k in INTERP_PARAMS]
    vals = [w.value if isinstance(w, tp.Var) else w for w in ws]
    xt, hf, hb = kernels.scan_forward(z, lengths, *vals)

    def back(g):
        return kernels.scan_backward(g, z, lengths, xt, hf, hb, *vals)

    return tp.custom(xt, ws, back)


def _impute_op(P: dict, x: np.ndarray, xt, m: np.ndarray, drop: np.ndarray | None, keep_p: float):
    zin = tp.concat_last([xt, m])
    # fixed-order sums keep every estimate bitwise independent of its own cell
    pre = tp.add(tp.add(tp.matmul_t_ordered(x, P["imp_U"]), tp.matmul_t_ordered(zin, P["imp_V"])), P["imp_beta"])
    h = tp.relu(pre)
    h = tp.mul(h, drop) if drop is not None else tp.mul(h, keep_p)
    D, G = P["imp_w"].shape
    grouped = tp.reshape(h, h.shape[:-1] + (D, G))
    return tp.sigmoid(tp.add(tp.sum_last(tp.mul(grouped, P["imp_w"])), P["imp_alpha"]))



def forward(P: dict, batch: Batch, ablation: Ablation, keep_p: float, drop: np.ndarray | None = None):
    """Return ``(x_interp, x_hat)`` for a padded batch; values may be tape vars."""
    valid = batch.valid[:, :, None].astype(np.float64)
    if ablation != Ablation.IMPUTE_ONLY:
        xt = _interp_op(P, _stack_inputs(batch), batch.lengths)
    else:
        xt = batch.x
    if ablation == Ablation.INTERP_ONLY:
        return xt, xt
    xhat = _impute_op(P, batch.x, xt, batch.m, drop, keep_p)
    return xt, tp.mul(xhat, valid)


def interp_forward(params: dict, z: np.ndarray, lengths=None) -> np.ndarray:
    """Interpolation block on ``z`` of shape (B, T, D, 3); returns (B, T, D)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 4 or z.shape[-1] != 3:
        raise ValueError("z must have shape (B, T, D, 3)")
    if z.shape[1] == 0:
        raise ValueError("sequence length must be positive")
    if lengths is None:
        lengths = np.full(z.shape[0], z.shape[1], dtype=np.int64)
    xt, _, _ = kernels.scan_forward(z, np.asarray(lengths, dtype=np.int64), *[params[k] for k in INTERP_PARAMS])
    return xt


def impute_forward(params: dict, x, x_interp, m, drop=None, keep_p: float = 1.0) -> np.ndarray:
    """Imputation block on (..., D) arrays; ``drop`` is a keep mask over the (..., D*G) hidden units."""
    x, x_interp, m = (np.asarray(a, dtype=np.float64) for a in (x, x_interp, m))
    D = params["imp_U"].shape[1]
    if not (x.shape[-1] == x_interp.shape[-1] == m.shape[-1] == D):
        raise ValueError(f"imputation block expects {D} streams")
    return _impute_op(params, x, x_interp, m, drop, keep_p).value


def masked_mse_loss(predictions, dataset) -> float:
    """Per-record ``sum m (x_hat - x)^2 / sum m``, summed over records.

    ``predictions`` is an (N, T, D) array aligned with ``to_batch(dataset)``
    (or a Batch may be passed directly).
    """
    batch = dataset if isinstance(dataset, Batch) else to_batch(dataset.records, dataset.n_streams)
    pred = np.asarray(predictions, dtype=np.float64)
    if pred.shape != batch.x.shape:
        raise ValueError(f"prediction shape {pred.shape} != data shape {batch.x.shape}")
    m = batch.m * batch.valid[:, :, None]
    empty = m.sum(axis=(1, 2)) == 0
    if empty.any():
        warnings.warn(f"{int(empty.sum())} record(s) without observed cells excluded from the loss", stacklevel=2)
    return float(tp.masked_mse(pred, batch.x, m).value)


# ---------------------------------------------------------------------- train

def _tape_params(tape: tp.GradTape, params: dict) -> dict:
    return {k: tape.param(v, name=k) for k, v in params.items()}


def hidden_shape(batch: Batch, config: MRnnConfig) -> tuple:
    return batch.x.shape[:-1] + (batch.x.shape[-1] * config.impute_width,)


def _draw_dropout(rng: Rng, shape, keep_p: float):
    return None if keep_p >= 1.0 else dropout_mask(rng, shape, keep_p)


def loss_and_grads(params: dict, batch: Batch, config: MRnnConfig, drop=None, reduction="mean"):
    """Masked MSE of one batch and its gradient for every parameter."""
    tape = tp.GradTape()
    P = _tape_params(tape, params)
    _, xhat = forward(P, batch, config.ablation, config.keep_p, drop)
    m = batch.m * batch.valid[:, :, None]
    loss = tp.masked_mse(xhat, batch.x, m, reduction=reduction)
    grads = tape.backward(loss)
    out = {k: grads[v] for k, v in P.items()}
    _enforce_structure(out, config.ablation)
    return float(loss.value), out


def _check_finite_loss(loss: float, epoch: int, config: MRnnConfig):
    if not np.isfinite(loss):
        raise TrainingDiverged(
            f"loss became non-finite at epoch {epoch} "
            f"(optimizer={config.optimizer}, lr={config.learning_rate}, hidden={config.hidden_size})"
        )


def iterate_minibatches(n: int, batch_size: int, rng: Rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train(ds: TemporalDataset, config: MRnnConfig | None = None, *, callback=None) -> MRnnModel:
    """Fit both blocks jointly by mini-batch descent on the masked MSE.

    Returns the model; ``model.history`` holds the mean per-record training
    loss of every epoch.
    """
    config = config or MRnnConfig()
    if config.loss_mode != LossMode.MSE:
        raise ValueError("train() optimises the MSE objective; use train_prediction_oriented for cross-entropy")
    if len(ds) == 0:
        raise DatasetError("cannot train on an empty dataset")
    D = ds.n_streams
    root = Rng(config.seed)
    params = init_params(D, config, root.child("init"))
    drop_rng, shuffle_rng = root.child("dropout"), root.child("shuffle")
    full = to_batch(ds.records, D)
    counts = (full.m * full.valid[:, :, None]).sum(axis=(1, 2))
    if np.any(counts == 0):
        warnings.warn(f"{int((counts == 0).sum())} record(s) without observed cells are ignored", stacklevel=2)
    n_eff = max(int((counts > 0).sum()), 1)
    opt = make_optimizer(config.optimizer, config.learning_rate)
    model = MRnnModel(D, config, params, ds.normalization)
    for epoch in range(config.epochs):
        total = 0.0
        for idx in iterate_minibatches(len(ds), config.batch_size, shuffle_rng):
            b = full.take(idx)
            drop = _draw_dropout(drop_rng, hidden_shape(b, config), config.keep_p)
            loss, grads = loss_and_grads(params, b, config, drop, reduction="sum")
            _check_finite_loss(loss, epoch, config)
            n_b = max(int((counts[idx] > 0).sum()), 1)
            for g in grads.values():
                g /= n_b
            opt.step(params, grads)
            _enforce_structure(params, config.ablation)
            total += loss
        model.history.append(total / n_eff)
        if callback is not None:
            callback(epoch, model)
    return model


# -------------------------------------------------------------------- impute

def _check_compatible(model: MRnnModel, ds: TemporalDataset):
    if ds.n_streams != model.n_streams:
        raise DatasetError(f"model expects {model.n_streams} streams, dataset has {ds.n_streams}")


def predict(model: MRnnModel, batch: Batch, drop=None) -> np.ndarray:
    """Estimates for every cell of a batch (hidden layer scaled by keep_p when ``drop`` is None)."""
    P = model.params
    xt, xhat = forward(P, batch, model.config.ablation, model.config.keep_p, drop)
    return np.asarray(xhat.value if isinstance(xhat, tp.Var) else xhat)


def _complete(ds: TemporalDataset, estimates: np.ndarray):
    recs, filled = [], []
    for i, r in enumerate(ds.records):
        est = estimates[i, : r.length]
        vals = np.where(r.observed, r.values, est)
        recs.append(r.with_values(vals, np.ones_like(r.observed)))
        filled.append(~r.observed)
    return ds.with_records(recs), tuple(filled)


def impute_single(model: MRnnModel, ds: TemporalDataset) -> ImputationResult:
    """Deterministic completion: observed cells pass through, missing cells get estimates."""
    _check_compatible(model, ds)
    est = predict(model, to_batch(ds.records, ds.n_streams))
    out, filled = _complete(ds, est)
    return ImputationResult(out, filled, "mrnn", model.config.seed)


def impute_multiple(model: MRnnModel, ds: TemporalDataset, K: int | None = None, rng: Rng | None = None) -> list[ImputationResult]:
    """``K`` completions, each from an independent dropout draw over the imputation layer."""
    _check_compatible(model, ds)
    K = model.config.mi_draws if K is None else K
    if K < 2:
        raise ValueError("multiple imputation needs K >= 2")
    if model.config.keep_p >= 1.0:
        raise ValueError("model was configured with keep_p = 1; dropout draws would be identical")
    if not model.uses_impute:
        raise ValueError("interpolation-only models have no dropout layer")
    rng = rng if rng is not None else Rng(model.config.seed).child("mi")
    batch = to_batch(ds.records, ds.n_streams)
    results = []
    for k in range(K):
        drop = dropout_mask(rng, hidden_shape(batch, model.config), model.config.keep_p)
        out, filled = _complete(ds, predict(model, batch, drop))
        results.append(ImputationResult(out, filled, "mrnn-mi", rng.seed, k))
    return results


def rubin_combine(estimates, variances) -> tuple[float, float]:
    """Pool K per-imputation estimates: mean, and ``W + (1 + 1/K) B``."""
    q = np.asarray(estimates, dtype=np.float64)
    u = np.asarray(variances, dtype=np.float64)
    if q.ndim != 1 or q.shape != u.shape:
        raise ValueError("estimates and variances must be equal-length vectors")
    K = q.size
    if K < 2:
        raise ValueError("Rubin's rule needs at least two imputations")
    within = u.mean()
    between = q.var(ddof=1)
    return float(q.mean()), float(within + (1.0 + 1.0 / K) * between)


# --------------------------------------------------------------- persistence

def _encode_params(params: dict) -> dict:
    return {
        k: {"shape": list(v.shape), "data": [float(x) for x in np.asarray(v).ravel(order="C")]}
        for k, v in sorted(params.items())
    }


def _decode_params(blob: dict) -> dict:
    return {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in blob.items()}


def save_model(model: MRnnModel, path, extra: dict | None = None) -> None:
    doc = {
        "format": ARCHIVE_FORMAT,
        "version": ARCHIVE_VERSION,
        "n_streams": model.n_streams,
        "hidden_size": model.config.hidden_size,
        "keep_p": model.config.keep_p,
        "config": model.config.to_dict(),
        "normalization": None if model.normalization is None else np.asarray(model.normalization).tolist(),
        "params": _encode_params(model.params),
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _expected_shapes(D: int, H: int, G: int, ablation: Ablation) -> dict:
    cfg = MRnnConfig(hidden_size=H, impute_width=G, ablation=ablation)
    return {k: v.shape for k, v in init_params(D, cfg, Rng(0)).items()}


def load_model(path) -> MRnnModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != ARCHIVE_FORMAT:
        raise ValueError(f"{path}: not an M-RNN archive")
    if doc.get("version") != ARCHIVE_VERSION:
        raise ValueError(f"{path}: unsupported archive version {doc.get('version')}")
    cfg = MRnnConfig(**doc["config"])
    D, H = int(doc["n_streams"]), int(doc["hidden_size"])
    if H != cfg.hidden_size or float(doc["keep_p"]) != cfg.keep_p:
        raise ValueError(f"{path}: header disagrees with stored config")
    params = _decode_params(doc["params"])
    expected = _expected_shapes(D, H, cfg.impute_width, cfg.ablation)
    if set(params) != set(expected):
        raise ValueError(f"{path}: parameter set does not match ablation {cfg.ablation.value}")
    for k, shape in expected.items():
        if params[k].shape != shape:
            raise ValueError(f"{path}: {k} has shape {params[k].shape}, expected {shape}")
    norm = doc.get("normalization")
    return MRnnModel(D, cfg, params, None if norm is None else np.asarray(norm, dtype=np.float64))


def with_config(model: MRnnModel, **changes) -> MRnnModel:
    return replace(model, config=replace(model.config, **changes))
