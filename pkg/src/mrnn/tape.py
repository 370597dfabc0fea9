"""Array-level reverse-mode differentiation.

A :class:`GradTape` records each primitive as it runs. :meth:`GradTape.backward`
replays the adjoints in exact reverse order. Primitives operate on whole
numpy arrays, so a batched forward pass costs a few dozen nodes rather than
one node per scalar.

Example
-------
>>> tape = GradTape()
>>> x = tape.param(np.array(3.0))
>>> loss = mul(x, x)
>>> grads = tape.backward(loss)
>>> float(grads[x])
6.0
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit


class TapeError(RuntimeError):
    pass


class Var:
    __slots__ = ("value", "grad", "tape", "is_param", "name")

    def __init__(self, value, tape: "GradTape | None", is_param=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.tape = tape
        self.is_param = is_param
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = self.name or ("param" if self.is_param else "var")
        return f"Var<{tag}>{self.value.shape}"


class GradTape:
    def __init__(self):
        self._ops: list[tuple[Var, tuple, Callable]] = []
        self._params: list[Var] = []
        self._replayed = False

    def param(self, value, name=None) -> Var:
        v = Var(np.array(value, dtype=np.float64), self, is_param=True, name=name)
        self._params.append(v)
        return v

    def const(self, value) -> Var:
        return Var(value, None)

    @property
    def params(self) -> list[Var]:
        return list(self._params)

    def record(self, out: Var, inputs: tuple, backward_fn: Callable) -> Var:
        if self._replayed:
            raise TapeError("tape already replayed; call reset() before recording again")
        out.tape = self
        self._ops.append((out, inputs, backward_fn))
        return out

    def reset(self) -> None:
        self._ops.clear()
        self._params.clear()
        self._replayed = False

    def backward(self, loss: Var) -> dict[Var, np.ndarray]:
        """Accumulate d(loss)/d(param) for every registered parameter."""
        if self._replayed:
            raise TapeError("tape replayed twice without reset")
        if loss.value.size != 1:
            raise TapeError("backward needs a scalar loss")
        self._replayed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        for out, inputs, fn in reversed(self._ops):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, fn(g)):
                if gi is None or not _tracked(inp):
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        result = {}
        for p in self._params:
            p.grad = grads.get(id(p), np.zeros_like(p.value))
            result[p] = p.grad
        return result


def _tracked(v) -> bool:
    return isinstance(v, Var) and v.tape is not None


def _val(v):
    return v.value if isinstance(v, Var) else np.asarray(v, dtype=np.float64)


def _tape_of(*vs) -> GradTape | None:
    for v in vs:
        if _tracked(v):
            return v.tape
    return None


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _emit(value, inputs: Sequence, backward_fn) -> Var:
    tape = _tape_of(*inputs)
    out = Var(value, None)
    if tape is None:
        return out
    return tape.record(out, tuple(inputs), backward_fn)


# ---------------------------------------------------------------- primitives

def add(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _emit(av + bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _emit(av - bv, (a, b), lambda g: (_unbroadcast(g, av.shape), -_unbroadcast(g, bv.shape)))


def mul(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _emit(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def matmul_t(x, W) -> Var:
    """``x @ W.T`` with ``x`` of shape (..., k) and ``W`` of shape (n, k)."""
    xv, Wv = _val(x), _val(W)

    def back(g):
        gx = g @ Wv
        gW = g.reshape(-1, g.shape[-1]).T @ xv.reshape(-1, xv.shape[-1])
        return gx, gW

    return _emit(xv @ Wv.T, (x, W), back)


def matmul_t_ordered(x, W) -> Var:
    """Same as :func:`matmul_t` but summed column by column in a fixed order.

    BLAS may regroup the reduction depending on memory layout, so a column
    multiplied by an exact zero can still move the result by an ulp. Here a
    zero weight contributes an exact ``+0.0`` whatever the input holds.
    """
    xv, Wv = _val(x), _val(W)
    out = np.zeros(xv.shape[:-1] + (Wv.shape[0],))
    for k in range(Wv.shape[1]):
        out += xv[..., k, None] * Wv[:, k]

    def back(g):
        gx = g @ Wv
        gW = g.reshape(-1, g.shape[-1]).T @ xv.reshape(-1, xv.shape[-1])
        return gx, gW

    return _emit(out, (x, W), back)


def affine(W, b, x) -> Var:
    return add(matmul_t(x, W), b)


def relu(a) -> Var:
    av = _val(a)
    out = np.maximum(av, 0.0)
    return _emit(out, (a,), lambda g: (g * (av > 0),))


def sigmoid(a) -> Var:
    out = expit(_val(a))
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Var:
    out = np.tanh(_val(a))
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def total(a) -> Var:
    av = _val(a)
    return _emit(np.array(av.sum()), (a,), lambda g: (np.broadcast_to(g, av.shape).copy(),))


def concat_last(parts: Sequence) -> Var:
    vals = [_val(p) for p in parts]
    sizes = np.cumsum([v.shape[-1] for v in vals])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=-1))

    return _emit(np.concatenate(vals, axis=-1), tuple(parts), back)


def stack_axis1(parts: Sequence) -> Var:
    """Stack equally shaped (B, k) arrays into (B, len(parts), k)."""
    vals = [_val(p) for p in parts]

    def back(g):
        return tuple(g[:, i] for i in range(len(vals)))

    return _emit(np.stack(vals, axis=1), tuple(parts), back)


def masked_mse(pred, target: np.ndarray, mask: np.ndarray, reduction: str = "sum") -> Var:
    """Per-record masked MSE summed (or averaged) over records.

    ``pred``, ``target`` and ``mask`` have shape (N, T, D). Records without a
    single observed cell are dropped from both the sum and the mean.
    """
    pv = _val(pred)
    counts = mask.sum(axis=(1, 2))
    keep = counts > 0
    denom = np.where(keep, counts, 1.0)[:, None, None]
    err = (pv - target) * mask
    per_record = (err * err).sum(axis=(1, 2)) / denom[:, 0, 0]
    value = per_record[keep].sum()
    scale = 1.0
    if reduction == "mean":
        scale = 1.0 / max(int(keep.sum()), 1)
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")

    def back(g):
        return (g * scale * 2.0 * err / denom * keep[:, None, None],)

    return _emit(np.array(value * scale), (pred,), back)


def binary_cross_entropy(prob, labels: np.ndarray, weight: np.ndarray, eps: float = 1e-12) -> Var:
    """Mean negative log-likelihood over entries with ``weight`` = 1.

    Probabilities are clamped to ``[eps, 1 - eps]``; the clamp only matters for
    saturated outputs.
    """
    pv = _val(prob)
    n = max(float(weight.sum()), 1.0)
    p = np.clip(pv, eps, 1.0 - eps)
    y = np.where(weight > 0, labels, 0.0)
    nll = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)) * weight
    inside = (pv > eps) & (pv < 1.0 - eps)

    def back(g):
        d = (-(y / p) + (1.0 - y) / (1.0 - p)) * weight / n
        return (g * d * inside,)

    return _emit(np.array(nll.sum() / n), (prob,), back)


def custom(value, inputs: Sequence, backward_fn) -> Var:
    """Record a fused primitive whose adjoint is supplied by the caller."""
    return _emit(value, tuple(inputs), backward_fn)


def bce_with_logits(logit, labels: np.ndarray, weight: np.ndarray) -> Var:
    """Same loss as :func:`binary_cross_entropy` evaluated on logits, without clamping."""
    lv = _val(logit)
    n = max(float(weight.sum()), 1.0)
    y = np.where(weight > 0, labels, 0.0)
    nll = (np.logaddexp(0.0, lv) - y * lv) * weight

    def back(g):
        return (g * (expit(lv) - y) * weight / n,)

    return _emit(np.array(nll.sum() / n), (logit,), back)


def reshape(a, shape) -> Var:
    av = _val(a)
    return _emit(av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


def sum_last(a) -> Var:
    av = _val(a)
    return _emit(av.sum(axis=-1), (a,), lambda g: (np.broadcast_to(g[..., None], av.shape).copy(),))


def take_step(a, t: int) -> Var:
    """``a[:, t]`` for an array with a time axis in position 1."""
    av = _val(a)

    def back(g):
        out = np.zeros_like(av)
        out[:, t] = g
        return (out,)

    return _emit(av[:, t], (a,), back)
