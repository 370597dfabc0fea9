import numpy as np
import pytest

from mrnn import model as M
from mrnn import predictor as PR
from mrnn.dataset import DatasetError, PatientRecord, TemporalDataset, to_batch
from mrnn.numeric import Rng
from mrnn.synth import generate_synthetic


def separable(n=60, T=8, seed=0):
    g = np.random.default_rng(seed)
    recs = []
    for i in range(n):
        v = g.random((T, 2))
        recs.append(PatientRecord(f"p{i:02d}", np.arange(float(T)), v, np.ones((T, 2), bool), (v[:, 0] > 0.5).astype(float)))
    return TemporalDataset(recs, ["a", "b"])


def test_separable_data_is_learned():
    ds = separable()
    head = PR.train_predictor(ds, M.MRnnConfig(epochs=60, learning_rate=0.05, seed=1))
    p = head.predict_proba(ds)
    acc = np.mean(np.concatenate([(p[i, : r.length] > 0.5) == (r.labels > 0.5) for i, r in enumerate(ds.records)]))
    assert acc > 0.95
    assert np.all((p > 0) & (p < 1))


def test_same_seed_same_parameters():
    ds = separable(20)
    cfg = M.MRnnConfig(epochs=5, seed=4)
    a, b = PR.train_predictor(ds, cfg), PR.train_predictor(ds, cfg)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in PR.PREDICTOR_PARAMS)


def test_identical_labels_warn_and_missing_labels_fail():
    ds = separable(6)
    flat = ds.with_records([PatientRecord(r.id, r.stamps, r.values, r.observed, np.zeros(r.length)) for r in ds.records])
    with pytest.warns(UserWarning, match="identical"):
        PR.train_predictor(flat, M.MRnnConfig(epochs=1))
    bare = ds.with_records([PatientRecord(r.id, r.stamps, r.values, r.observed) for r in ds.records])
    with pytest.raises(DatasetError):
        PR.train_predictor(bare, M.MRnnConfig(epochs=1))


def test_external_masks_change_features():
    ds = separable(4)
    head = PR.train_predictor(ds, M.MRnnConfig(epochs=2))
    masks = [np.zeros((r.length, 2)) for r in ds.records]
    assert not np.array_equal(head.predict_proba(ds), head.predict_proba(ds, masks=masks))


def test_cross_entropy_gradient_check():
    ds = generate_synthetic(6, 3, 5, label_weights=[2, -1, 1], rng=1, missing_rate=0.3)
    cfg = M.MRnnConfig(hidden_size=4, keep_p=1.0, loss_mode="cross-entropy", impute_width=2)
    params = M.init_params(3, cfg, Rng(0).child("init"))
    params.update(PR.init_predictor(6, 4, Rng(3)))
    b = to_batch(ds.records, 3)
    _, g = PR.cross_entropy_loss_and_grads(params, b, cfg)
    frozen = M.frozen_masks(3, 2, cfg.ablation)
    r = np.random.default_rng(0)
    h = 1e-5
    for k in sorted(params):
        for _ in range(2):
            i = tuple(r.integers(0, s) for s in params[k].shape)
            if k in frozen and frozen[k][i]:
                continue
            up = {kk: v.copy() for kk, v in params.items()}
            dn = {kk: v.copy() for kk, v in params.items()}
            up[k][i] += h
            dn[k][i] -= h
            fd = (PR.cross_entropy_loss_and_grads(up, b, cfg)[0] - PR.cross_entropy_loss_and_grads(dn, b, cfg)[0]) / (2 * h)
            assert abs(fd - g[k][i]) <= 1e-4 * max(abs(fd), abs(g[k][i]), 1e-6), k


def test_prediction_oriented_memorises_tiny_data():
    tiny = generate_synthetic(4, 3, 5, rng=3, missing_rate=0.2, label_weights=[4, -4, 2])
    cfg = M.MRnnConfig(loss_mode="cross-entropy", keep_p=1.0, epochs=300, learning_rate=0.02, batch_size=4)
    joint = PR.train_prediction_oriented(tiny, cfg)
    assert joint.history[-1] < 0.05
    p = joint.predict_proba(tiny)
    assert np.all((p > 0) & (p < 1))
    assert set(joint.imputer.params) == set(M.init_params(3, cfg, Rng(0)))


def test_prediction_oriented_requires_cross_entropy():
    with pytest.raises(ValueError):
        PR.train_prediction_oriented(separable(4), M.MRnnConfig())


def test_cross_entropy_limit():
    y = np.array([0.0, 1.0, 1.0])
    assert PR.cross_entropy(y, y) < 1e-11
    assert PR.cross_entropy([0.5], [1]) == pytest.approx(np.log(2))
