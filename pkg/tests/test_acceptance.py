"""Acceptance gate: one test per primary criterion, each printing a PASS/FAIL line.

The three benchmark criteria (directional, ablation, missing-rate sweep) share
the same synthetic dataset, seed, masks and folds, so the full-model runs are
computed once and reused.
"""

import time

import numpy as np
import pytest

from mrnn import evaluation as E
from mrnn import model as M
from mrnn.cli import main as cli_main
from mrnn.dataset import PatientRecord, compute_mask_delta, to_batch
from mrnn.masking import mcar_remove
from mrnn.numeric import Rng, dropout_mask
from mrnn.predictor import cross_entropy_loss_and_grads, init_predictor
from mrnn.synth import generate_synthetic

from test_dataset import scan_oracle
from test_evaluation import pairwise_auroc

SEED = 42
BASELINES = ["zero", "mean", "locf", "linear", "spline"]
FD_STEP = 1e-5
FD_RTOL = 1e-4
# central differences carry ~1e-10 absolute round-off, so relative error is
# measured against max(|analytic|, |numeric|, FD_FLOOR)
FD_FLOOR = 1e-6
NL = b"\n"


@pytest.fixture(scope="module")
def bench_data():
    return generate_synthetic(500, 10, 20, intra_corr=0.7, inter_corr=0.4, rng=11)


@pytest.fixture(scope="module")
def bench_opts():
    return E.BenchmarkOptions(score_prediction=False, score_congeniality=False)


@pytest.fixture(scope="module")
def directional(bench_data, bench_opts):
    t0 = time.perf_counter()
    rep = E.benchmark_run(bench_data, ["mrnn", *BASELINES], ["mcar=0.3"], 5, SEED, bench_opts)
    return rep, time.perf_counter() - t0


def _random_instance(g):
    D, H, G = int(g.integers(2, 6)), int(g.integers(1, 6)), int(g.integers(1, 4))
    cfg = M.MRnnConfig(hidden_size=H, impute_width=G, keep_p=float(g.uniform(0.3, 1.0)))
    P = M.init_params(D, cfg, Rng(int(g.integers(2**31))))
    P = {k: v * g.uniform(0.5, 3.0) for k, v in P.items()}
    M._enforce_structure(P, cfg.ablation)
    B, T = int(g.integers(1, 4)), int(g.integers(1, 8))
    z = np.stack([g.random((B, T, D)), (g.random((B, T, D)) < 0.6).astype(float), g.exponential(1.0, (B, T, D))], -1)
    lengths = g.integers(1, T + 1, B)
    return cfg, P, z, lengths, D


def test_structural_invariants(criterion):
    g = np.random.default_rng(SEED)
    t0 = time.perf_counter()
    lag_bad = diag_bad = 0
    for _ in range(100):
        cfg, P, z, lengths, D = _random_instance(g)
        B, T = z.shape[:2]
        base = M.interp_forward(P, z, lengths)
        for t in range(T):
            z2 = z.copy()
            z2[:, t] = np.stack([g.random((B, D)), 1.0 - z[:, t, :, 1], g.exponential(3.0, (B, D))], -1)
            lag_bad += int(not np.array_equal(M.interp_forward(P, z2, lengths)[:, t], base[:, t]))
        x, m = z[..., 0], z[..., 1]
        drop = dropout_mask(Rng(int(g.integers(2**31))), x.shape[:-1] + (D * cfg.impute_width,), cfg.keep_p)
        for d in range(D):
            x2 = x.copy()
            x2[..., d] = g.random(x.shape[:-1]) * 5
            for dr in (None, drop):
                a = M.impute_forward(P, x, base, m, dr, cfg.keep_p)[..., d]
                b = M.impute_forward(P, x2, base, m, dr, cfg.keep_p)[..., d]
                diag_bad += int(not np.array_equal(a, b))
    elapsed = time.perf_counter() - t0
    ok = lag_bad == 0 and diag_bad == 0 and elapsed < 10
    criterion("structural invariants", ok, f"lag violations={lag_bad}, diagonal violations={diag_bad}, 100 instances, {elapsed:.2f}s (<10s)")


def _fd_worst(loss_fn, params, grads, frozen, n_coords, g):
    names = sorted(params)
    worst, checked = 0.0, 0
    while checked < n_coords:
        k = names[int(g.integers(len(names)))]
        idx = tuple(int(g.integers(s)) for s in params[k].shape)
        if k in frozen and frozen[k][idx]:
            continue
        up = {kk: v.copy() for kk, v in params.items()}
        dn = {kk: v.copy() for kk, v in params.items()}
        up[k][idx] += FD_STEP
        dn[k][idx] -= FD_STEP
        num = (loss_fn(up) - loss_fn(dn)) / (2 * FD_STEP)
        ana = grads[k][idx]
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), FD_FLOOR))
        checked += 1
    return worst


def test_gradient_correctness(criterion):
    t0 = time.perf_counter()
    ds = generate_synthetic(4, 3, 5, label_weights=[2.0, -1.5, 1.0], rng=SEED, missing_rate=0.3)
    batch = to_batch(ds.records, 3)
    g = np.random.default_rng(SEED)
    cfg = M.MRnnConfig(hidden_size=4, keep_p=0.8, impute_width=2)
    P = M.init_params(3, cfg, Rng(SEED))
    drop = dropout_mask(Rng(SEED + 1), M.hidden_shape(batch, cfg), cfg.keep_p)
    frozen = M.frozen_masks(3, 2, cfg.ablation)
    _, grads = M.loss_and_grads(P, batch, cfg, drop, reduction="sum")
    mse_worst = _fd_worst(lambda p: M.loss_and_grads(p, batch, cfg, drop, "sum")[0], P, grads, frozen, 20, g)

    ce_cfg = M.MRnnConfig(hidden_size=4, keep_p=0.8, impute_width=2, loss_mode="cross-entropy")
    Q = dict(P)
    Q.update(init_predictor(6, 4, Rng(SEED + 2)))
    _, ce_grads = cross_entropy_loss_and_grads(Q, batch, ce_cfg, drop)
    ce_worst = _fd_worst(lambda p: cross_entropy_loss_and_grads(p, batch, ce_cfg, drop)[0], Q, ce_grads, frozen, 20, g)
    elapsed = time.perf_counter() - t0
    ok = mse_worst < FD_RTOL and ce_worst < FD_RTOL and elapsed < 30
    criterion("gradient correctness", ok,
              f"max rel err mse={mse_worst:.2e}, cross-entropy={ce_worst:.2e} (<{FD_RTOL:g}, 20 coords each), {elapsed:.2f}s (<30s)")


def test_delta_recursion(criterion):
    g = np.random.default_rng(SEED)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(1000):
        T, D = int(g.integers(1, 12)), int(g.integers(1, 5))
        stamps = np.concatenate([[0.0], np.cumsum(g.integers(1, 32, T - 1) / 16.0)])
        mask = g.random((T, D)) < g.uniform(0.1, 0.9)
        md = compute_mask_delta(PatientRecord("x", stamps, g.random((T, D)), mask))
        bad += int(not np.array_equal(md.delta, scan_oracle(stamps, mask)))
    elapsed = time.perf_counter() - t0
    criterion("delta recursion", bad == 0 and elapsed < 5, f"{bad} mismatches over 1000 instances, {elapsed:.2f}s (<5s)")


def test_directional_benchmark(criterion, directional):
    rep, elapsed = directional
    s = "mcar=0.3"
    ours = rep.mean("mrnn", s)
    others = {b: rep.mean(b, s) for b in BASELINES}
    ok = all(ours < v for v in others.values()) and elapsed < 600
    detail = f"mrnn={ours:.4f} vs " + ", ".join(f"{k}={v:.4f}" for k, v in others.items()) + f"; {elapsed:.0f}s (<600s)"
    criterion("directional benchmark", ok, detail)


def test_ablation_ordering(criterion, bench_data, bench_opts, directional):
    rep, _ = directional
    opts = E.BenchmarkOptions(mrnn=bench_opts.mrnn, reference="mrnn-interp", score_prediction=False, score_congeniality=False)
    abl = E.benchmark_run(bench_data, ["mrnn-interp", "mrnn-impute"], ["mcar=0.3"], 5, SEED, opts)
    full = rep.mean("mrnn", "mcar=0.3")
    interp = abl.mean("mrnn-interp", "mcar=0.3")
    impute = abl.mean("mrnn-impute", "mcar=0.3")
    criterion("ablation ordering", full <= interp and full <= impute,
              f"full={full:.4f}, interp-only={interp:.4f}, impute-only={impute:.4f}")


def test_multiple_imputation(criterion):
    ds = generate_synthetic(200, 5, 10, rng=SEED)
    deg, _ = mcar_remove(ds, 0.3, Rng(SEED).child("mask"))
    cfg = M.MRnnConfig(keep_p=0.5, epochs=60, seed=SEED)
    model = M.train(deg, cfg)
    draws = M.impute_multiple(model, deg, 10, Rng(SEED).child("mi"))
    vals = np.stack([np.concatenate([r.values[~s.observed] for r, s in zip(d.dataset.records, deg.records)]) for d in draws])
    frac = float((vals.std(axis=0, ddof=1) > 0).mean())

    rerun = M.train(deg, cfg)
    a, b = M.impute_single(model, deg), M.impute_single(rerun, deg)
    si_same = all(np.array_equal(x.values, y.values) for x, y in zip(a.dataset.records, b.dataset.records))
    est, tot = M.rubin_combine([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    rubin_ok = est == 2.0 and tot == 4.0 / 3.0
    criterion("multiple imputation", frac >= 0.9 and si_same and rubin_ok,
              f"cells with between-draw sd>0: {frac:.1%} (>=90%), SI deterministic={si_same}, rubin([1,2,3]) total var={tot!r}")


def test_auroc_oracle(criterion):
    g = np.random.default_rng(SEED)
    bad, ties = 0, 0
    for _ in range(200):
        n = int(g.integers(2, 80))
        s = np.round(g.random(n), int(g.integers(1, 3)))
        y = (g.random(n) < g.uniform(0.2, 0.8)).astype(int)
        y[:2] = [0, 1]
        ties += int(np.unique(s).size < n)
        bad += int(E.auroc(s, y) != pairwise_auroc(s, y))
    perfect = E.auroc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0])
    criterion("AUROC oracle", bad == 0 and perfect == 1.0 and ties > 0,
              f"{bad} mismatches over 200 instances ({ties} with ties), perfect ranking={perfect}")


def test_congeniality_pipeline(criterion):
    t0 = time.perf_counter()
    w = np.array([2.0, -1.5, 1.0, 0.5, -0.5, 1.0, 0.0, 0.0, 0.0, 0.0])
    ds = generate_synthetic(500, 10, 20, 0.7, 0.4, label_weights=w, label_bias=-0.5, rng=21)
    opts = E.BenchmarkOptions(score_prediction=False, score_congeniality=True)
    rep = E.benchmark_run(ds, ["mrnn", "mean"], ["mcar=0.2"], 5, SEED, opts)
    s = "mcar=0.2"
    wins = int(np.sum((rep.values("mrnn", s, "mean_bias") <= rep.values("mean", s, "mean_bias"))
                      & (rep.values("mrnn", s, "weight_rmse") <= rep.values("mean", s, "weight_rmse"))))
    elapsed = time.perf_counter() - t0
    criterion("congeniality pipeline", wins >= 4 and elapsed < 300,
              f"mrnn no worse on both metrics in {wins}/5 folds (>=4); mean bias mrnn={rep.mean('mrnn', s, 'mean_bias'):.4f} "
              f"vs mean fill={rep.mean('mean', s, 'mean_bias'):.4f}; {elapsed:.0f}s (<300s)")


def test_missing_rate_sweep(criterion, bench_data, bench_opts, directional):
    rep30, _ = directional
    extra = E.benchmark_run(bench_data, ["mrnn", *BASELINES], ["mcar=0.1", "mcar=0.5"], 5, SEED, bench_opts)
    rates = ["mcar=0.1", "mcar=0.3", "mcar=0.5"]

    def vals(m, s):
        return rep30.values(m, s) if s == "mcar=0.3" else extra.values(m, s)

    failures, strict_breaks = [], []
    for m in ["mrnn", *BASELINES]:
        for lo, hi in zip(rates, rates[1:]):
            a, b = vals(m, lo), vals(m, hi)
            # allowed slack: standard error of the difference of two 5-fold means
            slack = np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
            if b.mean() < a.mean():
                strict_breaks.append(f"{m} {lo}->{hi} ({a.mean():.4f}->{b.mean():.4f})")
            if b.mean() < a.mean() - slack:
                failures.append(f"{m} {lo}->{hi}")
    means = "; ".join(f"{m}=" + "/".join(f"{vals(m, s).mean():.4f}" for s in rates) for m in ["mrnn", *BASELINES])
    detail = f"{means}; beyond-noise decreases: {failures or 'none'}; within-noise dips: {strict_breaks or 'none'}"
    criterion("missing-rate sweep", not failures, detail)


def test_end_to_end_determinism(criterion, tmp_path):
    data = tmp_path / "d.csv"
    assert cli_main(["generate", "--patients", "80", "--streams", "5", "--length", "10", "--seed", "3",
                     "--label-weights", "1.5,-1,1,0,0", "--out", str(data)]) == 0
    args = ["benchmark", "--input", str(data), "--settings", "mcar=0.3;correlated=0.3,topk=2", "--seed", "9",
            "--epochs", "20", "--predictor-epochs", "5"]
    assert cli_main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert cli_main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "summary.csv").read_bytes()
    b = (tmp_path / "b" / "summary.csv").read_bytes()
    criterion("end-to-end determinism", a == b and len(a) > 0,
              f"summary.csv byte-identical={a == b} ({len(a)} bytes, {a.count(NL) - 1} rows)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
