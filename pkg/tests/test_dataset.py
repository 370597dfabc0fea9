import numpy as np
import pytest
from hypothesis import given, strategies as st

from mrnn.dataset import (
    DatasetError, PatientRecord, TemporalDataset, compute_mask_delta, denormalize, kfold_split,
    normalize_minmax, parse_csv, to_batch, write_csv,
)
from mrnn.numeric import Rng

from conftest import make_record, random_dataset


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_parse_shifts_stamps_and_marks_missing(tmp_path):
    p = write(tmp_path, "id,time,label,a,b\nx,7,,1.5,\nx,5,1,2,3e-1\n")
    ds = parse_csv(p)
    r = ds.records[0]
    assert r.stamps.tolist() == [0.0, 2.0]
    assert r.observed.tolist() == [[True, True], [True, False]]
    assert r.values[0].tolist() == [2.0, 0.3]
    assert r.labels[0] == 1.0 and np.isnan(r.labels[1])
    assert ds.stream_names == ("a", "b")


def test_rows_need_not_be_contiguous(tmp_path):
    ds = parse_csv(write(tmp_path, "id,time,label,a\nb,1,,1\na,0,,2\nb,0,,3\n"))
    assert ds.ids == ["b", "a"]
    assert ds.records[0].values[:, 0].tolist() == [3.0, 1.0]


@pytest.mark.parametrize(
    "body, line, needle",
    [
        ("x,0,,1\nx,0,,2\n", 3, "duplicate"),
        ("x,0,,1\nx,1,,1,2\n", 3, "fields"),
        ("x,0,,abc\n", 2, "parse"),
        ("x,zz,,1\n", 2, "parse"),
        ("x,0,2,1\n", 2, "label"),
        ("x,0,,nan\n", 2, "non-finite"),
    ],
)
def test_parse_errors_report_line(tmp_path, body, line, needle):
    p = write(tmp_path, "id,time,label,a\n" + body)
    with pytest.raises(DatasetError, match=needle) as exc:
        parse_csv(p)
    assert f":{line}:" in str(exc.value)


def test_bad_header(tmp_path):
    with pytest.raises(DatasetError, match=":1:"):
        parse_csv(write(tmp_path, "pid,time,label,a\n"))


def test_round_trip(tmp_path, nprng):
    for k in range(5):
        ds = random_dataset(nprng, n=6, d=3, labels=bool(k % 2))
        p = tmp_path / f"rt{k}.csv"
        write_csv(ds, p)
        back = parse_csv(p)
        assert back.ids == sorted(ds.ids) and back.stream_names == ds.stream_names
        by_id = {r.id: r for r in ds.records}
        for r in back.records:
            src = by_id[r.id]
            assert np.array_equal(r.stamps, src.stamps)
            assert np.array_equal(r.observed, src.observed)
            assert np.array_equal(r.values, src.values)
            if src.labels is None:
                assert r.labels is None
            else:
                assert np.array_equal(r.labels, src.labels, equal_nan=True)
        write_csv(back, tmp_path / "again.csv")
        assert (tmp_path / "again.csv").read_bytes() == p.read_bytes()


def test_zero_is_a_legal_measurement(tmp_path):
    ds = parse_csv(write(tmp_path, "id,time,label,a\nx,0,,0\nx,1,,\n"))
    assert ds.records[0].observed[:, 0].tolist() == [True, False]


def test_record_validation():
    with pytest.raises(DatasetError):
        make_record("a", [0.0, 0.0], [1.0, 2.0])
    with pytest.raises(DatasetError):
        make_record("a", [0.0, 1.0], [1.0, np.inf])
    r = make_record("a", [0.0, 1.0], [5.0, np.nan], observed=[True, False])
    assert r.values[1, 0] == 0.0
    with pytest.raises(ValueError):
        r.values[0, 0] = 1.0


def test_mismatched_stream_counts_rejected():
    with pytest.raises(DatasetError):
        TemporalDataset([make_record("a", [0.0], [[1.0, 2.0]])], ["x"])


def test_normalize_examples():
    ds = TemporalDataset([make_record("a", [0, 1, 2], [[2, 5], [4, 5], [6, 5]])], ["u", "v"])
    n = normalize_minmax(ds)
    assert n.records[0].values[:, 0].tolist() == [0.0, 0.5, 1.0]
    assert n.records[0].values[:, 1].tolist() == [0.0, 0.0, 0.0]
    assert n.normalization.tolist() == [[2, 6], [5, 5]]


def test_normalize_inverse_and_range(nprng):
    for _ in range(20):
        ds = random_dataset(nprng, n=4, d=3, p_obs=0.9)
        recs = [r.with_values(r.values * 40 - 7, r.observed) for r in ds.records]
        ds = ds.with_records(recs)
        try:
            n = normalize_minmax(ds)
        except DatasetError:
            continue
        for r in n.records:
            assert np.all((r.values[r.observed] >= 0) & (r.values[r.observed] <= 1))
        back = denormalize(n)
        for a, b in zip(ds.records, back.records):
            np.testing.assert_allclose(a.values[a.observed], b.values[b.observed], atol=1e-12)


def test_normalize_all_missing_stream():
    ds = TemporalDataset([make_record("a", [0, 1], [[1, 0], [2, 0]], observed=[[1, 0], [1, 0]])], ["u", "v"])
    with pytest.raises(DatasetError, match="never observed"):
        normalize_minmax(ds)


def test_delta_hand_example():
    r = make_record("a", [0, 1, 3], [[1], [0], [1]], observed=[[1], [0], [1]])
    assert compute_mask_delta(r).delta[:, 0].tolist() == [0.0, 1.0, 3.0]


def test_delta_observed_and_never_observed_branches():
    s = np.array([0.0, 0.5, 2.0, 2.25])
    full = make_record("a", s, np.ones(4))
    np.testing.assert_array_equal(compute_mask_delta(full).delta[:, 0], [0.0, 0.5, 1.5, 0.25])
    never = make_record("b", s, np.zeros(4), observed=np.zeros(4))
    np.testing.assert_array_equal(compute_mask_delta(never).delta[:, 0], s)


def scan_oracle(stamps, mask):
    """Time since the previous stamp at which the stream was seen (or since the start)."""
    T, D = mask.shape
    out = np.zeros((T, D))
    for d in range(D):
        for t in range(1, T):
            back = t - 1
            while back > 0 and not mask[back, d]:
                back -= 1
            out[t, d] = stamps[t] - stamps[back]
    return out


def test_delta_equals_scan_oracle(nprng):
    for _ in range(1000):
        T, D = int(nprng.integers(1, 9)), int(nprng.integers(1, 4))
        # dyadic gaps keep every partial sum exact in binary
        stamps = np.concatenate([[0.0], np.cumsum(nprng.integers(1, 16, T - 1) / 8.0)])
        mask = nprng.random((T, D)) < 0.5
        rec = PatientRecord("x", stamps, nprng.random((T, D)), mask)
        md = compute_mask_delta(rec)
        assert np.array_equal(md.delta, scan_oracle(stamps, mask))
        assert np.array_equal(md.mask, mask.astype(float))


def test_kfold_examples():
    ds = TemporalDataset([make_record(f"p{i}", [0.0], [[1.0]]) for i in range(10)], ["a"])
    folds = kfold_split(ds, 5, Rng(3))
    assert [len(te) for _, te in folds] == [2] * 5
    assert sorted(np.concatenate([te for _, te in folds]).tolist()) == list(range(10))
    for tr, te in folds:
        assert set(tr).isdisjoint(te) and len(tr) + len(te) == 10
    again = kfold_split(ds, 5, Rng(3))
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(folds, again))


@given(st.integers(2, 30), st.integers(2, 7), st.integers(0, 1000))
def test_kfold_sizes_differ_by_at_most_one(n, k, seed):
    ds = TemporalDataset([make_record(f"p{i}", [0.0], [[1.0]]) for i in range(n)], ["a"])
    if k > n:
        with pytest.raises(ValueError):
            kfold_split(ds, k, Rng(seed))
        return
    sizes = [len(te) for _, te in kfold_split(ds, k, Rng(seed))]
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == n


def test_kfold_rejects_k_below_two():
    ds = TemporalDataset([make_record("a", [0.0], [[1.0]])], ["a"])
    with pytest.raises(ValueError):
        kfold_split(ds, 1, Rng(0))


def test_batch_padding(nprng):
    ds = random_dataset(nprng, n=4, d=2, t_max=5)
    b = to_batch(ds.records)
    T = max(r.length for r in ds.records)
    assert b.x.shape == (4, T, 2)
    for i, r in enumerate(ds.records):
        assert np.all(b.m[i, r.length:] == 0) and np.all(b.x[i, r.length:] == 0)
        assert b.valid[i].sum() == r.length
    sub = b.take([0])
    assert sub.x.shape[1] == ds.records[0].length
