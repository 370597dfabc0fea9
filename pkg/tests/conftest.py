import numpy as np
import pytest
from hypothesis import settings

from mrnn.dataset import PatientRecord, TemporalDataset

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


def make_record(pid, stamps, values, observed=None, labels=None):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if observed is None:
        observed = np.ones(values.shape, dtype=bool)
    observed = np.asarray(observed, dtype=bool).reshape(values.shape)
    return PatientRecord(pid, np.asarray(stamps, dtype=np.float64), values, observed, labels)


def random_dataset(rng, n=5, d=3, t_max=6, p_obs=0.7, labels=False):
    recs = []
    for i in range(n):
        T = int(rng.integers(1, t_max + 1))
        stamps = np.concatenate([[0.0], np.cumsum(rng.exponential(1.0, T - 1) + 1e-3)])
        vals = rng.random((T, d))
        obs = rng.random((T, d)) < p_obs
        lab = (rng.random(T) < 0.5).astype(float) if labels else None
        recs.append(PatientRecord(f"r{i}", stamps, vals, obs, lab))
    return TemporalDataset(recs, [f"s{j}" for j in range(d)])


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)


# ------------------------------------------------------------ acceptance log

_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(name: str, ok: bool, detail: str = ""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
