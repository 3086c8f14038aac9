import numpy as np
import pytest

from vsam.data import make_synthetic, synthetic_embeddings
from vsam.embeddings import encode_padded
from vsam.model import ModelShape, PairBatch, VsamParameters
from vsam.tensor import Tensor


def random_params(kind="vsam", D=5, hidden=6, proj=5, dz=3, n_max=6, seed=0, scale=0.5):
    """Parameters with every entry N(0, scale^2), biases included."""
    rng = np.random.default_rng(seed)
    shape = ModelShape(D, hidden, proj, dz, n_max, 4)
    params = VsamParameters.initialize(shape, rng, kind)
    for t in params.values():
        t.data = rng.normal(0.0, scale, size=t.shape)
    return params


def random_batch(B=4, D=5, n_max=6, seed=1, labels=True):
    """Random H with ragged masks; the first column of every row is valid."""
    rng = np.random.default_rng(seed)

    def side():
        lengths = rng.integers(1, n_max + 1, size=B)
        mask = np.arange(n_max)[None, :] < lengths[:, None]
        H = rng.normal(size=(B, D, n_max)) * mask[:, None, :]
        return np.zeros((B, n_max), dtype=np.int64), mask, Tensor(H)

    ih, mh, Hh = side()
    ib, mb, Hb = side()
    y = rng.integers(0, 4, size=B) if labels else None
    return PairBatch(ih, mh, ib, mb, y, None, Hh, Hb)


def synthetic_batch(n=20, vocab_size=16, D=8, n_max=12, seed=0):
    """Embedded batch of a small synthetic stance set (clustered embeddings)."""
    data = make_synthetic(n, vocab_size, seed, headline_length=(5, 7), body_length=(6, 10))
    vocab, emb = synthetic_embeddings(vocab_size, D, seed)
    ih, mh = encode_padded([ex.headline for ex in data], vocab, n_max)
    ib, mb = encode_padded([ex.body for ex in data], vocab, n_max)
    return PairBatch(ih, mh, ib, mb, data.labels).embedded(emb.weight)


@pytest.fixture
def params():
    return random_params()


@pytest.fixture
def batch():
    return random_batch()


# -- acceptance reporting ------------------------------------------------------

_CRITERIA: dict[int, tuple[str, list[str]]] = {}


def pytest_runtest_logreport(report):
    mark = getattr(report, "criterion", None)
    if mark is None or (report.when != "call" and report.outcome == "passed"):
        return
    number, title = mark
    outcome = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
    _CRITERIA.setdefault(number, (title, []))[1].append(outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[number]
        if "FAIL" in outcomes:
            verdict = "FAIL"
        elif "PASS" in outcomes:
            verdict = "PASS"
        else:
            verdict = "SKIP"
        detail = ", ".join(f"{outcomes.count(o)} {o.lower()}" for o in ("PASS", "FAIL", "SKIP") if o in outcomes)
        terminalreporter.write_line(f"criterion {number} {verdict}: {title} ({detail})")
