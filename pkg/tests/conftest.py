from pathlib import Path

import numpy as np
import pytest

from capsfusion.config import TrainConfig
from capsfusion.model import CapsFusion

FIXTURES = Path(__file__).parent / "fixtures"

TINY = dict(seq_len=12, embed_dim=16, hidden=8, caps_out=2, caps_dim=4, feat_hidden=8, routing_iters=3)

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    _CRITERIA[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} [{number:2d}] {title}: {detail}")


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def tiny_config():
    return TrainConfig(dropout=0.0, **TINY)


@pytest.fixture
def tiny_model(tiny_config):
    return CapsFusion.initialize(tiny_config, 50, np.random.default_rng(0))


def tiny_batch(rng, batch=3, n=12, vocab=50):
    ids = rng.integers(2, vocab, size=(batch, n))
    ids[0, n - 3 :] = 0
    feats = rng.normal(size=(batch, 7))
    labels = np.arange(batch) % 2
    return ids, feats, labels
