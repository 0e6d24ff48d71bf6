import numpy as np
import pytest

from relboltz._backend import available_backends
from relboltz.model import ModelParams, init_params

ACCEPTANCE_LINES: list[str] = []


def random_params(rng, n_words=5, n_relations=2, dim=3, spread=0.5):
    """Generic parameters: operators far from identity, non-zero offsets."""
    p = init_params(n_words, n_relations, dim, rng)
    p.A += rng.normal(0.0, spread, size=p.A.shape)
    p.b += rng.normal(0.0, spread, size=p.b.shape)
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(available_backends()))
def backend(request):
    return available_backends()[request.param]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def params_2d(A, b, C, V):
    """One-relation model with given operator and embedding rows."""
    return ModelParams(np.asarray(C, float), np.asarray(V, float), np.asarray(A, float)[None], np.asarray(b, float)[None])
