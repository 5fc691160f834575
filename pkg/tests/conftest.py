import numpy as np
import pytest

from robustedit.dataset import generate_knowledge_base
from robustedit.model import ModelDims, ToyMultimodalModel, train_base


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def trained():
    """A 10-unit knowledge base and a base model fitted to it."""
    kb = generate_knowledge_base(n_units=10, m_variants=6, noise_scale=0.08, seed=3)
    model, acc = train_base(ToyMultimodalModel(seed=3), kb, epochs=300, lr=1e-2)
    assert acc == 1.0
    return kb, model


@pytest.fixture
def small_model():
    return ToyMultimodalModel(ModelDims(d_v=5, d_t=4, d_e=3, d_h=6, n_classes=4), seed=7)


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the line is printed in the terminal summary."""

    def record(number, title, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")
        _CRITERIA.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA, key=lambda x: x[0]):
            terminalreporter.write_line(line)
