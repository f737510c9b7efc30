import numpy as np
import pytest

from embkit.dataset import EmbeddingMatrix

ACCEPTANCE = []


def record_criterion(number, name, passed, detail=""):
    ACCEPTANCE.append((number, name, passed, detail))
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE, key=lambda r: (r[0], r[1])):
        line = f"{'PASS' if passed else 'FAIL'}  {number:>2}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_orthogonal():
    def make(n, seed=0):
        q, r = np.linalg.qr(np.random.default_rng(seed).normal(size=(n, n)))
        return q * np.sign(np.diag(r))

    return make


def emb(a, prompt_type="none"):
    return EmbeddingMatrix(np.asarray(a, dtype=np.float64), prompt_type)
