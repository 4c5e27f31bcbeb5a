import numpy as np
import pytest

from ptal import datagen
from ptal.mapper import Mapper, simulate_pairs, train_mapper


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def quick_mapper():
    """A mapper fitted with a large step size; good enough for unit probes."""
    pairs = simulate_pairs(20_000, 64, seed=5)
    val = simulate_pairs(2_000, 64, seed=6)
    return train_mapper(pairs, Mapper.build(64, seed=0), lr=1e-3, epochs=40, batch_size=64,
                        seed=0, val_pairs=val, target_accuracy=0.97)


@pytest.fixture(scope="session")
def small_corpus():
    cfg = datagen.SyntheticConfig(num_videos=12, num_test=4, seed=3)
    return datagen.generate_dataset(cfg)


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)))


_ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one pass/fail line per acceptance criterion."""
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
