import numpy as np
import pytest

from prpose.avgnoise import compute_pseudo_labels, train_avg
from prpose.lifter import train_lifter
from prpose.synthgen import DatasetConfig, make_dataset


@pytest.fixture(scope="session")
def small_data():
    return make_dataset(DatasetConfig(count=660, seed=3))


@pytest.fixture(scope="session")
def small_models(small_data):
    train, _ = small_data
    lifter = train_lifter(train, hidden_dim=32, n_blocks=1, epochs=30, batch_size=32,
                          lr_decay_epoch=25, seed=0)
    pseudo = compute_pseudo_labels(lifter, train)
    avg = train_avg(train, pseudo, hidden_dim=16, n_blocks=1, epochs=4, lr_decay_epoch=3, seed=0)
    return lifter, pseudo, avg


class ConstantAVG:
    """Stand-in AVG returning a fixed raw sigma for every joint."""

    def __init__(self, value, n_joints=16):
        self.value = value
        self.n_joints = n_joints

    def predict(self, X):
        X = np.asarray(X)
        n = 1 if X.ndim == 2 else len(X)
        return np.full((n, self.n_joints), float(self.value))


_CRITERIA: dict[int, str] = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    _CRITERIA[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print("\n" + _CRITERIA[n])


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
