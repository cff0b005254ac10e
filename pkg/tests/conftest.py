import numpy as np
import pytest

from postergenre.data import DEFAULT_GENRES, GenreVocabulary, parse_manifest
from postergenre.model import ModelConfig
from postergenre.tensor import Tensor, no_grad

TOY_LINES = [
    "p1.ppm\tm1\t1",
    "p2.ppm\tm1\t1;2",
    "p3.ppm\tm2\t2;3",
    "p4.ppm\tm3\t1;2;3",
    "p5.ppm\tm4\t3",
]

DESK_GENRES = DEFAULT_GENRES[:4]


@pytest.fixture
def toy_manifest():
    return parse_manifest(TOY_LINES, GenreVocabulary(DEFAULT_GENRES[:3]))


@pytest.fixture
def desk_config():
    return ModelConfig(w_z=64, w_p=16, dim=32, layers=2, heads=4, genres=DESK_GENRES)


def central_difference(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Numerical gradient of scalar f at x by central differences (independent of autodiff)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = f(x)
        flat[i] = old - step
        down = f(x)
        flat[i] = old
        g[i] = (up - down) / (2 * step)
    return grad


def assert_grad_close(auto, numeric):
    auto = np.asarray(auto)
    numeric = np.asarray(numeric)
    tol = np.maximum(1e-5, 1e-3 * np.abs(numeric))
    err = np.abs(auto - numeric)
    assert np.all(err <= tol), f"max excess {np.max(err - tol):.3e}"


def scalar_of(fn, *arrays):
    """Evaluate fn on plain arrays without recording a graph; returns float."""
    with no_grad():
        return float(fn(*[Tensor(a) for a in arrays]).data)


# -- acceptance summary ---------------------------------------------------------------

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    def record(name: str, passed: bool, detail: str = ""):
        _ACCEPTANCE.append((name, passed, detail))
        print(f"[{'PASS' if passed else 'FAIL'}] {name} {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
