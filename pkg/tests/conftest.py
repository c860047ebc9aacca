import sys
import numpy as np
import pytest

from nowcast import models, synth


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    synth.write_fixture(str(d), seed=7)
    return d


@pytest.fixture(scope="session")
def fixture7():
    return synth.make_fixture(7)


def small_spec(family, d=5, l=6, b=3):
    kw = dict(channels=(3, 2), kernel_size=3) if family == "CNN1D" else {}
    hidden = (4, 3) if family == "MLP" else (4,)
    return models.ModelSpec(family, d, l, b, hidden, **kw)


def numeric_grad(f, arr, h=1e-5):
    """Central differences of the scalar ``f()`` with respect to every cell of ``arr`` (mutated in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
