import numpy as np
import pytest

from uvq import experiments as ex
from uvq.codebook import fit_universal_codebook


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` w.r.t. every entry of ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


@pytest.fixture(scope="session")
def trained_zoo():
    """{name: (net, dataset, float metric)} for the seed-0 zoo."""
    return ex.train_zoo(seed=0)


@pytest.fixture(scope="session")
def zoo_nets(trained_zoo):
    return [v[0] for v in trained_zoo.values()]


@pytest.fixture(scope="session")
def desk_codebook(zoo_nets):
    return fit_universal_codebook(zoo_nets, ex.DESK_K, ex.DESK_D, seed=0)


ACCEPTANCE = {}


def record_criterion(number, title, ok, detail=""):
    """Remember one acceptance line and return ``ok``; printed in the terminal summary."""
    ACCEPTANCE[number] = (title, bool(ok), detail)
    print(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}  {detail}")
