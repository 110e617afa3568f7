import re

import numpy as np
import pytest

from nysqp.linops import make_dense_operator
from nysqp.qp_model import QpProblem

_CRITERIA = {}


def tiny_qp():
    """min x^2/2  s.t.  x = 1, x >= 0."""
    return QpProblem.from_kinds(np.array([1.0]), make_dense_operator(np.array([[1.0]])), np.array([1.0]),
                                np.array([0.0]), np.array([1]), name="tiny")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_psd(rng, m, rank=None, spectrum=None):
    Q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    if spectrum is None:
        rank = m if rank is None else rank
        spectrum = np.concatenate([rng.uniform(0.1, 10.0, rank), np.zeros(m - rank)])
    lam = np.asarray(spectrum, dtype=float)
    N = (Q * lam) @ Q.T
    return 0.5 * (N + N.T)


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2).replace("_", " "))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[key] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), outcome in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"criterion {num:2d} [{name}]: {outcome}")
