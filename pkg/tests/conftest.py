import numpy as np
import pytest

from tdsparam.charfun import CharFun

EX7 = "s^2 + 2*s*exp(-s*t1) + exp(-s*t2)"
EX12 = "s^2 + s*k + 1 - exp(-tau*(s+k))"
EX5 = "s^2 + s*(k + exp(-s*t1)) + k*exp(-s*t1) + 1 - exp(-t2*(k+s))"


@pytest.fixture(scope="session")
def ex7():
    return CharFun.from_text(EX7, ["t1", "t2"])


@pytest.fixture(scope="session")
def ex12():
    return CharFun.from_text(EX12, ["tau", "k"])


@pytest.fixture(scope="session")
def ex5():
    return CharFun.from_text(EX5, ["t1", "t2", "k"])


def random_retarded(rng, m=None, n=None, scale=1.0):
    """Random ``s^m + sum_i P_i(s) exp(-s*t_i)`` plus a delay-free polynomial."""
    m = m or int(rng.integers(1, 4))
    n = n or int(rng.integers(1, 3))
    names = [f"t{i + 1}" for i in range(n)]
    parts = [f"s^{m}"]
    base = rng.uniform(0.2, 2.0, size=m) * scale
    parts += [f"{float(c)!r}*s^{p}" for p, c in enumerate(base)]
    for name in names:
        coeffs = rng.uniform(-1.0, 1.0, size=m) * scale
        parts += [f"({float(c)!r})*s^{p}*exp(-s*{name})" for p, c in enumerate(coeffs)]
    return CharFun.from_text(" + ".join(parts), names)


# Acceptance report -------------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.addinivalue_line("markers", "slow: long-running test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    _CRITERIA[number] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        line = f"criterion {number:2d}: {status}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
