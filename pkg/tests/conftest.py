import numpy as np
import pytest

from entscope import dataset as ds
from entscope import structures


@pytest.fixture(scope="session")
def n4_manifest():
    return ds.make_manifest(4, 2, samples_per_class=100, seed=7)


@pytest.fixture(scope="session")
def n4_records(n4_manifest):
    return ds.generate_dataset(n4_manifest)


def random_composition(rng, n):
    comps = structures.enumerate_compositions(n)
    return comps[rng.integers(len(comps))]


def random_pauli(rng, n):
    return "".join(rng.choice(list("XYZ"), size=n))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One summary line per acceptance criterion, printed after the run.
_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = dict(item.user_properties).get("detail", "")
        status = "SKIP" if report.skipped else "PASS" if report.passed else "FAIL"
        _CRITERIA[item.nodeid] = (marker.args[0], status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _CRITERIA.values():
        terminalreporter.write_line(f"{status}  {name}" + (f"  [{detail}]" if detail else ""))
