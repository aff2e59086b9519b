import pytest
from hypothesis import HealthCheck, settings

from spimon import data_path
from spimon.model import load_safety_case

settings.register_profile(
    "spimon", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("spimon")


@pytest.fixture(scope="session")
def paper_case():
    return load_safety_case(data_path("paper_case.json"))


@pytest.fixture(scope="session")
def underannotated_case():
    return load_safety_case(data_path("paper_case_underannotated.json"))


@pytest.fixture(scope="session")
def demo_case():
    return load_safety_case(data_path("demo_av_case.json"))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
