import pytest

from omnivault import crypto_core as cc


@pytest.fixture(scope="session")
def keypair():
    return cc.asym_keygen()


@pytest.fixture(scope="session")
def other_keypair():
    return cc.asym_keygen()


@pytest.fixture(scope="session")
def third_keypair():
    return cc.asym_keygen()


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion; the verdict comes from the test outcome."""
    number = request.node.get_closest_marker("criterion").args[0]
    yield
    report = getattr(request.node, "rep_call", None)
    verdict = "PASS" if report is not None and report.passed else "FAIL"
    line = f"criterion {number}: {verdict}  {request.node.name}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    if report.when == "call":
        item.rep_call = report
    return report


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
