import pytest

# criterion number -> one-line verdict, filled by test_acceptance
ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "invariant: module invariant/property test (acceptance criterion 8)")
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
