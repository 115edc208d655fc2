"""Shared fixtures: disjoint port blocks per test and session-end hygiene.

The actual machinery lives in helpers.py so test modules can import it
without naming this conftest (there is a second conftest under
bindings/tests, so the module name `conftest` is ambiguous).
"""

import pytest

import helpers
from sparkrl import wire


@pytest.fixture
def port_block() -> int:
    return helpers.claim_port_block()


@pytest.fixture(scope="session", autouse=True)
def _session_hygiene():
    yield
    leaked = wire.ports_in_use()
    assert not leaked, f"port claims leaked past the suite: {sorted(leaked)}"
    children = helpers.live_server_children()
    assert not children, f"server processes leaked past the suite: {children}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        import test_acceptance
    except ImportError:
        return
    lines = test_acceptance.acceptance_report()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
