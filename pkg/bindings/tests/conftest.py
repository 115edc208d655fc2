import itertools

import pytest

# Stay clear of the core suite's 5000+ blocks and the adapter's own 3100+
# auto-allocation range so both suites can share one pytest session.
_BLOCKS = itertools.count(7000, 16)


@pytest.fixture
def port_block() -> int:
    """Base of a fresh 16-port range reserved for one test."""
    return next(_BLOCKS)
