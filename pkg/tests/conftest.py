import pytest

from sctpdsdv.kernel import Kernel
from sctpdsdv.sctp import Association, SctpParams

from helpers import FakeRouter


@pytest.fixture
def endpoint():
    """Factory for a lone association over a FakeRouter."""

    def make(**params):
        k = Kernel()
        router = FakeRouter(k)
        assoc = Association(k, router, peer=1, params=SctpParams(**params), trace=True)
        return k, router, assoc

    return make


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.LINES:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.LINES:
            terminalreporter.write_line(line)
