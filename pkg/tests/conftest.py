import random
import sys

import pytest

from malleability.corpus import TxFactory, derive_keys
from malleability.mutation import MutationContext


@pytest.fixture(scope="session")
def keys():
    return derive_keys(random.Random(7), 8)


@pytest.fixture
def factory(keys):
    return TxFactory(random.Random(11), keys, tag=b"tests")


@pytest.fixture
def standard_tx(factory):
    return factory.spend(150_000_000, n_inputs=1, n_outputs=2)


@pytest.fixture
def context(factory, standard_tx) -> MutationContext:
    return factory.context(nonce=123456789)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
