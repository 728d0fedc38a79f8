import pytest

from figforge.fixtures import bank_subset
from figforge.geometry import AttachmentTables
from figforge.tokens import build_universe


@pytest.fixture(scope="session")
def tables2():
    return AttachmentTables(bank_subset(["p2", "p4"]))


@pytest.fixture(scope="session")
def universe2(tables2):
    return build_universe(tables2, max_parts=3)


@pytest.fixture(scope="session")
def tables4():
    return AttachmentTables(bank_subset(["p1", "p2", "p4", "p5"]))


@pytest.fixture(scope="session")
def universe4(tables4):
    return build_universe(tables4, max_parts=3)
