import numpy as np
import pytest

from cadex.data import Attribute, Dataset, Schema, expand_direction, load_german, split
from cadex.nnet import init_network, train

SEED = 42

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def german():
    return load_german()


@pytest.fixture(scope="session")
def german_split(german):
    return split(german, 0.8, SEED)


@pytest.fixture(scope="session")
def trained(german_split):
    """(network, train report) trained once per session with the default settings."""
    train_set, val_set = german_split
    net = init_network(train_set.schema.width, 15, SEED)
    report = train(net, train_set, val_set)
    return net, report


@pytest.fixture(scope="session")
def direction(german):
    return expand_direction(german.schema)


@pytest.fixture
def toy_schema():
    return Schema((
        Attribute("age", "numeric", direction=1),
        Attribute("credit", "numeric"),
        Attribute("kids", "ordinal", direction=1),
        Attribute("purpose", "categorical", ("A", "B", "C"), ("car", "tv", "other")),
        Attribute("phone", "categorical", ("y", "n"), ("yes", "no")),
    ))


def identity_dataset(schema: Schema) -> Dataset:
    return Dataset(schema, np.zeros((0, schema.width)), np.zeros(0, dtype=int),
                   np.zeros(schema.width), np.ones(schema.width), np.zeros(0, dtype=int))
