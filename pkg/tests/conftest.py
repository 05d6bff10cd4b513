import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption(
        "--run-training",
        action="store_true",
        default=False,
        help="run the hours-long training reproductions",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-training"):
        return
    skip = pytest.mark.skip(reason="training reproduction; pass --run-training")
    for item in items:
        if "training" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
