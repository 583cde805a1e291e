import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the slow learning experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_config():
    """Validated config from dotted keys; small networks and budgets unless overridden."""
    from models import parse_mapping

    def build(**dotted):
        flat = {
            "env.id": "double_integrator",
            "algo.name": "sac",
            "algo.net_arch": [8],
            "algo.batch_size": 16,
            "algo.learning_starts": 50,
            "run.total_steps": 300,
            "eval.interval": 100,
            "eval.episodes": 2,
        }
        flat.update({key.replace("__", "."): value for key, value in dotted.items()})
        return parse_mapping(flat)

    return build


@pytest.fixture
def improvement_margin():
    """Gap between mean returns after and before training, in combined standard errors over seeds."""
    from utils.metrics import std_error

    def margin(before, after):
        spread = np.hypot(std_error(before), std_error(after))
        return (np.mean(after) - np.mean(before)) / max(spread, 1e-12)

    return margin
