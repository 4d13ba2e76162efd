import os

import pytest

from svomerge import config as config_mod


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running (minutes)")


@pytest.fixture
def small_cfg():
    """Tiny scenario and network that train and evaluate in seconds."""
    here = os.path.dirname(__file__)
    return config_mod.load(os.path.join(here, "..", "configs", "smoke.yaml"))


SMOKE = os.path.join(os.path.dirname(__file__), "..", "configs", "smoke.yaml")


@pytest.fixture(scope="session")
def smoke_run(tmp_path_factory):
    """Directory holding a 10-iteration smoke training run (checkpoint.pt, metrics.csv)."""
    from svomerge.learn.trainer import Trainer

    out = tmp_path_factory.mktemp("smoke_run")
    Trainer(config_mod.load(SMOKE), out).run()
    return out


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.REPORT, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
