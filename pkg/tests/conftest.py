import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from helpers import ACCEPTANCE_LINES, toy_model_config  # noqa: E402

from deepprompt.backbone import FrozenBackbone  # noqa: E402


@pytest.fixture
def toy_config():
    return toy_model_config()


@pytest.fixture
def toy_backbone(toy_config):
    return FrozenBackbone(toy_config, seed=0, init_std=0.3)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
