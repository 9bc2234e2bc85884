import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from mtvrp import ModelConfig, RoutingPolicy  # noqa: E402

DATA = Path(__file__).parent / "data"

torch.set_num_threads(1)


def tiny_config(**kw) -> ModelConfig:
    base = dict(dim=16, heads=2, hidden=32, encoder_layers=1)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def tiny_policy():
    torch.manual_seed(0)
    return RoutingPolicy(tiny_config())


@pytest.fixture
def data_dir():
    return DATA


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[2])):
        terminalreporter.write_line(line)
