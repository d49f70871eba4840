import pytest
import torch

from bimix.config import DESK
from bimix.synthdata import load_dataset, write_dataset

torch.set_num_threads(max(1, min(4, torch.get_num_threads())))


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench") / "data"
    write_dataset(root, (12, 8, 4), seed=0, size=64)
    return root


@pytest.fixture(scope="session")
def tiny_data(tiny_root):
    return load_dataset(tiny_root, require_test_labels=True)


@pytest.fixture
def tiny_cfg():
    return DESK.replace(image_size=64, seg_widths=(8, 8, 8, 8), relight_widths=(4, 8, 8),
                        disc_widths=(8, 8, 8), max_iters=12, pretrain_iters=10, eval_every=5)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
