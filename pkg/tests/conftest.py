import pytest

from eamtnet.config import ExperimentConfig
from eamtnet.phantom import generate_dataset, write_dataset

TINY = dict(image_size=32, token_dim=16, channels=(4, 8, 8), decoder_channels=8,
            epochs=2, folds=3, batch_size=4)


@pytest.fixture
def tiny_config():
    return ExperimentConfig(**TINY)


@pytest.fixture(scope="session")
def tiny_pairs():
    return generate_dataset(12, 32, 1.0, seed=3)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory, tiny_pairs):
    root = tmp_path_factory.mktemp("data")
    write_dataset(tiny_pairs, root, seed=3)
    return root


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])
