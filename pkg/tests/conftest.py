import numpy as np
import pytest
import torch

from magphasenet.data import synth_desk_corpus
from magphasenet.network import ModelConfig

# One pass/fail line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE_RESULTS: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    line = f"ACCEPTANCE {number:>2} {status} {title}"
    if detail:
        line += f" ({detail})"
    ACCEPTANCE_RESULTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)
    yield


@pytest.fixture(scope="session")
def tiny_model_cfg() -> ModelConfig:
    """Small architecture for structural tests; same topology as the default."""
    return ModelConfig(
        base_channels=16,
        conformer_dim=16,
        conformer_heads=2,
        n_conformers=1,
        dense_depth=2,
        conformer_conv_kernel=7,
    )


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Four 0.6 s train pairs plus two test pairs, with manifest."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = synth_desk_corpus(root, n_clips=4, clip_seconds=0.6, seed=11)
    return root, manifest


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
