import warnings

import numpy as np
import pytest

from conmod.losses import LossWeights
from conmod.model import ConmodConfig
from conmod.oracles import build_dataset
from conmod.spectral import StftConfig

# tiny configuration used throughout the unit tests: 8 kHz audio, short frames
TINY_SR = 8000
TINY_STFT = StftConfig(frame_size=64, fft_size=128, hop=16, sample_rate=TINY_SR)
TINY_MODEL = ConmodConfig(lstm_hidden=4, mlp_hidden=8, bins=TINY_STFT.bins, film_hidden=4)


@pytest.fixture(autouse=True)
def _quiet_fft_size_warning():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="fft_size .* is outside")
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_WEIGHTS = LossWeights(fft_sizes=(64, 128, 256))


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """The 3 x 4 phaser grid rendered at 8 kHz, 0.3 s per pair."""
    out = tmp_path_factory.mktemp("tiny_data")
    return build_dataset("phaser", [0.23, 0.73, 1.13], [0, 25, 50, 75], 0.0, 0.3, TINY_SR, out)


# ------------------------------------------------------------------ acceptance reporting

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
