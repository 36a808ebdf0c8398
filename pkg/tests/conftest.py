import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from motiondiff.denoiser.model import DenoiserConfig, DenoiserModel  # noqa: E402
from motiondiff.denoiser.train import AdamW, fit  # noqa: E402
from motiondiff.motion_data import fit_norm_stats  # noqa: E402
from motiondiff.schedule import cosine_schedule  # noqa: E402
from motiondiff.synthetic import sinusoid_dataset  # noqa: E402

TRAIN_STEPS = 2000
LR_MAX = 3e-3
LR_MIN = 1e-6

_CRITERIA = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    _CRITERIA[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        passed, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


class Overfit:
    """The bundled corpus plus a denoiser trained on it once per session."""

    def __init__(self):
        self.skel, self.clips, self.grids = sinusoid_dataset()
        self.stats = fit_norm_stats(self.clips)
        self.data = np.stack([self.stats.apply(c.frames) for c in self.clips])
        self.schedule = cosine_schedule(200)
        self.model = DenoiserModel(DenoiserConfig(), seed=0)
        t0 = time.perf_counter()
        self.result = fit(self.model, self.schedule, self.data, TRAIN_STEPS, np.random.default_rng(0),
                          lr_max=LR_MAX, lr_min=LR_MIN, opt=AdamW(weight_decay=0.01))
        self.seconds = time.perf_counter() - t0


@pytest.fixture(scope="session")
def overfit():
    return Overfit()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
