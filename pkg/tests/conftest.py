import numpy as np
import pytest

from polecalib.config import RunConfig
from polecalib.geometry import RigidTransform, so3_exp
from polecalib.pipeline import calibrate, extract_both, scenario_scans
from polecalib.sim import random_scenario


ACCEPTANCE_LINES = []


def record_acceptance(number, ok, detail):
    """Print one PASS/FAIL line per acceptance criterion and keep it for the summary."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append((number, line))
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_rotation(rng):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, np.pi))


def random_transform(rng, scale=2.0):
    return RigidTransform(random_rotation(rng), rng.uniform(-scale, scale, size=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class SceneCase:
    """A simulated scenario with its scans and extraction, computed lazily."""

    def __init__(self, seed, sigma):
        self.scenario = random_scenario(seed, noise_sigma=sigma)
        self.truth = self.scenario.ground_truth()
        self.cloud1, self.cloud2 = scenario_scans(self.scenario)
        self.cfg = RunConfig(seed=seed, sigma=sigma)
        self._poles = None
        self._cal = None

    @property
    def poles(self):
        if self._poles is None:
            self._poles = extract_both(self.cloud1, self.cloud2, self.cfg)
        return self._poles

    @property
    def calibration(self):
        if self._cal is None:
            self._cal = calibrate(self.cloud1, self.cloud2, self.cfg)
        return self._cal


@pytest.fixture(scope="session")
def noiseless_scene():
    return SceneCase(0, 0.0)


@pytest.fixture(scope="session")
def noisy_scene():
    return SceneCase(3, 0.006)
