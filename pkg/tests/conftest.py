import numpy as np
import pytest

from robust_oed.model import GaussianPrior, LinearForwardModel, NoiseModel
from robust_oed.objective import OEDProblem, PenaltyConfig


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = np.geomspace(1.0, cond, n)
    A = (Q * ev) @ Q.T
    return 0.5 * (A + A.T)


def random_problem(n_sensors=3, n_obs_times=2, n_params=6, seed=0,
                   penalty=PenaltyConfig(), lo=0.02, hi=0.04, prior_scale=1.0):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((n_sensors * n_obs_times, n_params))
    prior = GaussianPrior(np.zeros(n_params), random_spd(rng, n_params) / prior_scale)
    return OEDProblem(LinearForwardModel(F, n_sensors, n_obs_times), prior,
                      NoiseModel(lo, hi, n_sensors, n_obs_times), penalty)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_problem():
    return random_problem()


_REFERENCE = {}


def reference_problem(n_sensors):
    """Bundled reference experiment, built once per session."""
    from robust_oed.config import build_problem, reference_config
    if n_sensors not in _REFERENCE:
        _REFERENCE[n_sensors] = build_problem(reference_config(n_sensors))
    return _REFERENCE[n_sensors]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
