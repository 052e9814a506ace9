import numpy as np
import pytest
from hypothesis import settings

from entsource.analytic import DetectorParams, RateSet
from entsource.simulation import ExperimentConfig

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_density(seed: int, rank: int = 4) -> np.ndarray:
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def make_config(**kw) -> ExperimentConfig:
    """Plain symmetric setup: 1e5 pairs/s, no losses, eta 0.2, no noise."""
    base = dict(
        rates=RateSet(pair_rate_hz=1e5, total_rate_hz=1e5, window_s=1e-9),
        detector_a=DetectorParams(eta_q=0.2),
        detector_b=DetectorParams(eta_q=0.2),
        duration_s=1.0,
        seed=1,
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture
def config_factory():
    return make_config


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion for the run summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
