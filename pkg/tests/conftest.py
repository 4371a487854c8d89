import numpy as np
import pytest

from surftopo.pipeline import PipelineConfig, extract_maps
from surftopo.synth import SynthParams, generate_surface

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_surface():
    return generate_surface(SynthParams(seed=7))


@pytest.fixture(scope="session")
def default_extraction(default_surface):
    return extract_maps(default_surface.cloud, PipelineConfig(), default_surface)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0][1:])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
