import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset():
    from multipose.synth_data import OCCLUSION_MIX, DatasetConfig, make_dataset

    return make_dataset(DatasetConfig(splits={"train": 24, "val": 6, "test": 10},
                                      mix=OCCLUSION_MIX, seed=7, image_format="inline"))


@pytest.fixture(scope="session")
def small_config():
    from multipose.model import ModelConfig

    return ModelConfig(stem_widths=(8, 8, 16, 16), mid_widths=(16, 16), up_widths=(8, 8))


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one summary line per acceptance criterion."""
    lines = getattr(request.config, "_acceptance_lines", None)
    if lines is None:
        lines = request.config._acceptance_lines = []
    return lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
