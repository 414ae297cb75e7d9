import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from keygrasp import fixtures, pipeline

settings.register_profile(
    "ci",
    max_examples=30,
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """Default planted fixture dataset written to disk once per session."""
    out = tmp_path_factory.mktemp("fixture")
    manifest_path = pipeline.synth_command(out, seed=0)
    return manifest_path


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory, fixture_dir):
    """One 15-epoch training run on the planted fixture, shared by read-only tests."""
    out = tmp_path_factory.mktemp("trained")
    output = pipeline.train_command(fixture_dir, pipeline.RunConfig(), out)
    return {"manifest": fixture_dir, "out": out, "result": output.result, "checkpoint": output.checkpoint_path}


@pytest.fixture(scope="session")
def fixture_dataset():
    return fixtures.build_fixture(fixtures.FixtureSpec(), seed=0)
