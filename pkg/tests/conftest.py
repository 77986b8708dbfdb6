import numpy as np
import pytest

from carsplat.asset import GaussianAsset, PartLabel
from carsplat.geometry import normalize


def random_asset(rng, n, labels=False, clusters=False, spread=1.0):
    return GaussianAsset(
        means=rng.uniform(-spread, spread, (n, 3)),
        scales=np.exp(rng.uniform(-3, -1, (n, 3))),
        rotations=normalize(rng.normal(size=(n, 4))),
        opacities=rng.uniform(0.05, 0.95, n),
        colors=rng.uniform(0, 1, (n, 3)),
        part_labels=rng.integers(0, len(PartLabel), n) if labels else None,
        cluster_ids=rng.integers(0, 20, n) if clusters else None,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def car():
    """Small synthetic car: (TrainSample, labelled GaussianAsset)."""
    from carsplat.synth import CarSpec, generate

    return generate(CarSpec(seed=7, n_points=4000))


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
