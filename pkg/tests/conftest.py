import numpy as np
import pytest

from ganinpaint.gan import Gan, GanConfig

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def tiny_config(**overrides) -> GanConfig:
    params = dict(latent_dim=8, image_size=16, channels=1, base_feature_maps=4, batch_size=8, epochs=1, seed=0)
    params.update(overrides)
    return GanConfig(**params)


@pytest.fixture
def tiny_gan() -> Gan:
    return Gan.initialize(tiny_config())


@pytest.fixture(scope="session")
def small_trained_gan() -> Gan:
    """A 16x16 GAN after three quick epochs on toy faces (about a second of training)."""
    from ganinpaint.data import DatasetSpec, generate_dataset
    from ganinpaint.gan import train

    gan = Gan.initialize(tiny_config(base_feature_maps=8, batch_size=16, epochs=3))
    train(gan, generate_dataset(DatasetSpec("toy_faces", 256, 16, 1, seed=0)))
    return gan


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
