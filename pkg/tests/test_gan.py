import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import tiny_config
from ganinpaint.autodiff import Tensor
from ganinpaint.gan import (
    CHECKPOINT_MAGIC,
    Gan,
    GanConfig,
    checkpoint_bytes,
    d_loss_value,
    discriminate,
    gan_from_bytes,
    generate,
    load_checkpoint,
    sample_latent,
    save_checkpoint,
    train,
    train_step,
)
from ganinpaint.rng import stream

GOLDEN = Path(__file__).parent / "data" / "golden_generator.npy"


def toy_dataset(n=32, size=16, seed=0):
    r = stream(seed, "toy")
    vals = np.where(r.random(n) < 0.5, 0.6, -0.6)
    return np.broadcast_to(vals[:, None, None, None], (n, 1, size, size)).copy()


@pytest.mark.parametrize("size,depth", [(16, 2), (32, 3), (64, 4)])
def test_config_depth(size, depth):
    assert GanConfig(image_size=size).depth == depth


@pytest.mark.parametrize("bad", [dict(image_size=8), dict(image_size=48), dict(channels=2), dict(latent_dim=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        GanConfig(**bad)


def test_sample_latent_range_determinism_and_moments():
    z = sample_latent(stream(3, "z"), 100_000, 4)
    assert z.min() >= -1 and z.max() <= 1
    assert np.array_equal(z, sample_latent(stream(3, "z"), 100_000, 4))
    assert np.all(np.abs(z.mean(axis=0)) < 0.02)
    assert np.all(np.abs(z.var(axis=0) - 1 / 3) < 0.02)
    with pytest.raises(ValueError):
        sample_latent(stream(0), 0, 4)


def test_generate_shape_range_and_purity(tiny_gan):
    z = sample_latent(stream(1, "z"), 5, 8)
    a = generate(tiny_gan.generator, z)
    b = generate(tiny_gan.generator, z)
    assert a.shape == (5, 1, 16, 16)
    assert a.tobytes() == b.tobytes()
    assert np.abs(a).max() <= 1.0
    with pytest.raises(ValueError, match="latent"):
        generate(tiny_gan.generator, np.zeros((2, 7)))


def test_untrained_generator_golden_snapshot(tiny_gan):
    z = sample_latent(stream(0, "golden"), 2, 8)
    np.testing.assert_allclose(generate(tiny_gan.generator, z), np.load(GOLDEN), rtol=0, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_generator_and_discriminator_ranges(seed):
    gan = Gan.initialize(tiny_config(seed=seed % 7))
    r = np.random.default_rng(seed)
    # extreme but valid latents and images, including saturated weights in G
    z = r.choice([-1.0, 1.0], size=(3, 8))
    imgs = generate(gan.generator, z, training=True)
    assert np.abs(imgs).max() <= 1.0
    p = discriminate(gan.discriminator, r.choice([-1.0, 1.0], size=(3, 1, 16, 16)))
    assert p.shape == (3,)
    assert np.all((p > 0) & (p < 1))


def test_d_loss_at_half_is_two_log_two():
    half = Tensor(np.full(10, 0.5))
    assert d_loss_value(half, half).item() == pytest.approx(2 * np.log(2), abs=1e-15)


def test_one_step_changes_every_parameter(tiny_gan):
    before = {k: v.copy() for net in (tiny_gan.generator, tiny_gan.discriminator) for k, v in net.params.items()}
    train_step(tiny_gan.generator, tiny_gan.discriminator, toy_dataset(8), tiny_gan.rng, tiny_gan.config)
    after = {**tiny_gan.generator.params, **tiny_gan.discriminator.params}
    for name, value in before.items():
        assert not np.array_equal(value, after[name]), name


def test_discriminator_accuracy_falls_on_two_value_toy_data():
    # regression values observed on this seed: early rolling mean reaches 1.0, last 50 steps ~0.74
    gan = Gan.initialize(tiny_config(base_feature_maps=8, batch_size=16, seed=0))
    r = stream(0, "toy")
    acc = []
    for _ in range(200):
        vals = np.where(r.random(16) < 0.5, 0.6, -0.6)
        batch = np.broadcast_to(vals[:, None, None, None], (16, 1, 16, 16)).copy()
        acc.append(train_step(gan.generator, gan.discriminator, batch, gan.rng, gan.config)[2])
    acc = np.array(acc)
    assert np.convolve(acc, np.ones(20) / 20, "valid")[:100].max() >= 0.95
    assert acc[-50:].mean() <= 0.75


def test_train_epochs_zero_leaves_initialization(tiny_gan):
    before = checkpoint_bytes(tiny_gan)
    assert train(tiny_gan, toy_dataset(), epochs=0) == []
    assert checkpoint_bytes(tiny_gan) == before


def test_train_is_deterministic():
    logs, blobs = [], []
    for _ in range(2):
        gan = Gan.initialize(tiny_config(epochs=2))
        logs.append([{k: v for k, v in r.items() if k != "wall_time_ms"} for r in train(gan, toy_dataset())])
        blobs.append(checkpoint_bytes(gan))
    assert logs[0] == logs[1]
    assert len(logs[0]) == 2
    assert blobs[0] == blobs[1]


def test_resume_matches_uninterrupted():
    full = Gan.initialize(tiny_config(epochs=2))
    train(full, toy_dataset())
    part = Gan.initialize(tiny_config(epochs=2))
    train(part, toy_dataset(), epochs=1)
    resumed = gan_from_bytes(checkpoint_bytes(part))
    train(resumed, toy_dataset())
    assert checkpoint_bytes(resumed) == checkpoint_bytes(full)


def test_train_errors(tiny_gan):
    with pytest.raises(ValueError, match="batch_size"):
        train(tiny_gan, toy_dataset(4))
    with pytest.raises(ValueError, match="shape"):
        train(tiny_gan, np.zeros((16, 1, 32, 32)))
    with pytest.raises(ValueError):
        train(tiny_gan, np.zeros((0, 1, 16, 16)))


def test_checkpoint_round_trip_is_byte_exact(tmp_path, tiny_gan):
    train(tiny_gan, toy_dataset(), epochs=1)
    path = tmp_path / "c.bin"
    save_checkpoint(path, tiny_gan)
    loaded = load_checkpoint(path)
    save_checkpoint(tmp_path / "d.bin", loaded)
    assert path.read_bytes() == (tmp_path / "d.bin").read_bytes()
    z = sample_latent(stream(9), 4, 8)
    assert generate(loaded.generator, z).tobytes() == generate(tiny_gan.generator, z).tobytes()
    assert loaded.epoch == 1
    assert loaded.config == tiny_gan.config
    assert loaded.rng.random() == tiny_gan.rng.random()


def test_checkpoint_header_layout(tiny_gan):
    raw = checkpoint_bytes(tiny_gan)
    assert raw[:8] == CHECKPOINT_MAGIC
    assert struct.unpack("<I", raw[8:12])[0] == 1
    with pytest.raises(ValueError):
        gan_from_bytes(b"NOTAGAN!" + raw[8:])
    with pytest.raises(ValueError):
        gan_from_bytes(raw[:-5])
