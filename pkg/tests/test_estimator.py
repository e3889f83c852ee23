import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ganinpaint import GanInpainter
from ganinpaint.data import DatasetSpec, generate_dataset
from ganinpaint.masks import center_mask
from ganinpaint.validation import check_images, check_masks

SMALL = dict(latent_dim=8, base_feature_maps=4, batch_size=16, epochs=1, iterations=5, restarts=2)


@pytest.fixture(scope="module")
def faces():
    return generate_dataset(DatasetSpec("toy_faces", 48, 16, 1, seed=1))


@pytest.fixture(scope="module")
def fitted(faces):
    return GanInpainter(**SMALL).fit(faces)


def test_params_round_trip():
    est = GanInpainter(**SMALL)
    assert est.get_params()["latent_dim"] == 8
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    est.set_params(mode="overlay")
    assert est.mode == "overlay"


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        GanInpainter().transform(np.zeros((1, 1, 16, 16)), center_mask(16, 16))


def test_fit_sets_attributes(fitted):
    assert fitted.n_features_in_ == 256
    assert len(fitted.history_) == 1
    assert fitted.gan_.config.image_size == 16


def test_fit_is_deterministic(faces, fitted):
    again = GanInpainter(**SMALL).fit(faces)
    assert again.history_[0]["d_loss"] == fitted.history_[0]["d_loss"]


def test_transform_keeps_known_pixels(fitted, faces):
    m = center_mask(16, 16)
    est = clone(fitted).set_params(mode="overlay")
    est.gan_ = fitted.gan_
    out = est.transform(faces[:2], m)
    assert out.shape == (2, 1, 16, 16)
    assert np.array_equal(out[:, :, m == 1], faces[:2][:, :, m == 1])
    blended = fitted.transform(faces[:2], m)
    assert np.array_equal(blended[:, :, m == 1], faces[:2][:, :, m == 1])


def test_invert_sample_score(fitted, faces):
    res = fitted.invert(faces[:1], center_mask(16, 16))
    assert len(res) == 1 and len(res[0].total) == 5
    assert fitted.sample(3).shape == (3, 1, 16, 16)
    assert np.isfinite(fitted.score(faces[:2], center_mask(16, 16)))


def test_save_load(tmp_path, fitted):
    fitted.save(tmp_path / "m.bin")
    loaded = GanInpainter.load(tmp_path / "m.bin", iterations=5)
    assert np.array_equal(loaded.sample(2), fitted.sample(2))
    assert loaded.iterations == 5


def test_input_validation(fitted):
    with pytest.raises(ValueError, match="channels"):
        fitted.transform(np.zeros((1, 3, 16, 16)), center_mask(16, 16))
    with pytest.raises(ValueError, match="mask shape"):
        fitted.transform(np.zeros((1, 1, 16, 16)), center_mask(8, 8))
    est = clone(fitted).set_params(mode="x")
    est.gan_ = fitted.gan_
    with pytest.raises(ValueError, match="mode"):
        est.transform(np.zeros((1, 1, 16, 16)), center_mask(16, 16))
    with pytest.raises(ValueError, match="square"):
        GanInpainter(**SMALL).fit(np.zeros((20, 1, 16, 32)))


def test_validation_helpers():
    assert check_images(np.zeros((1, 4, 4))).shape == (1, 1, 4, 4)
    for bad in (np.zeros((4, 4)), np.full((1, 1, 2, 2), 2.0), np.full((1, 1, 2, 2), np.nan), np.zeros((0, 1, 2, 2))):
        with pytest.raises(ValueError):
            check_images(bad)
    assert check_masks(center_mask(4, 4), 3, (4, 4)).shape == (3, 4, 4)
    with pytest.raises(ValueError):
        check_masks(np.ones((2, 4, 4)), 3, (4, 4))
