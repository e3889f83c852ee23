"""scikit-learn style front end: ``fit`` trains the GAN, ``transform`` inpaints."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import gan as gan_mod
from .blend import MODES, finish
from .gan import Gan, GanConfig
from .inpaint import InpaintConfig, InpaintResult, invert_batch
from .metrics import psnr
from .validation import check_images, check_masks


class GanInpainter(BaseEstimator):
    """Inpainting by latent search in a GAN trained on clean images.

    Parameters
    ----------
    latent_dim, base_feature_maps, lr, beta1, beta2, batch_size, epochs, flip_augmentation
        GAN architecture and training settings. Image size and channel count
        are taken from the data passed to ``fit``.
    prior_weight, iterations, window_size, latent_lr, restarts, clip_latent
        Latent search settings.
    mode : {"blend", "overlay"}
        How the generated image is merged with the known pixels.
    random_state : int
        Master seed for initialization, training and restarts.

    Attributes
    ----------
    gan_ : Gan
        Trained networks, optimizer and RNG state.
    history_ : list of dict
        Per-epoch training records.
    """

    def __init__(
        self,
        latent_dim=64,
        base_feature_maps=32,
        lr=2e-4,
        beta1=0.5,
        beta2=0.999,
        batch_size=64,
        epochs=25,
        flip_augmentation=True,
        prior_weight=0.003,
        iterations=1500,
        window_size=7,
        latent_lr=0.1,
        restarts=3,
        clip_latent=True,
        mode="blend",
        random_state=0,
    ):
        self.latent_dim = latent_dim
        self.base_feature_maps = base_feature_maps
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.batch_size = batch_size
        self.epochs = epochs
        self.flip_augmentation = flip_augmentation
        self.prior_weight = prior_weight
        self.iterations = iterations
        self.window_size = window_size
        self.latent_lr = latent_lr
        self.restarts = restarts
        self.clip_latent = clip_latent
        self.mode = mode
        self.random_state = random_state

    def _gan_config(self, X) -> GanConfig:
        return GanConfig(
            latent_dim=self.latent_dim,
            image_size=X.shape[2],
            channels=X.shape[1],
            base_feature_maps=self.base_feature_maps,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.random_state,
            flip_augmentation=self.flip_augmentation,
        )

    def inpaint_config(self) -> InpaintConfig:
        return InpaintConfig(
            prior_weight=self.prior_weight,
            iterations=self.iterations,
            window_size=self.window_size,
            lr=self.latent_lr,
            restarts=self.restarts,
            seed=self.random_state,
            clip_latent=self.clip_latent,
        )

    def fit(self, X, y=None):
        X = check_images(X)
        if X.shape[2] != X.shape[3]:
            raise ValueError(f"images must be square, got {X.shape[2:]}")
        self.gan_ = Gan.initialize(self._gan_config(X))
        self.history_ = gan_mod.train(self.gan_, X)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    @classmethod
    def from_gan(cls, gan: Gan, **params) -> "GanInpainter":
        """Wrap an already trained model (e.g. a loaded checkpoint)."""
        c = gan.config
        est = cls(
            latent_dim=c.latent_dim,
            base_feature_maps=c.base_feature_maps,
            lr=c.lr,
            beta1=c.beta1,
            beta2=c.beta2,
            batch_size=c.batch_size,
            epochs=c.epochs,
            flip_augmentation=c.flip_augmentation,
            random_state=c.seed,
        )
        est.set_params(**params)
        est.gan_ = gan
        est.history_ = []
        est.n_features_in_ = c.channels * c.image_size ** 2
        return est

    def _check_input(self, X, masks):
        check_is_fitted(self, "gan_")
        c = self.gan_.config
        X = check_images(X, channels=c.channels, image_size=c.image_size)
        return X, check_masks(masks, len(X), X.shape[2:])

    def invert(self, X, masks) -> list[InpaintResult]:
        """Latent search only; one result per image."""
        X, masks = self._check_input(X, masks)
        cfg = self.inpaint_config()
        seeds = [cfg.seed + i for i in range(len(X))]
        return invert_batch(X, list(masks), self.gan_.generator, self.gan_.discriminator, cfg, seeds)

    def transform(self, X, masks):
        """Inpaint the missing pixels (mask == 0) of each image in ``X``."""
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        X, masks = self._check_input(X, masks)
        results = self.invert(X, masks)
        return np.stack([finish(X[i], masks[i], r.generated, self.mode) for i, r in enumerate(results)])

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        check_is_fitted(self, "gan_")
        from .rng import stream

        z = gan_mod.sample_latent(stream(seed, "sample"), n, self.gan_.config.latent_dim)
        return gan_mod.generate(self.gan_.generator, z)

    def score(self, X, masks) -> float:
        """Mean full-image PSNR (dB) of the reconstructions against ``X``."""
        X, masks = self._check_input(X, masks)
        out = self.transform(np.where(masks[:, None] == 1, X, 0.0), masks)
        return float(np.mean([psnr(a, b) for a, b in zip(out, X)]))

    def save(self, path) -> None:
        check_is_fitted(self, "gan_")
        gan_mod.save_checkpoint(path, self.gan_)

    @classmethod
    def load(cls, path, **params) -> "GanInpainter":
        return cls.from_gan(gan_mod.load_checkpoint(path), **params)
