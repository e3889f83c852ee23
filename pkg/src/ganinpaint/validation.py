"""Input checks shared by the estimator, the CLI and the library entry points."""
from __future__ import annotations

import numpy as np

from .masks import check_mask


def check_images(X, channels=None, image_size=None, name: str = "X") -> np.ndarray:
    """Return ``X`` as a float64 (n, c, h, w) array of finite values in [-1, 1].

    A single (c, h, w) image is promoted to a batch of one.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"{name} must be (n, channels, height, width), got shape {X.shape}")
    if len(X) == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains NaN or Inf")
    if X.min() < -1.0 or X.max() > 1.0:
        raise ValueError(f"{name} values must lie in [-1, 1], got [{X.min():.3g}, {X.max():.3g}]")
    if channels is not None and X.shape[1] != channels:
        raise ValueError(f"{name} has {X.shape[1]} channels, model expects {channels}")
    if image_size is not None and X.shape[2:] != (image_size, image_size):
        raise ValueError(f"{name} images are {X.shape[2:]}, model expects {(image_size, image_size)}")
    return X


def check_masks(masks, n: int, shape: tuple[int, int]) -> np.ndarray:
    """One valid mask per image; a single 2-D mask is shared by all ``n`` images."""
    masks = np.asarray(masks, dtype=np.float64)
    if masks.ndim == 2:
        masks = np.broadcast_to(masks, (n,) + masks.shape)
    if masks.ndim != 3 or len(masks) != n:
        raise ValueError(f"expected {n} masks of shape {shape}, got array of shape {masks.shape}")
    if masks.shape[1:] != tuple(shape):
        raise ValueError(f"mask shape {masks.shape[1:]} does not match image shape {tuple(shape)}")
    return np.stack([check_mask(m) for m in masks])
