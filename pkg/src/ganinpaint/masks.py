"""Binary inpainting masks: 1 marks a known pixel, 0 a missing one."""
from __future__ import annotations

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from . import rng as rng_mod

FAMILIES = ("center", "pattern", "random", "half")
HALF_SIDES = ("left", "right", "top", "bottom")


def check_mask(mask, require_both: bool = True) -> np.ndarray:
    """Validate a 2-D 0/1 mask and return it as float64."""
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask values must be 0 (missing) or 1 (known)")
    if require_both and (m.all() or not m.any()):
        raise ValueError("mask needs at least one known and one missing pixel")
    return m


def missing_count(mask) -> int:
    return int(np.sum(np.asarray(mask) == 0))


def center_mask(h: int, w: int, hole_fraction: float = 0.5) -> np.ndarray:
    if not 0.0 < hole_fraction < 1.0:
        raise ValueError("hole_fraction must be in (0, 1)")
    hh, hw = int(np.floor(h * hole_fraction)), int(np.floor(w * hole_fraction))
    if hh < 1 or hw < 1 or hh * hw >= h * w:
        raise ValueError(f"degenerate {hh}x{hw} hole for a {h}x{w} mask")
    m = np.ones((h, w))
    top, left = (h - hh) // 2, (w - hw) // 2
    m[top:top + hh, left:left + hw] = 0.0
    return m


def random_mask(h: int, w: int, missing_fraction: float = 0.8, seed: int = 0, exact: bool = True) -> np.ndarray:
    """Scattered missing pixels; exactly floor(h*w*f) of them unless ``exact=False`` (i.i.d. Bernoulli)."""
    if not 0.0 < missing_fraction < 1.0:
        raise ValueError("missing_fraction must be in (0, 1)")
    rng = rng_mod.stream(seed, "mask", "random")
    if not exact:
        return (rng.random((h, w)) >= missing_fraction).astype(np.float64)
    n_missing = int(np.floor(h * w * missing_fraction))
    flat = np.ones(h * w)
    flat[rng.permutation(h * w)[:n_missing]] = 0.0
    return flat.reshape(h, w)


def pattern_mask(
    h: int, w: int, target_missing: float = 0.25, seed: int = 0, tolerance: float = 0.05, max_steps: int = 64
) -> np.ndarray:
    """Contiguous blob-shaped holes from thresholded, Gaussian-smoothed uniform noise."""
    if not 0.0 < target_missing <= 0.5:
        raise ValueError("target_missing must be in (0, 0.5]")
    rng = rng_mod.stream(seed, "mask", "pattern")
    field = ndimage.gaussian_filter(rng.random((h, w)), sigma=h / 8.0, mode="wrap")
    lo, hi = float(field.min()), float(field.max())
    best, best_err = None, np.inf
    for _ in range(max_steps):
        t = 0.5 * (lo + hi)
        missing = field < t
        frac = missing.mean()
        err = abs(frac - target_missing)
        if err < best_err:
            best, best_err = missing, err
        if err <= 0.5 / (h * w):
            break
        if frac < target_missing:
            lo = t
        else:
            hi = t
    if best_err > tolerance:
        raise RuntimeError(f"pattern mask threshold search ended {best_err:.3f} away from target {target_missing}")
    return (~best).astype(np.float64)


def half_mask(h: int, w: int, seed: int = 0) -> np.ndarray:
    """Left, right, top or bottom half missing, picked uniformly by ``seed``."""
    if h < 2 or w < 2:
        raise ValueError("half masks need h, w >= 2")
    side = HALF_SIDES[int(rng_mod.stream(seed, "mask", "half").integers(4))]
    m = np.ones((h, w))
    if side == "left":
        m[:, : w // 2] = 0.0
    elif side == "right":
        m[:, w - w // 2:] = 0.0
    elif side == "top":
        m[: h // 2] = 0.0
    else:
        m[h - h // 2:] = 0.0
    return m


def make_mask(family: str, h: int, w: int, seed: int = 0, **params) -> np.ndarray:
    if family == "center":
        return center_mask(h, w, params.get("hole_fraction", 0.5))
    if family == "pattern":
        return pattern_mask(h, w, params.get("target_missing", 0.25), seed)
    if family == "random":
        return random_mask(h, w, params.get("missing_fraction", 0.8), seed)
    if family == "half":
        return half_mask(h, w, seed)
    raise ValueError(f"unknown mask family {family!r}; valid families: {', '.join(FAMILIES)}")


def save_mask(path, mask) -> None:
    m = check_mask(mask, require_both=False)
    PILImage.fromarray((m * 255).astype(np.uint8)).save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    with PILImage.open(path) as pil:
        if pil.mode != "L":
            raise ValueError(f"{path}: masks must be 8-bit grayscale PNGs, got mode {pil.mode!r}")
        raw = np.asarray(pil)
    if not np.all((raw == 0) | (raw == 255)):
        raise ValueError(f"{path}: mask pixels must be 0 or 255")
    return (raw == 255).astype(np.float64)
