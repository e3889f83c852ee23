"""Image-quality metrics, baseline fillers and the method x mask-family evaluation grid."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .blend import overlay, poisson_blend
from .masks import make_mask

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
METHODS = ("ours_blend", "ours_overlay", "mean_fill", "nn_fill")
REPORT_SCHEMA_VERSION = 1


def _unit(a) -> np.ndarray:
    """[-1, 1] -> [0, 1]."""
    return (np.asarray(a, dtype=np.float64) + 1.0) / 2.0


def _psnr_from_mse(mse: float) -> float:
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB, computed on [0, 1] images with peak 1."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    return _psnr_from_mse(float(np.mean((_unit(a) - _unit(b)) ** 2)))


def masked_psnr(a, b, mask) -> float:
    """PSNR over the missing pixels (mask == 0) only, all channels."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"masked_psnr: shape mismatch {a.shape} vs {b.shape}")
    hole = np.broadcast_to(np.asarray(mask) == 0, a.shape)
    if not hole.any():
        raise ValueError("masked_psnr: mask has no missing pixels")
    return _psnr_from_mse(float(np.mean((_unit(a)[hole] - _unit(b)[hole]) ** 2)))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _ssim_channel(x, y, win, c1, c2):
    k = win.shape[0]
    def filt(img):
        return np.tensordot(sliding_window_view(img, (k, k)), win, axes=([2, 3], [0, 1]))
    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x ** 2
    syy = filt(y * y) - mu_y ** 2
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Gaussian-window SSIM over valid positions, averaged over channels."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < window:
        raise ValueError(f"ssim: image {a.shape[-2:]} smaller than the {window}x{window} window")
    win = gaussian_window(window, sigma)
    c1, c2 = k1 ** 2, k2 ** 2
    ua, ub = _unit(a), _unit(b)
    return float(np.mean([_ssim_channel(ua[c], ub[c], win, c1, c2) for c in range(a.shape[0])]))


def mean_fill(y, mask) -> np.ndarray:
    """Fill the hole with the per-channel mean of the known pixels."""
    y = np.asarray(y, dtype=np.float64)
    known = np.asarray(mask) == 1
    if not known.any():
        raise ValueError("mean_fill needs at least one known pixel")
    means = y[:, known].mean(axis=1)
    return np.where(known[None], y, means[:, None, None])


def nearest_neighbor(y, mask, train_set) -> int:
    """Index of the training image closest to ``y`` in squared distance over known pixels."""
    train = np.asarray(train_set, dtype=np.float64)
    if len(train) == 0:
        raise ValueError("nn_fill needs a non-empty training set")
    known = (np.asarray(mask) == 1)
    d = (((train - np.asarray(y)[None]) ** 2) * known[None, None]).sum(axis=(1, 2, 3))
    return int(np.argmin(d))


def nn_fill(y, mask, train_set) -> np.ndarray:
    """Copy the hole from the nearest training image (distance over known pixels)."""
    idx = nearest_neighbor(y, mask, train_set)
    return overlay(y, mask, np.asarray(train_set, dtype=np.float64)[idx])


def error_image(result, real, gain: float = 2.0) -> np.ndarray:
    """Amplified absolute error for display: clamp(gain * |result - real|) on [0, 1] images."""
    if gain <= 0:
        raise ValueError("gain must be positive")
    return np.clip(gain * np.abs(_unit(result) - _unit(real)), 0.0, 1.0)


@dataclass
class EvalReport:
    methods: list
    mask_families: list
    n_images: int
    cells: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @staticmethod
    def key(method: str, family: str) -> str:
        return f"{method}/{family}"

    def cell(self, method: str, family: str) -> dict:
        return self.cells[self.key(method, family)]

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "methods": list(self.methods),
            "mask_families": list(self.mask_families),
            "n_images": self.n_images,
            "config": self.config,
            "cells": self.cells,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        if d.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema_version')!r}")
        return cls(d["methods"], d["mask_families"], d["n_images"], d["cells"], d.get("config", {}))


def _cell(rows: dict) -> dict:
    cell = {k: [float(v) for v in vals] for k, vals in rows.items()}
    cell["aggregate"] = {k: float(np.mean(vals)) for k, vals in rows.items()}
    cell["error"] = None
    return cell


def corrupt(image, mask, fill: float = 0.0) -> np.ndarray:
    """Blank the missing pixels of ``image``."""
    return np.where(np.asarray(mask)[None] == 1, image, fill)


def evaluate(
    methods: Sequence[str],
    test_set,
    mask_families: Sequence[str],
    G=None,
    D=None,
    inpaint_config=None,
    train_set=None,
    mask_seed: int = 0,
    mask_params: Optional[dict] = None,
) -> EvalReport:
    """Fill the method x mask-family grid with per-image PSNR, hole PSNR and SSIM.

    Test image ``i`` gets mask seed ``mask_seed + i`` and inversion seed
    ``inpaint_config.seed + i``.  A failing cell is recorded with its error
    message instead of aborting the whole run.
    """
    from .inpaint import invert_batch

    test = np.asarray(test_set, dtype=np.float64)
    if test.ndim != 4 or len(test) == 0:
        raise ValueError("evaluate needs a non-empty (n, c, h, w) test set")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; valid: {METHODS}")
    mask_params = mask_params or {}
    n, _, h, w = test.shape
    report = EvalReport(list(methods), list(mask_families), n)

    for family in mask_families:
        masks = [make_mask(family, h, w, seed=mask_seed + i, **mask_params.get(family, {})) for i in range(n)]
        ys = np.stack([corrupt(test[i], masks[i]) for i in range(n)])
        generated = None
        if any(m.startswith("ours") for m in methods):
            try:
                results = invert_batch(
                    ys, masks, G, D, inpaint_config, seeds=[inpaint_config.seed + i for i in range(n)]
                )
                generated = [r.generated for r in results]
                d_scores = D(np.stack(generated)).data
            except Exception as exc:  # recorded per cell below
                generated = exc
        for method in methods:
            key = EvalReport.key(method, family)
            try:
                if method.startswith("ours") and isinstance(generated, Exception):
                    raise generated
                rows = {"psnr": [], "masked_psnr": [], "ssim": []}
                for i in range(n):
                    if method == "ours_blend":
                        out = poisson_blend(ys[i], masks[i], generated[i])
                    elif method == "ours_overlay":
                        out = overlay(ys[i], masks[i], generated[i])
                    elif method == "mean_fill":
                        out = mean_fill(ys[i], masks[i])
                    else:
                        if train_set is None:
                            raise ValueError("nn_fill needs a training set")
                        out = nn_fill(ys[i], masks[i], train_set)
                    rows["psnr"].append(psnr(out, test[i]))
                    rows["masked_psnr"].append(masked_psnr(out, test[i], masks[i]))
                    rows["ssim"].append(ssim(out, test[i]))
                if method.startswith("ours"):
                    rows["d_score"] = list(d_scores)
                report.cells[key] = _cell(rows)
            except Exception as exc:
                logger.warning("cell %s failed: %s", key, exc)
                report.cells[key] = {"error": f"{type(exc).__name__}: {exc}"}
    return report
