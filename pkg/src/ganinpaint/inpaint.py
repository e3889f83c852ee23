"""Latent-space search for the encoding that best explains a corrupted image.

The objective for a latent z is

    context(z) + prior(z) = sum_i W_i |G(z)_i - y_i| + lambda * log(1 - D(G(z)))

where W weights each known pixel by the fraction of missing pixels around
it.  z is optimized with Adam and clamped to [-1, 1] after every step;
several random starts are run and the one with the lowest final objective
is kept.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng as rng_mod
from .autodiff import AdamState, NonFiniteError, Tensor, adam_step, clamped_log_prob
from .autodiff import ops
from .gan import Discriminator, Generator, sample_latent
from .masks import check_mask

logger = logging.getLogger(__name__)


@dataclass
class InpaintConfig:
    prior_weight: float = 0.003
    iterations: int = 1500
    window_size: int = 7
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    restarts: int = 3
    seed: int = 0
    clip_latent: bool = True

    def __post_init__(self):
        if self.prior_weight < 0:
            raise ValueError("prior_weight must be non-negative")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError(f"window_size must be a positive odd integer, got {self.window_size}")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")


@dataclass
class InpaintResult:
    z: np.ndarray
    generated: np.ndarray
    context: np.ndarray
    prior: np.ndarray
    total: np.ndarray
    restart: int
    restart_losses: list = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def final_loss(self) -> float:
        return float(self.restart_losses[self.restart])

    def trajectory_records(self) -> list[dict]:
        return [
            {"iteration": k + 1, "context": float(c), "prior": float(p), "total": float(t)}
            for k, (c, p, t) in enumerate(zip(self.context, self.prior, self.total))
        ]


def write_trajectory(path, result: InpaintResult) -> None:
    with open(path, "w") as fh:
        for rec in result.trajectory_records():
            fh.write(json.dumps(rec) + "\n")


def _window_sums(a: np.ndarray, r: int) -> np.ndarray:
    """Sum of ``a`` over the (2r+1)^2 window around each pixel, truncated at the borders."""
    h, w = a.shape
    sat = np.zeros((h + 1, w + 1), dtype=np.int64)
    sat[1:, 1:] = a.cumsum(0).cumsum(1)
    rows, cols = np.arange(h), np.arange(w)
    r0, r1 = np.clip(rows - r, 0, h), np.clip(rows + r + 1, 0, h)
    c0, c1 = np.clip(cols - r, 0, w), np.clip(cols + r + 1, 0, w)
    return sat[np.ix_(r1, c1)] - sat[np.ix_(r0, c1)] - sat[np.ix_(r1, c0)] + sat[np.ix_(r0, c0)]


def importance_weights(mask, window_size: int = 7) -> np.ndarray:
    """Fraction of missing pixels among each known pixel's window neighbours.

    The window excludes the pixel itself and is truncated at image borders;
    missing pixels get weight 0.
    """
    if window_size < 1 or window_size % 2 == 0:
        raise ValueError(f"window_size must be a positive odd integer, got {window_size}")
    m = check_mask(mask, require_both=False)
    r = window_size // 2
    missing = (m == 0).astype(np.int64)
    counts = _window_sums(missing, r)
    neighbours = _window_sums(np.ones_like(missing), r) - 1
    with np.errstate(invalid="ignore", divide="ignore"):
        w = counts / neighbours
    return np.where((m == 1) & (neighbours > 0), w, 0.0)


def _context_terms(g_z: Tensor, y: np.ndarray, weights: np.ndarray) -> Tensor:
    """Per-sample weighted l1 distance for an (n, c, h, w) batch; weights are (h, w) or (n, h, w)."""
    weights = np.asarray(weights)
    weights = weights[None, None] if weights.ndim == 2 else weights[:, None]
    diff = ops.abs(ops.sub(g_z, y))
    return ops.sum(ops.mul(diff, weights), axis=(1, 2, 3))


def _prior_terms(D: Discriminator, g_z: Tensor, prior_weight: float) -> Tensor:
    p = D.forward(g_z, D.leaves(False))
    return ops.mul_const(clamped_log_prob(ops.sub(1.0, p)), prior_weight)


def _as_batch(a) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    return ops.reshape(a, (1,) + a.shape) if a.ndim == 3 else a


def context_loss(g_z, y, weights) -> Tensor:
    """sum over pixels and channels of W * |G(z) - y|; W is spatial and shared by channels."""
    g_z = _as_batch(g_z)
    y = np.asarray(y, dtype=np.float64)
    y = y[None] if y.ndim == 3 else y
    weights = np.asarray(weights, dtype=np.float64)
    if g_z.shape != y.shape:
        raise ValueError(f"context_loss: generated shape {g_z.shape} vs input shape {y.shape}")
    if weights.shape != y.shape[-2:]:
        raise ValueError(f"context_loss: weight shape {weights.shape} vs image shape {y.shape[-2:]}")
    return ops.sum(_context_terms(g_z, y, weights))


def prior_loss(D: Discriminator, g_z, prior_weight: float) -> Tensor:
    """prior_weight * log(1 - D(G(z))) with D's output clamped away from 0 and 1."""
    return ops.sum(_prior_terms(D, _as_batch(g_z), prior_weight))


def total_loss(z, y, mask, G: Generator, D: Discriminator, config: InpaintConfig) -> Tensor:
    z = z if isinstance(z, Tensor) else Tensor(z)
    z = ops.reshape(z, (1, -1)) if z.ndim == 1 else z
    g_z = G.forward(z, G.leaves(False), training=False)
    weights = importance_weights(mask, config.window_size)
    return ops.add(context_loss(g_z, y, weights), prior_loss(D, g_z, config.prior_weight))


def _objective(Z, ys, weights, G, D, prior_weight, with_grad):
    zt = Tensor(Z, requires_grad=with_grad)
    g_z = G.forward(zt, G.leaves(False), training=False)
    ctx = _context_terms(g_z, ys, weights)
    pri = _prior_terms(D, g_z, prior_weight)
    tot = ops.add(ctx, pri)
    if with_grad:
        ops.sum(tot).backward()
    return ctx.data, pri.data, tot.data, (zt.grad if with_grad else None)


def _objective_rows(Z, ys, weights, G, D, prior_weight, with_grad):
    """Objective per row; rows whose own evaluation is non-finite come back as NaN."""
    try:
        return _objective(Z, ys, weights, G, D, prior_weight, with_grad)
    except NonFiniteError:
        pass
    n = Z.shape[0]
    ctx, pri, tot = np.full(n, np.nan), np.full(n, np.nan), np.full(n, np.nan)
    grad = np.zeros_like(Z)
    for i in range(n):
        try:
            c, p, t, g = _objective(Z[i:i + 1], ys[i:i + 1], weights[i:i + 1], G, D, prior_weight, with_grad)
        except NonFiniteError as exc:
            logger.warning("restart row %d aborted: %s", i, exc)
            continue
        ctx[i], pri[i], tot[i] = c[0], p[0], t[0]
        if with_grad:
            grad[i] = g[0]
    return ctx, pri, tot, grad


def invert_batch(
    ys,
    masks,
    G: Generator,
    D: Discriminator,
    config: InpaintConfig,
    seeds: Optional[Sequence[int]] = None,
) -> list[InpaintResult]:
    """Invert several images at once.

    Every (image, restart) pair is an independent row of one latent batch;
    the generator runs in inference mode so rows never interact, and Adam
    is elementwise, so each row follows exactly its own optimization path.
    Restart ``k`` of image ``b`` starts from the "inpaint-restart" stream of
    ``seeds[b]`` (default ``config.seed`` for every image).
    """
    t0 = time.perf_counter()
    ys = np.asarray(ys, dtype=np.float64)
    masks = [check_mask(m) for m in masks]
    if ys.ndim != 4 or len(ys) != len(masks):
        raise ValueError("ys must be (n, c, h, w) with one mask per image")
    expected = (G.config.channels, G.config.image_size, G.config.image_size)
    if ys.shape[1:] != expected:
        raise ValueError(f"image shape {ys.shape[1:]} does not match model shape {expected}")
    for m in masks:
        if m.shape != ys.shape[2:]:
            raise ValueError(f"mask shape {m.shape} does not match image shape {ys.shape[2:]}")
    seeds = [config.seed] * len(ys) if seeds is None else list(seeds)
    n_img, R, L = len(ys), config.restarts, G.config.latent_dim

    Z = np.concatenate(
        [sample_latent(rng_mod.stream(seeds[b], "inpaint-restart", k), 1, L) for b in range(n_img) for k in range(R)]
    )
    row_y = np.repeat(ys, R, axis=0)
    row_w = np.repeat(np.stack([importance_weights(m, config.window_size) for m in masks]), R, axis=0)
    state = AdamState()
    active = np.ones(len(Z), dtype=bool)
    traj = np.empty((config.iterations, len(Z), 3))

    for it in range(config.iterations):
        ctx, pri, tot, grad = _objective_rows(Z, row_y, row_w, G, D, config.prior_weight, True)
        traj[it] = np.stack([ctx, pri, tot], axis=1)
        active &= np.isfinite(tot)
        if not active.any():
            break
        before = Z.copy()
        params = {"z": Z}
        adam_step(params, {"z": np.where(active[:, None], grad, 0.0)}, state, config.lr, config.beta1, config.beta2)
        Z[~active] = before[~active]
        if config.clip_latent:
            np.clip(Z, -1.0, 1.0, out=Z)

    _, _, final, _ = _objective_rows(Z, row_y, row_w, G, D, config.prior_weight, False)
    final = np.where(active & np.isfinite(final), final, np.inf)
    generated = G(Tensor(Z), training=False).data
    elapsed = time.perf_counter() - t0

    results = []
    for b in range(n_img):
        rows = slice(b * R, (b + 1) * R)
        losses = final[rows]
        if not np.isfinite(losses).any():
            raise FloatingPointError(f"image {b}: all {R} restarts produced non-finite losses")
        k = int(np.argmin(losses))  # first minimum: ties go to the lowest restart index
        row = b * R + k
        results.append(
            InpaintResult(
                z=Z[row].copy(),
                generated=generated[row].copy(),
                context=traj[:, row, 0].copy(),
                prior=traj[:, row, 1].copy(),
                total=traj[:, row, 2].copy(),
                restart=k,
                restart_losses=[float(v) for v in losses],
                wall_time_s=elapsed / n_img,
            )
        )
    return results


def invert(y, mask, G: Generator, D: Discriminator, config: InpaintConfig) -> InpaintResult:
    """Search the latent space for the encoding closest to the known part of ``y``."""
    y = np.asarray(y, dtype=np.float64)
    return invert_batch(y[None], [mask], G, D, config)[0]


def config_dict(config: InpaintConfig) -> dict:
    return asdict(config)


def grad_check_case(seed: int = 0, image_size: int = 16, latent_dim: int = 8):
    """A small randomly initialized model plus corrupted image for checking d total_loss / dz.

    Returns ``(builder, z0)`` for :func:`ganinpaint.autodiff.grad_check`.
    """
    from .gan import Gan, GanConfig
    from .masks import random_mask

    cfg = GanConfig(latent_dim=latent_dim, image_size=image_size, channels=1, base_feature_maps=4, seed=seed)
    gan = Gan.initialize(cfg)
    rng = rng_mod.stream(seed, "grad-check", "total_loss")
    mask = random_mask(image_size, image_size, 0.5, seed=seed)
    y = np.where(mask[None] == 1, rng.uniform(-1, 1, (1, image_size, image_size)), 0.0)
    icfg = InpaintConfig(prior_weight=0.5)
    z0 = rng.uniform(-0.9, 0.9, (1, latent_dim))

    def builder(z):
        return total_loss(z, y, mask, gan.generator, gan.discriminator, icfg)

    return builder, z0
