"""Final reconstruction from a generated image: plain overlay or Poisson blending.

Poisson blending keeps the known pixels of ``y`` and, on the hole, solves
for the image whose 4-neighbour gradients best match those of the
generated image ``g``.  The normal equations are a sparse SPD system per
channel, solved with Jacobi-preconditioned conjugate gradient.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .masks import check_mask

MODES = ("overlay", "blend")
_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))


class ConvergenceError(RuntimeError):
    pass


class IsolatedRegionError(ValueError):
    pass


def _as_chw(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[None] if a.ndim == 2 else a


def overlay(y, mask, g) -> np.ndarray:
    """Known pixels from ``y``, missing ones from ``g``."""
    y, g = _as_chw(y), _as_chw(g)
    m = np.asarray(mask, dtype=np.float64)
    if y.shape != g.shape or y.shape[1:] != m.shape:
        raise ValueError(f"overlay: shapes {y.shape}, {g.shape} and mask {m.shape} disagree")
    return np.where(m[None] == 1, y, g)


@dataclass
class PoissonSystem:
    index: np.ndarray        # (h, w) unknown id per missing pixel, -1 on known pixels
    coords: np.ndarray       # (n, 2) row/col of each unknown
    matrix: sp.csr_matrix    # (n, n) 4-neighbour Laplacian restricted to the hole
    mask: np.ndarray

    @property
    def size(self) -> int:
        return len(self.coords)

    def rhs(self, y: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Guidance divergence plus Dirichlet values of ``y`` for one channel."""
        h, w = self.mask.shape
        b = np.zeros(self.size)
        r, c = self.coords[:, 0], self.coords[:, 1]
        for dr, dc in _OFFSETS:
            rr, cc = r + dr, c + dc
            inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            ri, ci = rr[inside], cc[inside]
            b[inside] += g[r[inside], c[inside]] - g[ri, ci]
            known = self.mask[ri, ci] == 1
            b[np.flatnonzero(inside)[known]] += y[ri[known], ci[known]]
        return b


def build_system(mask) -> PoissonSystem:
    m = check_mask(mask, require_both=False)
    h, w = m.shape
    _check_components(m)
    coords = np.argwhere(m == 0)
    index = -np.ones((h, w), dtype=np.int64)
    index[coords[:, 0], coords[:, 1]] = np.arange(len(coords))
    rows, cols, vals = [], [], []
    degree = np.zeros(len(coords))
    r, c = coords[:, 0], coords[:, 1]
    for dr, dc in _OFFSETS:
        rr, cc = r + dr, c + dc
        inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        degree += inside
        ids = np.flatnonzero(inside)
        nb = index[rr[inside], cc[inside]]
        unknown = nb >= 0
        rows.append(ids[unknown])
        cols.append(nb[unknown])
        vals.append(-np.ones(unknown.sum()))
    n = len(coords)
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(degree)
    matrix = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return PoissonSystem(index=index, coords=coords, matrix=matrix, mask=m)


def _check_components(m: np.ndarray) -> None:
    labels, count = ndimage.label(m == 0)
    if count == 0:
        return
    known_nb = ndimage.binary_dilation(m == 1, structure=ndimage.generate_binary_structure(2, 1))
    touching = np.unique(labels[(labels > 0) & known_nb])
    for lab in range(1, count + 1):
        if lab not in touching:
            pixel = tuple(int(v) for v in np.argwhere(labels == lab)[0])
            raise IsolatedRegionError(
                f"missing region {lab} (containing pixel {pixel}) has no known neighbour to anchor the blend"
            )


def conjugate_gradient(
    A, b: np.ndarray, x0: Optional[np.ndarray] = None, rtol: float = 1e-10, maxiter: Optional[int] = None
) -> tuple[np.ndarray, int, float]:
    """Jacobi-preconditioned CG for SPD ``A``; returns (x, iterations, relative residual)."""
    n = len(b)
    maxiter = 10 * n if maxiter is None else maxiter
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    inv_diag = 1.0 / A.diagonal()
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for k in range(maxiter + 1):
        rel = np.linalg.norm(r) / bnorm
        if rel <= rtol:
            return x, k, rel
        if k == maxiter:
            break
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"conjugate gradient stopped after {maxiter} iterations at relative residual {rel:.3e}")


def poisson_solve(y, mask, g, x0=None, rtol: float = 1e-10) -> np.ndarray:
    """Unclamped gradient-domain solution; known pixels are copied from ``y`` bit for bit."""
    y, g = _as_chw(y), _as_chw(g)
    m = check_mask(mask, require_both=False)
    if y.shape != g.shape or y.shape[1:] != m.shape:
        raise ValueError(f"poisson_blend: shapes {y.shape}, {g.shape} and mask {m.shape} disagree")
    out = y.copy()
    if m.all():
        return out
    system = build_system(m)
    r, c = system.coords[:, 0], system.coords[:, 1]
    for ch in range(y.shape[0]):
        start = None if x0 is None else _as_chw(x0)[ch][r, c]
        x, _, _ = conjugate_gradient(system.matrix, system.rhs(y[ch], g[ch]), start, rtol)
        out[ch, r, c] = x
    return out


def poisson_blend(y, mask, g, x0=None, rtol: float = 1e-10) -> np.ndarray:
    return np.clip(poisson_solve(y, mask, g, x0, rtol), -1.0, 1.0)


def finish(y, mask, g, mode: str = "blend") -> np.ndarray:
    if mode == "overlay":
        return overlay(y, mask, g)
    if mode == "blend":
        return poisson_blend(y, mask, g)
    raise ValueError(f"unknown finish mode {mode!r}; choose from {MODES}")


def seam_energy(x, mask) -> float:
    """Sum of squared jumps across known/missing 4-neighbour pairs, over all channels."""
    x = _as_chw(x)
    m = np.asarray(mask)
    total = 0.0
    for axis in (1, 2):
        a = np.take(m, range(m.shape[axis - 1] - 1), axis=axis - 1)
        b = np.take(m, range(1, m.shape[axis - 1]), axis=axis - 1)
        xa = np.take(x, range(x.shape[axis] - 1), axis=axis)
        xb = np.take(x, range(1, x.shape[axis]), axis=axis)
        crossing = (a != b)[None]
        total += float(np.sum(((xa - xb) ** 2) * crossing))
    return total
