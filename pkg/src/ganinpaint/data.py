"""Procedural image datasets, PNG I/O and dataset manifests.

Images are float64 arrays shaped (channels, height, width) with values in
[-1, 1]; a dataset is a stacked (n, channels, height, width) array.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import rng as rng_mod

FAMILIES = ("toy_faces", "digits_grid", "blobs")

# segments a..g of a seven-segment glyph
_SEGMENTS = {
    0: "abcdef",
    1: "bc",
    2: "abdeg",
    3: "abcdg",
    4: "bcfg",
    5: "acdfg",
    6: "acdefg",
    7: "abc",
    8: "abcdefg",
    9: "abcdfg",
}


@dataclass(frozen=True)
class DatasetSpec:
    family: str = "toy_faces"
    count: int = 1000
    image_size: int = 32
    channels: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown dataset family {self.family!r}; valid families: {', '.join(FAMILIES)}")
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")


class _Canvas:
    """Soft-edged shape compositing on a pixel grid (pixel centers at integer coords)."""

    def __init__(self, size: int, channels: int, background):
        self.size = size
        self.yy, self.xx = np.mgrid[0:size, 0:size].astype(np.float64)
        self.img = np.empty((channels, size, size))
        self.img[:] = np.asarray(background, dtype=np.float64).reshape(-1, 1, 1)

    def _paint(self, cov, value):
        value = np.asarray(value, dtype=np.float64).reshape(-1, 1, 1)
        self.img = self.img * (1.0 - cov) + value * cov

    def ellipse(self, cx, cy, rx, ry, value):
        d = np.sqrt(((self.xx - cx) / rx) ** 2 + ((self.yy - cy) / ry) ** 2)
        cov = np.clip(0.5 + (1.0 - d) * min(rx, ry), 0.0, 1.0)
        self._paint(cov, value)

    def ring(self, cx, cy, rx, ry, width, value):
        d = np.sqrt(((self.xx - cx) / rx) ** 2 + ((self.yy - cy) / ry) ** 2)
        dist = np.abs(d - 1.0) * min(rx, ry)
        cov = np.clip(0.5 + (width / 2 - dist), 0.0, 1.0)
        self._paint(cov, value)

    def rect(self, x0, y0, x1, y1, value):
        cx = np.clip(np.minimum(self.xx + 0.5, x1) - np.maximum(self.xx - 0.5, x0), 0.0, 1.0)
        cy = np.clip(np.minimum(self.yy + 0.5, y1) - np.maximum(self.yy - 0.5, y0), 0.0, 1.0)
        self._paint(cx * cy, value)


def _tone(rng, level, channels):
    """A gray level, tinted per channel for colour images."""
    if channels == 1:
        return np.array([level])
    tint = rng.uniform(-0.15, 0.15, size=3)
    return np.clip(level + tint, -1.0, 1.0)


def _toy_face(rng, size, channels):
    s = size / 32.0
    bg = _tone(rng, rng.uniform(-1.0, -0.55), channels)
    c = _Canvas(size, channels, bg)
    cx = size / 2 - 0.5 + rng.uniform(-1.5, 1.5) * s
    cy = size / 2 - 0.5 + rng.uniform(-1.5, 1.5) * s
    rx = rng.uniform(9.0, 11.0) * s
    ry = rng.uniform(11.5, 13.5) * s
    skin = rng.uniform(0.05, 0.6)
    c.ellipse(cx, cy, rx, ry, _tone(rng, skin, channels))
    c.ring(cx, cy, rx, ry, 1.2 * s, _tone(rng, skin - rng.uniform(0.3, 0.6), channels))
    # eyes share a base darkness and placement; the face is left-right symmetric
    eye = rng.uniform(-1.0, -0.2)
    eye_dx = rng.uniform(0.36, 0.46) * rx
    eye_y = cy - rng.uniform(0.18, 0.32) * ry
    eye_r = rng.uniform(1.6, 2.4) * s
    for side in (-1.0, 1.0):
        level = np.clip(eye + rng.normal(0.0, 0.05), -1.0, 1.0)
        c.ellipse(cx + side * eye_dx, eye_y, eye_r, eye_r * rng.uniform(0.75, 0.95), _tone(rng, level, channels))
    mouth_y = cy + rng.uniform(0.35, 0.5) * ry
    mouth_w = rng.uniform(0.3, 0.5) * rx
    c.ellipse(cx, mouth_y, mouth_w, rng.uniform(0.8, 1.6) * s, _tone(rng, rng.uniform(-0.9, -0.3), channels))
    return c.img


def _digit(rng, size, channels):
    s = size / 32.0
    c = _Canvas(size, channels, _tone(rng, rng.uniform(-1.0, 0.2), channels))
    ink = _tone(rng, rng.uniform(0.4, 1.0), channels)
    digit = int(rng.integers(10))
    w = rng.uniform(9.0, 13.0) * s
    h = rng.uniform(18.0, 24.0) * s
    t = rng.uniform(2.0, 3.0) * s
    x0 = rng.uniform(2.0 * s, size - w - 2.0 * s)
    y0 = rng.uniform(2.0 * s, size - h - 2.0 * s)
    xm, ym = x0 + w, y0 + h / 2
    boxes = {
        "a": (x0, y0, xm, y0 + t),
        "b": (xm - t, y0, xm, ym),
        "c": (xm - t, ym, xm, y0 + h),
        "d": (x0, y0 + h - t, xm, y0 + h),
        "e": (x0, ym, x0 + t, y0 + h),
        "f": (x0, y0, x0 + t, ym),
        "g": (x0, ym - t / 2, xm, ym + t / 2),
    }
    for seg in _SEGMENTS[digit]:
        c.rect(*boxes[seg], ink)
    return c.img


def _blobs(rng, size, channels):
    c = _Canvas(size, channels, _tone(rng, rng.uniform(-1.0, -0.4), channels))
    for _ in range(int(rng.integers(1, 4))):
        r = rng.uniform(0.1, 0.3) * size
        c.ellipse(
            rng.uniform(0.15, 0.85) * size,
            rng.uniform(0.15, 0.85) * size,
            r,
            r * rng.uniform(0.5, 1.5),
            _tone(rng, rng.uniform(-0.5, 1.0), channels),
        )
    return c.img


_RENDERERS = {"toy_faces": _toy_face, "digits_grid": _digit, "blobs": _blobs}


def generate_dataset(spec: DatasetSpec) -> np.ndarray:
    """Render ``spec.count`` images; a pure function of the spec."""
    rng = rng_mod.stream(spec.seed, "data", spec.family)
    render = _RENDERERS[spec.family]
    out = np.empty((spec.count, spec.channels, spec.image_size, spec.image_size))
    for i in range(spec.count):
        out[i] = render(rng, spec.image_size, spec.channels)
    return np.clip(out, -1.0, 1.0)


def split(dataset, test_fraction: float, seed: int):
    """Deterministic shuffled split into (train, test)."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    data = np.asarray(dataset)
    n = len(data)
    n_test = min(max(int(round(n * test_fraction)), 1), n - 1)
    perm = rng_mod.stream(seed, "split").permutation(n)
    return data[np.sort(perm[n_test:])], data[np.sort(perm[:n_test])]


def to_uint8(image: np.ndarray) -> np.ndarray:
    """[-1, 1] floats to bytes with round-half-up and clamping."""
    return np.clip(np.floor((np.asarray(image) + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 127.5 - 1.0


def save_image(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ValueError(f"expected a (1|3, h, w) image, got shape {image.shape}")
    raw = to_uint8(image)
    if raw.shape[0] == 1:
        pil = PILImage.fromarray(raw[0])
    else:
        pil = PILImage.fromarray(np.ascontiguousarray(raw.transpose(1, 2, 0)))
    pil.save(path, format="PNG")


def load_image(path) -> np.ndarray:
    try:
        with PILImage.open(path) as pil:
            pil.load()
            mode = pil.mode
            arr = np.asarray(pil)
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc
    if mode == "L":
        return from_uint8(arr[None])
    if mode == "RGB":
        return from_uint8(arr.transpose(2, 0, 1))
    raise ValueError(f"{path}: unsupported PNG mode {mode!r}; need 8-bit grayscale or RGB")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_dataset(directory, spec: DatasetSpec, images: np.ndarray | None = None) -> dict:
    """Write PNGs plus ``manifest.json`` (spec, file list, content hashes)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    images = generate_dataset(spec) if images is None else images
    files = []
    for i, img in enumerate(images):
        name = f"{i:06d}.png"
        save_image(directory / name, img)
        files.append({"name": name, "sha256": sha256_file(directory / name)})
    manifest = {"spec": asdict(spec), "files": files}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_dataset(directory, verify: bool = True) -> tuple[np.ndarray, dict]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    images = []
    for entry in manifest["files"]:
        path = directory / entry["name"]
        if verify and sha256_file(path) != entry["sha256"]:
            raise ValueError(f"content hash mismatch for {path}")
        images.append(load_image(path))
    if not images:
        raise ValueError(f"dataset at {directory} is empty")
    return np.stack(images), manifest
