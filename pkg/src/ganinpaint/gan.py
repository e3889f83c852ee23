"""DCGAN-style generator/discriminator pair, adversarial training and checkpoints."""
from __future__ import annotations

import io
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from . import rng as rng_mod
from .autodiff import Adam, NonFiniteError, Tensor, clamped_log_prob
from .autodiff import ops

logger = logging.getLogger(__name__)

KERNEL = 4
PROB_CLAMP = 1e-7
LEAK = 0.2
CHECKPOINT_MAGIC = b"GANPAINT"
CHECKPOINT_VERSION = 1


@dataclass
class GanConfig:
    latent_dim: int = 64
    image_size: int = 32
    channels: int = 1
    base_feature_maps: int = 32
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 64
    epochs: int = 25
    seed: int = 0
    flip_augmentation: bool = True

    def __post_init__(self):
        if self.image_size not in (16, 32, 64):
            raise ValueError(f"image_size must be 16, 32 or 64, got {self.image_size}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        for name in ("latent_dim", "base_feature_maps", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    @property
    def depth(self) -> int:
        return int(math.log2(self.image_size)) - 2

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


class Network:
    """Named float64 parameters, non-trainable buffers and an Adam optimizer."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.optimizer = Adam()

    def leaves(self, requires_grad: bool) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    @staticmethod
    def collect_grads(leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}

    def _bn(self, h: Tensor, name: str, p: dict[str, Tensor], training: bool, update_running: bool) -> Tensor:
        running = {"mean": self.buffers[f"{name}.running_mean"], "var": self.buffers[f"{name}.running_var"]}
        return ops.batchnorm2d(
            h,
            p[f"{name}.gamma"],
            p[f"{name}.beta"],
            training=training,
            running=running if (update_running or not training) else None,
        )

    def _add_bn(self, name: str, channels: int, rng: np.random.Generator) -> None:
        self.params[f"{name}.gamma"] = rng.normal(1.0, 0.02, size=channels)
        self.params[f"{name}.beta"] = np.zeros(channels)
        self.buffers[f"{name}.running_mean"] = np.zeros(channels)
        self.buffers[f"{name}.running_var"] = np.ones(channels)


class Generator(Network):
    """Latent vector -> image: projection to 4x4, stride-2 upsampling blocks, tanh."""

    def __init__(self, config: GanConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        depth = config.depth
        widths = [config.base_feature_maps * 2 ** (depth - 1 - i) for i in range(depth)]
        self.widths = widths
        self.params["proj.w"] = rng.normal(0.0, 0.02, size=(config.latent_dim, widths[0] * 16))
        self._add_bn("proj_bn", widths[0], rng)
        for i in range(depth):
            cin = widths[i]
            cout = widths[i + 1] if i + 1 < depth else config.channels
            self.params[f"up{i}.w"] = rng.normal(0.0, 0.02, size=(cin, cout, KERNEL, KERNEL))
            if i + 1 < depth:
                self._add_bn(f"up{i}_bn", cout, rng)

    def forward(self, z: Tensor, p: dict[str, Tensor], training: bool = False, update_running: bool = True) -> Tensor:
        n = z.shape[0]
        h = ops.matmul(z, p["proj.w"])
        h = ops.reshape(h, (n, self.widths[0], 4, 4))
        h = ops.relu(self._bn(h, "proj_bn", p, training, update_running))
        depth = self.config.depth
        for i in range(depth):
            h = ops.conv_transpose2d(h, p[f"up{i}.w"], stride=2, padding=1)
            if i + 1 < depth:
                h = ops.relu(self._bn(h, f"up{i}_bn", p, training, update_running))
        return ops.tanh(h)

    def __call__(self, z, training: bool = False) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(z)
        return self.forward(z, self.leaves(False), training=training, update_running=False)


class Discriminator(Network):
    """Image -> probability of being real: stride-2 conv blocks, leaky ReLU, sigmoid head."""

    def __init__(self, config: GanConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        depth = config.depth
        cin = config.channels
        for i in range(depth):
            cout = config.base_feature_maps * 2 ** i
            self.params[f"down{i}.w"] = rng.normal(0.0, 0.02, size=(cout, cin, KERNEL, KERNEL))
            self.params[f"down{i}.b"] = np.zeros(cout)
            cin = cout
        self.params["head.w"] = rng.normal(0.0, 0.02, size=(cin * 16, 1))
        self.params["head.b"] = np.zeros(1)

    def logits(self, x: Tensor, p: dict[str, Tensor]) -> Tensor:
        h = x
        for i in range(self.config.depth):
            h = ops.conv2d(h, p[f"down{i}.w"], stride=2, padding=1)
            b = p[f"down{i}.b"]
            h = ops.leaky_relu(ops.add(h, ops.reshape(b, (1, b.shape[0], 1, 1))), LEAK)
        n = x.shape[0]
        h = ops.reshape(h, (n, -1))
        return ops.reshape(ops.add(ops.matmul(h, p["head.w"]), p["head.b"]), (n,))

    def forward(self, x: Tensor, p: dict[str, Tensor]) -> Tensor:
        return ops.clip(ops.sigmoid(self.logits(x, p)), PROB_CLAMP, 1.0 - PROB_CLAMP)

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        return self.forward(x, self.leaves(False))


@dataclass
class Gan:
    """Everything training needs to continue: both networks, RNG and epoch counter."""

    config: GanConfig
    generator: Generator
    discriminator: Discriminator
    rng: np.random.Generator
    epoch: int = 0

    @classmethod
    def initialize(cls, config: GanConfig) -> "Gan":
        init = rng_mod.stream(config.seed, "init")
        g = Generator(config, init)
        d = Discriminator(config, init)
        for net in (g, d):
            net.optimizer = Adam(config.lr, config.beta1, config.beta2)
        return cls(config, g, d, rng_mod.stream(config.seed, "train"))


def sample_latent(rng: np.random.Generator, n: int, latent_dim: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    return rng.uniform(-1.0, 1.0, size=(n, latent_dim))


def generate(G: Generator, z, training: bool = False) -> np.ndarray:
    z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != G.config.latent_dim:
        raise ValueError(f"latent batch must have shape (n, {G.config.latent_dim}), got {z.shape}")
    return G(Tensor(z), training=training).data


def discriminate(D: Discriminator, images) -> np.ndarray:
    return D(np.asarray(images, dtype=np.float64)).data


def d_loss_value(p_real: Tensor, p_fake: Tensor) -> Tensor:
    """-(E log D(h) + E log(1 - D(G(z)))): the negated discriminator objective."""
    real_term = ops.mean(clamped_log_prob(p_real))
    fake_term = ops.mean(clamped_log_prob(ops.sub(1.0, p_fake)))
    return ops.mul_const(ops.add(real_term, fake_term), -1.0)


def train_step(
    G: Generator, D: Discriminator, real_batch: np.ndarray, rng: np.random.Generator, config: GanConfig
) -> tuple[float, float, float]:
    """One discriminator update then one (non-saturating) generator update."""
    n = real_batch.shape[0]
    z = Tensor(sample_latent(rng, n, config.latent_dim))
    g_leaves = G.leaves(True)
    fake = G.forward(z, g_leaves, training=True)

    try:
        d_leaves = D.leaves(True)
        p_real = D.forward(Tensor(real_batch), d_leaves)
        p_fake = D.forward(Tensor(fake.data), d_leaves)
        d_loss = d_loss_value(p_real, p_fake)
        d_loss.backward()
        D.optimizer.step(D.params, Network.collect_grads(d_leaves))
    except NonFiniteError as exc:
        raise NonFiniteError(f"discriminator update: {exc}") from exc
    d_acc = 0.5 * (float(np.mean(p_real.data > 0.5)) + float(np.mean(p_fake.data < 0.5)))

    try:
        p_gen = D.forward(fake, D.leaves(False))
        g_loss = ops.mul_const(ops.mean(clamped_log_prob(p_gen)), -1.0)
        g_loss.backward()
        G.optimizer.step(G.params, Network.collect_grads(g_leaves))
    except NonFiniteError as exc:
        raise NonFiniteError(f"generator update: {exc}") from exc
    return d_loss.item(), g_loss.item(), d_acc


def _augment(batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    flip = rng.random(batch.shape[0]) < 0.5
    out = batch.copy()
    out[flip] = out[flip][..., ::-1]
    return out


def train(
    gan: Gan,
    dataset: np.ndarray,
    epochs: Optional[int] = None,
    on_epoch: Optional[Callable[["Gan", dict], None]] = None,
) -> list[dict]:
    """Train until ``gan.epoch == epochs`` (default ``config.epochs``); returns per-epoch records.

    Incomplete trailing batches are dropped so batchnorm always sees full batches.
    """
    config = gan.config
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 4 or len(data) == 0:
        raise ValueError("dataset must be a non-empty (n, c, h, w) array")
    expected = (config.channels, config.image_size, config.image_size)
    if data.shape[1:] != expected:
        raise ValueError(f"dataset images have shape {data.shape[1:]}, model expects {expected}")
    if config.batch_size > len(data):
        raise ValueError(f"batch_size {config.batch_size} exceeds dataset size {len(data)}")
    target = config.epochs if epochs is None else epochs
    log = []
    while gan.epoch < target:
        t0 = time.perf_counter()
        order = gan.rng.permutation(len(data))
        stats = []
        for start in range(0, len(data) - config.batch_size + 1, config.batch_size):
            batch = data[order[start:start + config.batch_size]]
            if config.flip_augmentation:
                batch = _augment(batch, gan.rng)
            stats.append(train_step(gan.generator, gan.discriminator, batch, gan.rng, config))
        gan.epoch += 1
        d_loss, g_loss, d_acc = np.mean(stats, axis=0)
        record = {
            "epoch": gan.epoch,
            "d_loss": float(d_loss),
            "g_loss": float(g_loss),
            "d_accuracy": float(d_acc),
            "wall_time_ms": round(1000 * (time.perf_counter() - t0), 3),
        }
        logger.info("epoch %d d_loss=%.4f g_loss=%.4f d_acc=%.3f", gan.epoch, d_loss, g_loss, d_acc)
        log.append(record)
        if on_epoch is not None:
            on_epoch(gan, record)
    return log


# checkpoint format: all integers little-endian
#   magic "GANPAINT" | u32 version | u32 len + config JSON | u32 epoch
#   | u32 len + RNG state JSON | u32 len + optimizer step JSON | u32 block count
#   | blocks: u16 name len, name, u8 ndim, u32 dims..., float64 data


def _write_json(buf: io.BytesIO, obj) -> None:
    raw = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _read_json(buf: io.BytesIO):
    (n,) = struct.unpack("<I", buf.read(4))
    return json.loads(buf.read(n).decode("utf-8"))


def _blocks(gan: Gan) -> Iterable[tuple[str, np.ndarray]]:
    for prefix, net in (("G", gan.generator), ("D", gan.discriminator)):
        for k, v in net.params.items():
            yield f"{prefix}/param/{k}", v
        for k, v in net.buffers.items():
            yield f"{prefix}/buffer/{k}", v
        for k, v in net.optimizer.state.m.items():
            yield f"{prefix}/adam_m/{k}", v
        for k, v in net.optimizer.state.v.items():
            yield f"{prefix}/adam_v/{k}", v


def checkpoint_bytes(gan: Gan) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    _write_json(buf, asdict(gan.config))
    buf.write(struct.pack("<I", gan.epoch))
    _write_json(buf, gan.rng.bit_generator.state)
    _write_json(buf, {"G": gan.generator.optimizer.state.t, "D": gan.discriminator.optimizer.state.t})
    blocks = sorted(_blocks(gan), key=lambda kv: kv[0])
    buf.write(struct.pack("<I", len(blocks)))
    for name, arr in blocks:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def gan_from_bytes(raw: bytes) -> Gan:
    buf = io.BytesIO(raw)
    if buf.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    config = GanConfig.from_dict(_read_json(buf))
    (epoch,) = struct.unpack("<I", buf.read(4))
    rng_state = _read_json(buf)
    steps = _read_json(buf)
    gan = Gan.initialize(config)
    gan.epoch = epoch
    gan.rng.bit_generator.state = rng_state
    nets = {"G": gan.generator, "D": gan.discriminator}
    for key, net in nets.items():
        net.optimizer.state.t = int(steps[key])
    (count,) = struct.unpack("<I", buf.read(4))
    for _ in range(count):
        (nlen,) = struct.unpack("<H", buf.read(2))
        name = buf.read(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", buf.read(1))
        shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf.read(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        prefix, kind, pname = name.split("/", 2)
        net = nets[prefix]
        if kind == "param":
            target = net.params
        elif kind == "buffer":
            target = net.buffers
        elif kind == "adam_m":
            target = net.optimizer.state.m
        elif kind == "adam_v":
            target = net.optimizer.state.v
        else:
            raise ValueError(f"unknown checkpoint block {name!r}")
        if kind in ("param", "buffer") and target[pname].shape != arr.shape:
            raise ValueError(f"block {name!r} has shape {arr.shape}, expected {target[pname].shape}")
        target[pname] = arr
    if buf.read(1):
        raise ValueError("trailing bytes after checkpoint blocks")
    return gan


def save_checkpoint(path, gan: Gan) -> None:
    Path(path).write_bytes(checkpoint_bytes(gan))


def load_checkpoint(path) -> Gan:
    return gan_from_bytes(Path(path).read_bytes())
