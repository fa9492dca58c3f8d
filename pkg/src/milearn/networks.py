"""Hypernetworks and the primary patch generators/discriminators they parameterize.

A :class:`HyperModel` owns every trainable array in one flat ``params`` dict
keyed by name. Encoders map an image to an embedding; per-scale projection
heads map the embedding to the weights of a 5-block conv generator or
discriminator, one weight set per image in the batch. Per-image weights are
applied with grouped convolutions over the batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DimensionError

ACTIVATIONS = ("leaky_relu", "tanh", "softplus")


@dataclass
class PrimaryConfig:
    blocks: int = 5
    channels: int = 32
    kernel: int = 3
    leaky_slope: float = 0.02
    activation: str = "leaky_relu"

    def __post_init__(self):
        if self.blocks < 2:
            raise ConfigError("primary networks need at least 2 blocks")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ConfigError("kernel size must be odd")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")

    def tensor_shapes(self, kind: str) -> list:
        """Names and shapes of one primary network's parameters, in layer order."""
        c, k = self.channels, self.kernel
        out_last = 3 if kind == "generator" else 1
        chans = [3] + [c] * (self.blocks - 1) + [out_last]
        shapes = []
        for j in range(self.blocks):
            shapes.append((f"w{j + 1}", (chans[j + 1], chans[j], k, k)))
            shapes.append((f"b{j + 1}", (chans[j + 1],)))
        return shapes


@dataclass
class ModelConfig:
    num_scales: int
    primary: PrimaryConfig = field(default_factory=PrimaryConfig)
    embedding_dim: int = 64
    encoder_channels: tuple = (16, 32, 64, 128)
    encoder_input_size: int = 64
    projection_depth: int = 1
    freeze_embedding: bool = False
    discriminator_mode: str = "hyper"
    encoder_mode: str = "separate"
    shared_disc_slope: float = 0.2

    def __post_init__(self):
        self.encoder_channels = tuple(self.encoder_channels)
        if self.discriminator_mode not in ("hyper", "shared"):
            raise ConfigError("discriminator_mode must be 'hyper' or 'shared'")
        if self.encoder_mode not in ("separate", "shared"):
            raise ConfigError("encoder_mode must be 'separate' or 'shared'")
        if self.projection_depth < 1:
            raise ConfigError("projection_depth must be >= 1")
        if self.num_scales < 1:
            raise ConfigError("num_scales must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["primary"] = PrimaryConfig(**d["primary"])
        return cls(**d)


def weight_scale(shape: tuple) -> float:
    """Materialization factor 1/sqrt(c_in * K * K) of a conv weight."""
    _, c_in, k, k2 = shape
    return 1.0 / math.sqrt(c_in * k * k2)


def activation(x: Tensor, name: str, slope: float) -> Tensor:
    if name == "leaky_relu":
        return ad.leaky_relu(x, slope)
    if name == "tanh":
        return ad.tanh(x)
    return ad.softplus(x)


@dataclass
class MaterializedWeights:
    """Primary-network parameters, either one set per image or one shared set.

    Per-sample tensors carry a leading batch axis: weights ``[B, C_out, C_in, K, K]``
    and biases ``[B, C_out]``.
    """

    tensors: list
    kind: str
    scale: int
    per_sample: bool
    slope: float
    activation: str = "leaky_relu"

    @property
    def batch(self) -> Optional[int]:
        return self.tensors[0].shape[0] if self.per_sample else None

    def select(self, b: int) -> "MaterializedWeights":
        """Weights of image ``b`` as a shared set (applied to any batch size)."""
        if not self.per_sample:
            return self
        ts = [ad.reshape(ad.take(t, b), t.shape[1:]) for t in self.tensors]
        return MaterializedWeights(ts, self.kind, self.scale, False, self.slope, self.activation)

    def detach(self) -> "MaterializedWeights":
        return MaterializedWeights([t.detach() for t in self.tensors], self.kind, self.scale,
                                   self.per_sample, self.slope, self.activation)

    def arrays(self) -> list:
        return [t.data for t in self.tensors]


def _conv(x: Tensor, w: Tensor, b: Tensor, per_sample: bool, padding: int) -> Tensor:
    if not per_sample:
        return ad.conv2d(x, w, b, padding=padding)
    n, c_in, h, wd = x.shape
    if w.shape[0] != n:
        raise DimensionError(f"{w.shape[0]} weight sets for a batch of {n}")
    c_out, k = w.shape[1], w.shape[3]
    xg = ad.reshape(x, (1, n * c_in, h, wd))
    wg = ad.reshape(w, (n * c_out, c_in, k, k))
    bg = ad.reshape(b, (n * c_out,))
    y = ad.conv2d(xg, wg, bg, groups=n, padding=padding)
    return ad.reshape(y, (n, c_out, y.shape[2], y.shape[3]))


def _primary(weights: MaterializedWeights, x: Tensor, padding: int, head) -> Tensor:
    ts = weights.tensors
    n_blocks = len(ts) // 2
    h = x
    for j in range(n_blocks):
        h = _conv(h, ts[2 * j], ts[2 * j + 1], weights.per_sample, padding)
        if j < n_blocks - 1:
            h = activation(h, weights.activation, weights.slope)
        elif head is not None:
            h = head(h)
    return h


def generator_forward(weights: MaterializedWeights, prev: Optional[Tensor], z: Tensor) -> Tensor:
    """One residual generator step: ``g(z)`` at scale 1, else ``prev + g(prev + z)``."""
    if prev is None:
        return _primary(weights, z, weights.tensors[0].shape[-1] // 2, ad.tanh)
    if prev.shape != z.shape:
        raise DimensionError(f"previous output {prev.shape} and noise {z.shape} differ")
    return ad.add(prev, _primary(weights, ad.add(prev, z), weights.tensors[0].shape[-1] // 2, ad.tanh))


def discriminator_forward(weights: MaterializedWeights, x: Tensor) -> Tensor:
    """Unpadded fully-convolutional critic; each output cell scores one patch."""
    return _primary(weights, x, 0, None)


class EmbeddingNet:
    """Strided conv encoder + global average pool + linear, over ``model.params``."""

    def __init__(self, params: dict, prefix: str, cfg: ModelConfig):
        self.params = params
        self.prefix = prefix
        self.cfg = cfg

    def param_names(self) -> list:
        names = []
        for j in range(len(self.cfg.encoder_channels)):
            names += [f"{self.prefix}.conv{j}.w", f"{self.prefix}.conv{j}.b"]
        return names + [f"{self.prefix}.fc.w", f"{self.prefix}.fc.b"]

    def init(self, rng: np.random.Generator, dtype) -> None:
        c_prev = 3
        for j, c in enumerate(self.cfg.encoder_channels):
            std = math.sqrt(2.0 / (c_prev * 9))
            self.params[f"{self.prefix}.conv{j}.w"] = _leaf(rng.standard_normal((c, c_prev, 3, 3)) * std, dtype)
            self.params[f"{self.prefix}.conv{j}.b"] = _leaf(np.zeros(c), dtype)
            c_prev = c
        std = math.sqrt(2.0 / c_prev)
        self.params[f"{self.prefix}.fc.w"] = _leaf(rng.standard_normal((self.cfg.embedding_dim, c_prev)) * std, dtype)
        self.params[f"{self.prefix}.fc.b"] = _leaf(np.zeros(self.cfg.embedding_dim), dtype)

    def __call__(self, images: Tensor) -> Tensor:
        s = self.cfg.encoder_input_size
        if images.ndim != 4 or images.shape[1:] != (3, s, s):
            raise DimensionError(f"encoder expects [B, 3, {s}, {s}], got {images.shape}")
        p = self.params
        prim = self.cfg.primary
        h = images
        for j in range(len(self.cfg.encoder_channels)):
            h = ad.conv2d(h, p[f"{self.prefix}.conv{j}.w"], p[f"{self.prefix}.conv{j}.b"], padding=1, stride=2)
            h = activation(h, prim.activation, prim.leaky_slope)
        h = ad.mean(h, axis=(2, 3))
        return ad.linear(h, p[f"{self.prefix}.fc.w"], p[f"{self.prefix}.fc.b"])


class ProjectionHead:
    """Per-scale map from an embedding to every parameter tensor of one primary network."""

    def __init__(self, params: dict, prefix: str, kind: str, cfg: ModelConfig):
        self.params = params
        self.prefix = prefix
        self.kind = kind
        self.cfg = cfg
        self.shapes = cfg.primary.tensor_shapes(kind)

    def param_names(self) -> list:
        names = []
        for j in range(self.cfg.projection_depth - 1):
            names += [f"{self.prefix}.hidden{j}.w", f"{self.prefix}.hidden{j}.b"]
        for t, _ in self.shapes:
            names += [f"{self.prefix}.{t}.w", f"{self.prefix}.{t}.b"]
        return names

    def init(self, rng: np.random.Generator, dtype) -> None:
        e = self.cfg.embedding_dim
        std = math.sqrt(2.0 / e)
        for j in range(self.cfg.projection_depth - 1):
            self.params[f"{self.prefix}.hidden{j}.w"] = _leaf(rng.standard_normal((e, e)) * std, dtype)
            self.params[f"{self.prefix}.hidden{j}.b"] = _leaf(np.zeros(e), dtype)
        for t, shape in self.shapes:
            n = int(np.prod(shape))
            self.params[f"{self.prefix}.{t}.w"] = _leaf(rng.standard_normal((n, e)) * std, dtype)
            self.params[f"{self.prefix}.{t}.b"] = _leaf(np.zeros(n), dtype)

    def __call__(self, embedding: Tensor, scale: int) -> MaterializedWeights:
        return project(self, embedding, scale)


def project(head: ProjectionHead, embedding: Tensor, scale: int) -> MaterializedWeights:
    """Materialize one weight set per embedding row; conv weights get the 1/sqrt(fan_in) factor."""
    p = head.params
    prim = head.cfg.primary
    h = embedding
    for j in range(head.cfg.projection_depth - 1):
        h = ad.linear(h, p[f"{head.prefix}.hidden{j}.w"], p[f"{head.prefix}.hidden{j}.b"])
        h = activation(h, prim.activation, prim.leaky_slope)
    b = embedding.shape[0]
    out = []
    for t, shape in head.shapes:
        flat = ad.linear(h, p[f"{head.prefix}.{t}.w"], p[f"{head.prefix}.{t}.b"])
        v = ad.reshape(flat, (b,) + shape)
        if len(shape) == 4:
            v = ad.scale(v, weight_scale(shape))
        out.append(v)
    return MaterializedWeights(out, head.kind, scale, True, prim.leaky_slope, prim.activation)


def _leaf(a: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(a), requires_grad=True, dtype=dtype)


class HyperModel:
    """Hyper-generator and discriminator (hyper or shared) for all scales.

    ``scale`` is the scale currently being trained (1-based). Generator heads
    exist for scales ``1..scale``; heads below ``scale`` are frozen. The
    discriminator keeps a single active parameter set that is carried forward
    from scale to scale.
    """

    def __init__(self, cfg: ModelConfig, params: Optional[dict] = None, scale: int = 1,
                 frozen: Optional[set] = None):
        self.cfg = cfg
        self.params = params if params is not None else {}
        self.scale = scale
        self.frozen = set(frozen or ())
        enc_g = "enc" if cfg.encoder_mode == "shared" else "enc_g"
        enc_d = "enc" if cfg.encoder_mode == "shared" else "enc_d"
        self.enc_g = EmbeddingNet(self.params, enc_g, cfg)
        self.enc_d = EmbeddingNet(self.params, enc_d, cfg)
        self.proj_d = ProjectionHead(self.params, "proj_d", "discriminator", cfg)
        self.disc_shapes = cfg.primary.tensor_shapes("discriminator")
        for name in self.frozen:
            if name in self.params:
                self.params[name].requires_grad = False

    # -- structure

    def gen_head(self, scale: int) -> ProjectionHead:
        if not 1 <= scale <= self.scale:
            raise ContractError(f"no generator head for scale {scale} (current scale {self.scale})")
        return ProjectionHead(self.params, f"proj_g.{scale}", "generator", self.cfg)

    def generator_param_names(self) -> list:
        """Trainable parameters of the generator side at the current scale."""
        names = [] if self.cfg.freeze_embedding else self.enc_g.param_names()
        names += self.gen_head(self.scale).param_names()
        return [n for n in names if n not in self.frozen]

    def discriminator_param_names(self) -> list:
        if self.cfg.discriminator_mode == "shared":
            return [f"disc.{t}" for t, _ in self.disc_shapes]
        names = [] if self.cfg.freeze_embedding else self.enc_d.param_names()
        return names + self.proj_d.param_names()

    # -- forward pieces

    def embed_g(self, enc_images: Tensor) -> Tensor:
        return self.enc_g(enc_images)

    def embed_d(self, enc_images: Tensor) -> Tensor:
        return self.enc_d(enc_images)

    def gen_weights(self, scale: int, emb: Tensor) -> MaterializedWeights:
        return project(self.gen_head(scale), emb, scale)

    def disc_weights(self, emb_d: Optional[Tensor]) -> MaterializedWeights:
        prim = self.cfg.primary
        if self.cfg.discriminator_mode == "shared":
            ts = []
            for t, shape in self.disc_shapes:
                v = self.params[f"disc.{t}"]
                ts.append(ad.scale(v, weight_scale(shape)) if len(shape) == 4 else v)
            return MaterializedWeights(ts, "discriminator", self.scale, False,
                                       self.cfg.shared_disc_slope, prim.activation)
        return project(self.proj_d, emb_d, self.scale)

    # -- lifecycle

    def advance_scale(self) -> list:
        """Open the next scale; return names whose optimizer state must restart."""
        if self.scale >= self.cfg.num_scales:
            raise ContractError(f"already at the final scale {self.cfg.num_scales}")
        old = self.gen_head(self.scale)
        self.scale += 1
        new = self.gen_head(self.scale)
        for a, b in zip(old.param_names(), new.param_names()):
            self.params[b] = Tensor(self.params[a].data.copy(), requires_grad=True,
                                    dtype=self.params[a].dtype)
            self.params[a].requires_grad = False
            self.frozen.add(a)
        return new.param_names() + self.discriminator_param_names()

    def trainable(self, names) -> list:
        return [self.params[n] for n in names]


def init_model(cfg: ModelConfig, rng: np.random.Generator) -> HyperModel:
    """Kaiming-normal hypernetwork weights, zero biases, model at scale 1."""
    dtype = ad.default_dtype()
    model = HyperModel(cfg)
    model.enc_g.init(rng, dtype)
    if cfg.encoder_mode == "separate":
        model.enc_d.init(rng, dtype)
    model.gen_head(1).init(rng, dtype)
    if cfg.discriminator_mode == "hyper":
        model.proj_d.init(rng, dtype)
    else:
        for t, shape in model.disc_shapes:
            a = rng.standard_normal(shape) * math.sqrt(2.0) if len(shape) == 4 else np.zeros(shape)
            model.params[f"disc.{t}"] = _leaf(a, dtype)
    return model
