"""Progressive adversarial training of the hypernetworks, one scale at a time."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional, Sequence, TextIO

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, NumericError
from .losses import acc_rec_loss, adv_loss, gradient_penalty, reconstruction_path
from .networks import HyperModel, discriminator_forward, generator_forward
from .optim import AdamState, adam_step, clip_grad_norm, lr_at
from .pyramid import ScaleGeometry, build_pyramid, image_id, resize_image, sample_noise


@dataclass
class TrainConfig:
    iterations_per_scale: int = 500
    lr_g: float = 5e-4
    lr_d: float = 5e-4
    betas: tuple = (0.5, 0.999)
    lr_decay_factor: float = 0.1
    lr_decay_at: float = 0.8
    grad_clip_norm: float = 1.0
    batch_size: int = 1
    lambda_gp: float = 0.1
    lambda_rec: float = 50.0
    d_steps: int = 1
    g_steps: int = 1
    gp_mode: str = "real"
    gp_reduction: str = "patch"
    detach_prev_adv: bool = True
    acc_rec: str = "accumulate"
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.iterations_per_scale < 1 or self.batch_size < 1:
            raise ConfigError("iterations_per_scale and batch_size must be positive")
        if self.lr_g < 0 or self.lr_d < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.d_steps < 1 or self.g_steps < 1:
            raise ConfigError("d_steps and g_steps must be >= 1")
        if self.gp_mode not in ("real", "interpolate"):
            raise ConfigError("gp_mode must be 'real' or 'interpolate'")
        if self.gp_reduction not in ("patch", "mean"):
            raise ConfigError("gp_reduction must be 'patch' or 'mean'")
        if self.acc_rec not in ("accumulate", "last_only"):
            raise ConfigError("acc_rec must be 'accumulate' or 'last_only'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class Batch:
    ids: list
    levels: list          # per scale, [B, 3, h_i, w_i]
    enc: np.ndarray       # [B, 3, s, s]


class Dataset:
    """Training images with their pyramids and encoder-resolution copies."""

    def __init__(self, images: Sequence[np.ndarray], geometry: ScaleGeometry, encoder_size: int):
        if len(images) == 0:
            raise ConfigError("the dataset is empty")
        dtype = ad.default_dtype()
        self.geometry = geometry
        self.images = [np.asarray(im, dtype=dtype) for im in images]
        self.ids = [image_id(im) for im in self.images]
        self.pyramids = [build_pyramid(im, geometry, i) for im, i in zip(self.images, self.ids)]
        finest = [p.levels[-1] for p in self.pyramids]
        self.enc = np.stack([resize_image(f, encoder_size, encoder_size) for f in finest]).astype(dtype)

    def __len__(self):
        return len(self.images)

    def batch(self, index: Sequence[int]) -> Batch:
        index = list(index)
        levels = [np.stack([self.pyramids[b].levels[j] for b in index]) for j in range(self.geometry.k)]
        return Batch([self.ids[b] for b in index], levels, self.enc[index])


@dataclass
class TrainState:
    scale: int
    iteration: int
    z0: np.ndarray
    rng: np.random.Generator
    adam: dict = field(default_factory=dict)
    sigmas: dict = field(default_factory=dict)
    completed_scales: int = 0
    optimizer_steps: int = 0


@dataclass
class Checkpoint:
    model: HyperModel
    state: TrainState
    geometry: ScaleGeometry
    train_config: TrainConfig
    run_config: dict = field(default_factory=dict)

    def sigma(self, ident: Optional[str] = None) -> list:
        """Stored noise amplitudes (scale 1 first) for a training image, or their mean."""
        from .errors import CheckpointError

        table = self.state.sigmas
        if not table:
            raise CheckpointError("checkpoint holds no noise amplitudes")
        if ident is not None and ident in table:
            return list(table[ident])
        rows = np.array([v for v in table.values()], dtype=np.float64)
        return list(rows.mean(axis=0))


class TrainingDiverged(NumericError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


class LossLog:
    """Line-delimited loss records: ``scale iter l_adv l_lip l_rec sigma_mean``."""

    def __init__(self, stream: Optional[TextIO] = None):
        self.stream = stream
        self.records: list = []

    def write(self, scale: int, it: int, l_adv: float, l_lip: float, l_rec: float, sigma: float) -> None:
        rec = (scale, it, l_adv, l_lip, l_rec, sigma)
        self.records.append(rec)
        if self.stream is not None:
            self.stream.write(format_record(rec) + "\n")


def format_record(rec) -> str:
    scale, it, *vals = rec
    return f"{scale} {it} " + " ".join(f"{v:.9g}" for v in vals)


def new_state(geometry: ScaleGeometry, seed: int) -> TrainState:
    rng = np.random.default_rng([seed, 1])
    z0 = sample_noise(geometry, 1, 1, rng)
    return TrainState(scale=1, iteration=0, z0=z0, rng=rng)


def noise_amplitude(rec_prev: np.ndarray, target: np.ndarray, scale: int) -> np.ndarray:
    """Per-image RMSE between the upsampled previous reconstruction and the real image."""
    if scale <= 1:
        raise ContractError("scale-1 noise is not rescaled")
    up = rec_prev
    if rec_prev.shape[2:] != target.shape[2:]:
        with ad.no_grad():
            up = ad.upsample(Tensor(rec_prev, dtype=rec_prev.dtype), *target.shape[2:]).data
    diff = up.astype(np.float64) - target.astype(np.float64)
    return np.sqrt(np.mean(diff * diff, axis=(1, 2, 3)))


def _adam_update(model: HyperModel, names: list, grads: list, state: TrainState, lr: float,
                 cfg: TrainConfig) -> float:
    norm = clip_grad_norm(grads, cfg.grad_clip_norm)
    for n, g in zip(names, grads):
        p = model.params[n]
        st = state.adam.get(n)
        if st is None:
            st = state.adam[n] = AdamState.zeros_like(p.data)
        adam_step(p.data, g, st, lr, cfg.betas)
    state.optimizer_steps += 1
    return norm


def _choose(n: int, batch_size: int, rng: np.random.Generator) -> list:
    if batch_size >= n:
        return list(range(n))
    return [int(i) for i in rng.choice(n, size=batch_size, replace=False)]


def _generator_side(model: HyperModel, batch: Batch, state: TrainState, cfg: TrainConfig,
                    noise: list, sigma: Optional[np.ndarray]):
    """Embed, materialize all generator scales, run the reconstruction and sampling paths."""
    i = model.scale
    sizes = [lv.shape[2:] for lv in batch.levels]
    enc = Tensor(batch.enc, dtype=batch.enc.dtype)
    emb = model.embed_g(enc)
    weights = [model.gen_weights(j, emb) for j in range(1, i + 1)]
    recs = reconstruction_path(weights, Tensor(state.z0, dtype=state.z0.dtype), sizes)
    if sigma is None:
        sigma = np.ones((len(batch.ids), i))
        for j in range(2, i + 1):
            sigma[:, j - 1] = noise_amplitude(recs[j - 2].data, batch.levels[j - 1], j)

    def z(j):
        return Tensor(noise[j - 1] * sigma[:, j - 1].reshape(-1, 1, 1, 1).astype(noise[j - 1].dtype),
                      dtype=noise[j - 1].dtype)

    prev = None
    if cfg.detach_prev_adv and i > 1:
        with ad.no_grad():
            for j in range(1, i):
                w = weights[j - 1].detach()
                up = None if prev is None else ad.upsample(prev, *sizes[j - 1])
                prev = generator_forward(w, up, z(j))
        prev = prev.detach()
    else:
        for j in range(1, i):
            up = None if prev is None else ad.upsample(prev, *sizes[j - 1])
            prev = generator_forward(weights[j - 1], up, z(j))
    up = None if prev is None else ad.upsample(prev, *sizes[i - 1])
    fake = generator_forward(weights[i - 1], up, z(i))
    return weights, recs, fake, sigma


def train_step(model: HyperModel, data: Dataset, cfg: TrainConfig, state: TrainState,
               log: Optional[LossLog] = None) -> dict:
    """One iteration: discriminator step(s), then generator step(s)."""
    i = model.scale
    n_iter = cfg.iterations_per_scale
    t = state.iteration
    lr_g = lr_at(t, n_iter, cfg.lr_g, cfg.lr_decay_factor, cfg.lr_decay_at)
    lr_d = lr_at(t, n_iter, cfg.lr_d, cfg.lr_decay_factor, cfg.lr_decay_at)
    rng = state.rng
    batch = data.batch(_choose(len(data), cfg.batch_size, rng))
    bsz = len(batch.ids)
    noise = [sample_noise(data.geometry, j, bsz, rng) for j in range(1, i + 1)]
    real = Tensor(batch.levels[i - 1], dtype=batch.levels[i - 1].dtype)
    enc = Tensor(batch.enc, dtype=batch.enc.dtype)
    hyper_d = model.cfg.discriminator_mode == "hyper"
    shared_enc = model.cfg.encoder_mode == "shared"

    weights, recs, fake, sigma = _generator_side(model, batch, state, cfg, noise, None)
    for b, ident in enumerate(batch.ids):
        state.sigmas[ident] = [float(s) for s in sigma[b]] + state.sigmas.get(ident, [])[i:]

    d_names = model.discriminator_param_names()
    fake_const = fake.detach()
    for _ in range(cfg.d_steps):
        with ad.second_order():
            dw = model.disc_weights(model.embed_d(enc) if hyper_d else None)
            l_adv = adv_loss(discriminator_forward(dw, real), discriminator_forward(dw, fake_const))
            l_gp = gradient_penalty(dw, real, cfg.gp_mode, fake_const, rng, cfg.gp_reduction)
            loss_d = ad.add(ad.neg(l_adv), ad.scale(l_gp, cfg.lambda_gp))
            grads = [g.data.copy() for g in ad.grad(loss_d, model.trainable(d_names))]
        _adam_update(model, d_names, grads, state, lr_d, cfg)

    g_names = model.generator_param_names()
    l_rec = None
    for step in range(cfg.g_steps):
        if step > 0:
            weights, recs, fake, _ = _generator_side(model, batch, state, cfg, noise, sigma)
        if shared_enc:
            dw = model.disc_weights(model.embed_d(enc) if hyper_d else None)
        else:
            with ad.no_grad():
                dw = model.disc_weights(model.embed_d(enc) if hyper_d else None)
        fake_score = ad.mean(discriminator_forward(dw, fake))
        l_rec = acc_rec_loss(weights, batch.levels, Tensor(state.z0, dtype=state.z0.dtype),
                             cfg.acc_rec, recs)
        loss_g = ad.add(fake_score, ad.scale(l_rec, cfg.lambda_rec))
        grads = [g.data.copy() for g in ad.grad(loss_g, model.trainable(g_names))]
        _adam_update(model, g_names, grads, state, lr_g, cfg)

    rec = dict(scale=i, iteration=t, l_adv=l_adv.item(), l_lip=l_gp.item(), l_rec=l_rec.item(),
               sigma_mean=float(sigma[:, i - 1].mean()))
    if log is not None:
        log.write(i, t, rec["l_adv"], rec["l_lip"], rec["l_rec"], rec["sigma_mean"])
    state.iteration += 1
    return rec


def train_scale(model: HyperModel, data: Dataset, cfg: TrainConfig, state: TrainState,
                log: Optional[LossLog] = None) -> TrainState:
    """Run the remaining iterations of the current scale."""
    if state.scale != model.scale:
        raise ContractError(f"state is at scale {state.scale}, model at {model.scale}")
    last = None
    while state.iteration < cfg.iterations_per_scale:
        try:
            last = train_step(model, data, cfg, state, log)
        except NumericError as exc:
            snapshot = dict(scale=state.scale, iteration=state.iteration, last=last)
            raise TrainingDiverged(f"non-finite value at scale {state.scale}, "
                                   f"iteration {state.iteration}: {exc}", snapshot) from exc
    state.completed_scales = model.scale
    return state


def advance(model: HyperModel, state: TrainState) -> None:
    """Open the next scale and restart optimizer moments of the copied heads."""
    for name in model.advance_scale():
        state.adam.pop(name, None)
    state.scale = model.scale
    state.iteration = 0


def train_all(model: HyperModel, dataset: Dataset, cfg: TrainConfig, state: Optional[TrainState] = None,
              log: Optional[LossLog] = None, on_scale_end: Optional[Callable] = None,
              run_config: Optional[dict] = None) -> Checkpoint:
    """Train every remaining scale; ``on_scale_end(checkpoint)`` fires after each one."""
    if len(dataset) == 0:
        raise ConfigError("the dataset is empty")
    if state is None:
        state = new_state(dataset.geometry, cfg.seed)
    ckpt = Checkpoint(model, state, dataset.geometry, cfg, dict(run_config or {}))
    if state.completed_scales == model.scale and model.scale < model.cfg.num_scales:
        advance(model, state)
    while True:
        train_scale(model, dataset, cfg, state, log)
        if on_scale_end is not None:
            on_scale_end(ckpt)
        if model.scale >= model.cfg.num_scales:
            break
        advance(model, state)
    return ckpt
