"""Alternative hypernetwork layouts and numerical checks of their equilibrium behaviour.

Variants
--------
``hyper``
    Separate generator and discriminator encoders, hyper-discriminator.
``shared_disc``
    Hyper-generator against one ordinary discriminator shared by all images.
``shared_encoder_case1``
    One encoder feeds both projections and is updated by both players:
    (encoder, generator heads) minimize the adversarial loss, (encoder,
    discriminator heads) maximize adversarial loss minus the weighted penalty.
``shared_encoder_case2``
    Shared encoder; (encoder, generator heads) minimize the adversarial loss
    plus the penalty, the discriminator heads maximize the adversarial loss.

The checks run one plain gradient step at scale 1 without the reconstruction
term, in 64-bit arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, PreconditionError
from .losses import adv_loss, gradient_penalty
from .metrics import patch_swd
from .networks import (HyperModel, ModelConfig, PrimaryConfig, activation, discriminator_forward,
                       generator_forward, init_model)
from .pyramid import compute_geometry

VARIANTS = ("hyper", "shared_disc", "shared_encoder_case1", "shared_encoder_case2")
EXACT_TOL = 1e-12


@dataclass
class EquilibriumReport:
    variant: str
    updates: dict
    tol: float
    expected_equilibrium: Optional[bool]

    @property
    def max_update(self) -> float:
        return max(self.updates.values())

    @property
    def equilibrium(self) -> bool:
        return self.max_update <= self.tol

    @property
    def passed(self) -> bool:
        return self.expected_equilibrium is None or self.equilibrium == self.expected_equilibrium

    def to_text(self) -> str:
        claim = {True: "equilibrium", False: "moves", None: "no claim"}[self.expected_equilibrium]
        status = "PASS" if self.passed else "FAIL"
        return f"{status} zero-eq {self.variant}: max|dtheta|={self.max_update:.3e} (expected {claim})"


@dataclass
class CancellationReport:
    seed: int
    rel_error: float
    negation_error: float
    penalty_norm: float = 0.0
    tol: float = 1e-6

    @property
    def passed(self) -> bool:
        return self.rel_error <= self.tol and self.negation_error <= self.tol

    def to_text(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} case1 seed={self.seed}: rel={self.rel_error:.3e} "
                f"negation={self.negation_error:.3e} |penalty step|={self.penalty_norm:.3e}")


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def lab_config(variant: str, act: str = "leaky_relu", size: int = 12) -> ModelConfig:
    """Small model used by the proposition checks."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    return ModelConfig(
        num_scales=1,
        primary=PrimaryConfig(blocks=3, channels=4, activation=act),
        embedding_dim=6,
        encoder_channels=(4, 6),
        encoder_input_size=size,
        discriminator_mode="shared" if variant == "shared_disc" else "hyper",
        encoder_mode="shared" if variant.startswith("shared_encoder") else "separate",
    )


class _Lab:
    """Scale-1 objectives of one variant on a fixed batch of images and noise."""

    def __init__(self, model: HyperModel, images: np.ndarray, noise: np.ndarray, lambda_gp: float):
        self.model = model
        self.images = Tensor(images)
        self.noise = Tensor(noise)
        self.lambda_gp = lambda_gp

    def _weights(self):
        m = self.model
        emb_g = m.embed_g(self.images)
        gw = m.gen_weights(1, emb_g)
        emb_d = m.embed_d(self.images) if m.cfg.discriminator_mode == "hyper" else None
        return gw, m.disc_weights(emb_d)

    def adversarial(self) -> Tensor:
        gw, dw = self._weights()
        fake = generator_forward(gw, None, self.noise)
        return adv_loss(discriminator_forward(dw, self.images), discriminator_forward(dw, fake))

    def penalty(self) -> Tensor:
        _, dw = self._weights()
        return gradient_penalty(dw, self.images)

    def grads(self, loss_fn, names) -> dict:
        with ad.second_order():
            loss = loss_fn()
            gs = ad.grad(loss, self.model.trainable(names))
        return {n: g.data.copy() for n, g in zip(names, gs)}


def _encoder_names(model: HyperModel) -> list:
    return model.enc_g.param_names()


def _head_names(model: HyperModel, kind: str) -> list:
    if kind == "g":
        return model.gen_head(1).param_names()
    if model.cfg.discriminator_mode == "shared":
        return [f"disc.{t}" for t, _ in model.disc_shapes]
    return model.proj_d.param_names()


def gd_updates(variant: str, lab: _Lab, lr: float = 1e-2) -> dict:
    """Parameter changes of one simultaneous plain gradient step of the variant's rule."""
    m = lab.model
    lam = lab.lambda_gp
    enc = _encoder_names(m)
    pg, pd = _head_names(m, "g"), _head_names(m, "d")
    upd: dict = {}

    def acc(grads: dict, sign: float):
        for n, g in grads.items():
            upd[n] = upd.get(n, 0.0) + sign * lr * g

    if variant in ("hyper", "shared_disc"):
        d_names = (m.enc_d.param_names() if variant == "hyper" else []) + pd
        acc(lab.grads(lab.adversarial, enc + pg), -1.0)
        acc(lab.grads(lab.adversarial, d_names), +1.0)
        acc(lab.grads(lab.penalty, d_names), -lam)
    elif variant == "shared_encoder_case1":
        acc(lab.grads(lab.adversarial, enc + pg), -1.0)
        acc(lab.grads(lab.adversarial, enc + pd), +1.0)
        acc(lab.grads(lab.penalty, enc + pd), -lam)
    else:
        acc(lab.grads(lab.adversarial, enc + pg), -1.0)
        acc(lab.grads(lab.adversarial, pd), +1.0)
        acc(lab.grads(lab.penalty, enc + pg), -lam)
    return upd


def _check_activation(cfg: ModelConfig) -> None:
    with ad.precision(64):
        zero = Tensor(np.zeros(1))
        if activation(zero, cfg.primary.activation, cfg.primary.leaky_slope).data[0] != 0.0:
            raise PreconditionError(f"activation {cfg.primary.activation!r} does not map 0 to 0")


def _lab_setup(variant: str, rng: np.random.Generator, act: str, batch: int = 2, size: int = 12):
    cfg = lab_config(variant, act, size)
    _check_activation(cfg)
    model = init_model(cfg, rng)
    images = rng.uniform(-1, 1, size=(batch, 3, size, size))
    noise = rng.standard_normal((batch, 3, size, size))
    return model, images, noise


def _randomize(model: HyperModel, rng: np.random.Generator, names, std: float = 0.5) -> None:
    for n in names:
        p = model.params[n]
        p.data[...] = rng.standard_normal(p.shape) * std


def verify_zero_equilibrium(variant: str, rng: np.random.Generator, projection_bias: float = 0.0,
                            act: str = "leaky_relu", lambda_gp: float = 0.1,
                            tol: float = EXACT_TOL) -> EquilibriumReport:
    """Put the variant at its zero configuration and measure one gradient step.

    ``shared_encoder_case1`` keeps random encoder convolutions but zeroes the
    encoder's output layer, so the embedding vanishes identically. The other
    variants zero the whole encoder. Projection heads get random weights and
    biases filled with ``projection_bias``. The proposition variants are
    expected to stay put; ``hyper`` with nonzero biases is a negative control.
    """
    with ad.precision(64):
        model, images, noise = _lab_setup(variant, rng, act)
        enc = _encoder_names(model)
        d_enc = model.enc_d.param_names() if variant == "hyper" else []
        for n in enc + d_enc:
            model.params[n].data[...] = 0.0
        if variant == "shared_encoder_case1":
            conv = [n for n in enc if ".conv" in n]
            _randomize(model, rng, conv)
        for kind in ("g", "d"):
            for n in _head_names(model, kind):
                if n.startswith("disc."):
                    _randomize(model, rng, [n])
                elif n.endswith(".b"):
                    model.params[n].data[...] = projection_bias
                else:
                    _randomize(model, rng, [n])
        lab = _Lab(model, images, noise, lambda_gp)
        upd = gd_updates(variant, lab)
    updates = {n: float(np.max(np.abs(u))) for n, u in upd.items()}
    if variant in ("shared_encoder_case1", "shared_encoder_case2"):
        expected = True if projection_bias == 0.0 else None
    elif variant == "hyper":
        expected = projection_bias == 0.0
    else:
        expected = None
    return EquilibriumReport(variant, updates, tol, expected)


def verify_case1_cancellation(seed: int, lambda_gp: float = 0.1, lr: float = 1e-2,
                              tol: float = 1e-6) -> CancellationReport:
    """Case 1: the two adversarial pulls on the shared encoder cancel, leaving the penalty.

    Three independent backward passes: the generator's and the
    discriminator's adversarial gradients on the encoder, and the penalty's.
    """
    rng = np.random.default_rng(seed)
    with ad.precision(64):
        model, images, noise = _lab_setup("shared_encoder_case1", rng, "leaky_relu")
        for n in model.params:
            if n.endswith(".b"):
                _randomize(model, rng, [n], 0.1)
        lab = _Lab(model, images, noise, lambda_gp)
        enc = _encoder_names(model)
        g_side = lab.grads(lab.adversarial, enc + _head_names(model, "g"))
        d_side = lab.grads(lab.adversarial, enc + _head_names(model, "d"))
        pen = lab.grads(lab.penalty, enc)
    gen_upd = np.concatenate([-lr * g_side[n].ravel() for n in enc])
    disc_upd = np.concatenate([lr * d_side[n].ravel() for n in enc])
    disc_pen = np.concatenate([-lr * lambda_gp * pen[n].ravel() for n in enc])
    total = gen_upd + disc_upd + disc_pen
    expected = disc_pen
    return CancellationReport(seed, _rel(total, expected), _rel(gen_upd, -disc_upd),
                              float(np.linalg.norm(disc_pen)), tol)


@dataclass
class LeakageConfig:
    size: int = 32
    s0: int = 12
    scale_factor: float = 0.6
    blocks: int = 5
    channels: int = 16
    embedding_dim: int = 32
    encoder_channels: tuple = (8, 16, 32)
    encoder_input_size: int = 32
    iterations_per_scale: int = 300
    lr_g: float = 5e-4
    lr_d: float = 5e-4
    lambda_rec: float = 50.0
    n_samples: int = 8
    seeds: tuple = (0, 1, 2, 3, 4)


@dataclass
class LeakageReport:
    seeds: list
    to_a: dict = field(default_factory=dict)   # variant -> per-seed patch_swd(samples_B, A)
    to_b: dict = field(default_factory=dict)   # variant -> per-seed patch_swd(samples_B, B)
    vacuous: bool = False

    @property
    def wins(self) -> int:
        return sum(s < h for s, h in zip(self.to_a["shared_disc"], self.to_a["hyper"]))

    @property
    def passed(self) -> bool:
        return not self.vacuous and self.wins >= int(np.ceil(0.8 * len(self.seeds)))

    def to_text(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'} leakage: shared_disc closer to A in "
                 f"{self.wins}/{len(self.seeds)} seeds" + (" (vacuous: A == B)" if self.vacuous else "")]
        for j, seed in enumerate(self.seeds):
            lines.append(f"  seed {seed}: to_A shared={self.to_a['shared_disc'][j]:.4f} "
                         f"hyper={self.to_a['hyper'][j]:.4f}  to_B shared={self.to_b['shared_disc'][j]:.4f} "
                         f"hyper={self.to_b['hyper'][j]:.4f}")
        return "\n".join(lines)


def _mean_swd(samples: np.ndarray, target: np.ndarray, seed: int) -> float:
    return float(np.mean([patch_swd(s, target, rng=np.random.default_rng(seed)) for s in samples]))


def leakage_experiment(images: Sequence[np.ndarray], config: Optional[LeakageConfig] = None) -> LeakageReport:
    """Train shared_disc and hyper models on two images with paired seeds and compare leakage."""
    from .applications import feedforward_generate
    from .trainer import Dataset, TrainConfig, train_all

    if len(images) < 2:
        raise ConfigError("the leakage experiment needs two images")
    cfg = config or LeakageConfig()
    img_a, img_b = (np.asarray(im, dtype=np.float32) for im in images[:2])
    geom = compute_geometry(cfg.s0, cfg.scale_factor, cfg.size, cfg.size)
    report = LeakageReport(list(cfg.seeds), {"shared_disc": [], "hyper": []},
                           {"shared_disc": [], "hyper": []}, vacuous=bool(np.array_equal(img_a, img_b)))
    for seed in cfg.seeds:
        for mode in ("shared_disc", "hyper"):
            mcfg = ModelConfig(num_scales=geom.k, primary=PrimaryConfig(blocks=cfg.blocks, channels=cfg.channels),
                               embedding_dim=cfg.embedding_dim, encoder_channels=cfg.encoder_channels,
                               encoder_input_size=cfg.encoder_input_size,
                               discriminator_mode="shared" if mode == "shared_disc" else "hyper")
            model = init_model(mcfg, np.random.default_rng(seed))
            data = Dataset([img_a, img_b], geom, cfg.encoder_input_size)
            tcfg = TrainConfig(iterations_per_scale=cfg.iterations_per_scale, batch_size=2,
                               lr_g=cfg.lr_g, lr_d=cfg.lr_d, lambda_rec=cfg.lambda_rec, seed=seed)
            ckpt = train_all(model, data, tcfg)
            samples = feedforward_generate(ckpt, img_b, cfg.n_samples, np.random.default_rng(seed))
            report.to_a[mode].append(_mean_swd(samples, img_a, seed))
            report.to_b[mode].append(_mean_swd(samples, img_b, seed))
    return report
