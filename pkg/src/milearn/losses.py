"""Adversarial, gradient-penalty and reconstruction objectives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError
from .networks import MaterializedWeights, discriminator_forward, generator_forward


@dataclass
class LossWeights:
    gp: float = 0.1
    rec: float = 50.0

    def __post_init__(self):
        if self.gp < 0 or self.rec < 0:
            raise ConfigError("loss weights must be non-negative")


def adv_loss(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """mean(fake) - mean(real): minimized by the generator, maximized by the critic."""
    if real_scores.size == 0 or fake_scores.size == 0:
        raise ContractError("empty score map")
    return ad.sub(ad.mean(fake_scores), ad.mean(real_scores))


def gradient_penalty(disc_weights: MaterializedWeights, real: Tensor, mode: str = "real",
                     fake: Optional[Tensor] = None, rng: Optional[np.random.Generator] = None,
                     reduction: str = "patch") -> Tensor:
    """Squared norm of the critic's input gradient, averaged over the batch.

    ``mode="real"`` evaluates at the real images (zero-centred penalty).
    ``mode="interpolate"`` is the classical two-sided variant at random
    real/fake mixtures and needs ``fake`` and ``rng``.

    ``reduction="patch"`` estimates the per-patch expectation: the squared
    gradient norm of the summed score map divided by the number of score
    cells (exact when receptive fields do not overlap). ``reduction="mean"``
    takes the gradient of the mean score instead, which is smaller by that
    cell count.
    """
    if not ad.is_second_order():
        raise ContractError("gradient_penalty needs a second-order graph (use autodiff.second_order())")
    if mode == "real":
        u_data = real.data
    elif mode == "interpolate":
        if fake is None or rng is None:
            raise ContractError("interpolate mode needs fake samples and an rng")
        eps = rng.uniform(size=(real.shape[0], 1, 1, 1)).astype(real.dtype)
        u_data = eps * real.data + (1 - eps) * fake.data
    else:
        raise ConfigError(f"unknown gp mode {mode!r}")
    if reduction not in ("patch", "mean"):
        raise ConfigError(f"unknown gp reduction {reduction!r}")
    u = Tensor(u_data, requires_grad=True, dtype=real.dtype)
    scores = discriminator_forward(disc_weights, u)
    cells = int(np.prod(scores.shape[1:]))
    total = ad.sum(ad.mean(scores, axis=(1, 2, 3)))
    (g,) = ad.grad(total, [u], create_graph=True)
    per_image = ad.sum(ad.square(g), axis=(1, 2, 3))
    if reduction == "patch":
        per_image = ad.scale(per_image, float(cells))
    if mode == "real":
        return ad.mean(per_image)
    norm = ad.sqrt(ad.add(per_image, 1e-12))
    return ad.mean(ad.square(ad.sub(norm, 1.0)))


def rec_loss(reconstruction: Tensor, target) -> Tensor:
    """Mean squared error."""
    if not isinstance(target, Tensor):
        target = Tensor(target, dtype=reconstruction.dtype)
    if reconstruction.shape != target.shape:
        raise ContractError(f"shapes differ: {reconstruction.shape} vs {target.shape}")
    return ad.mean(ad.square(ad.sub(reconstruction, target)))


def reconstruction_path(weights: Sequence[MaterializedWeights], z0: Tensor, sizes: Sequence[tuple]) -> list:
    """Noise-free recursion seeded by the fixed noise: one output per scale."""
    batch = weights[0].batch or z0.shape[0]
    if z0.shape[0] != batch:
        z0 = ad.broadcast_to(z0, (batch,) + z0.shape[1:])
    outs = [generator_forward(weights[0], None, z0)]
    for w, (h, wd) in zip(weights[1:], sizes[1:]):
        up = ad.upsample(outs[-1], h, wd)
        zero = Tensor(np.zeros(up.shape, dtype=up.dtype), dtype=up.dtype)
        outs.append(generator_forward(w, up, zero))
    return outs


def acc_rec_loss(weights: Sequence[MaterializedWeights], targets: Sequence[np.ndarray], z0: Optional[Tensor],
                 mode: str = "accumulate", recs: Optional[list] = None) -> Tensor:
    """Reconstruction loss up to the current scale ``len(weights)``.

    ``accumulate`` averages the per-scale MSE over scales 1..i; ``last_only``
    keeps scale i. ``recs`` may pass an already computed reconstruction path.
    """
    if z0 is None:
        raise ContractError("the fixed reconstruction noise is missing")
    if mode not in ("accumulate", "last_only"):
        raise ConfigError(f"unknown reconstruction mode {mode!r}")
    if recs is None:
        recs = reconstruction_path(weights, z0, [t.shape[2:] for t in targets])
    if mode == "last_only":
        return rec_loss(recs[-1], targets[len(recs) - 1])
    terms = [rec_loss(r, t) for r, t in zip(recs, targets)]
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / len(terms))
