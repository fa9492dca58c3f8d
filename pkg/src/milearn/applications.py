"""Inference with a trained checkpoint: feedforward sampling, interpolation, injection."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ContractError, InputError
from .losses import reconstruction_path
from .networks import MaterializedWeights, generator_forward
from .pyramid import ScaleGeometry, image_id, resize_image
from .trainer import Checkpoint


@dataclass
class InterpolationSpec:
    image_a: np.ndarray
    image_b: np.ndarray
    alpha: float
    injection_scale: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InputError(f"alpha must lie in [0, 1], got {self.alpha}")


def prepare_image(image: np.ndarray, geometry: ScaleGeometry) -> np.ndarray:
    """Center-crop ``image`` to the training aspect ratio and resize it to the finest size."""
    image = np.asarray(image, dtype=ad.default_dtype())
    if image.ndim != 3 or image.shape[0] != 3:
        raise InputError(f"expected a [3, H, W] image, got {image.shape}")
    th, tw = geometry.sizes[-1]
    _, h, w = image.shape
    if image.shape[1:] == (th, tw):
        return image
    if w * th > h * tw:  # too wide
        cw = max(1, round(h * tw / th))
        x0 = (w - cw) // 2
        image = image[:, :, x0:x0 + cw]
    elif w * th < h * tw:
        ch = max(1, round(w * th / tw))
        y0 = (h - ch) // 2
        image = image[:, y0:y0 + ch, :]
    return resize_image(np.ascontiguousarray(image), th, tw)


def _encoder_input(ckpt: Checkpoint, image: np.ndarray) -> Tensor:
    s = ckpt.model.cfg.encoder_input_size
    return Tensor(resize_image(image, s, s)[None], dtype=image.dtype)


def _weights_for(ckpt: Checkpoint, image: np.ndarray) -> list:
    """Embed once and materialize one shared weight set per scale."""
    model = ckpt.model
    emb = model.embed_g(_encoder_input(ckpt, image))
    return [model.gen_weights(j, emb).select(0) for j in range(1, model.cfg.num_scales + 1)]


def _sigmas(ckpt: Checkpoint, image: np.ndarray) -> list:
    sig = ckpt.sigma(image_id(image))
    if len(sig) < ckpt.model.cfg.num_scales:
        raise CheckpointError(f"checkpoint stores {len(sig)} noise amplitudes, "
                              f"{ckpt.model.cfg.num_scales} scales are needed")
    return sig


def _check_trained(ckpt: Checkpoint) -> None:
    if ckpt.model.scale != ckpt.model.cfg.num_scales:
        raise CheckpointError(f"checkpoint is at scale {ckpt.model.scale} of {ckpt.model.cfg.num_scales}")


def _run(weights: Sequence[MaterializedWeights], sigmas: Sequence[float], sizes: Sequence[tuple],
         n: int, rng: np.random.Generator, start: Optional[Tensor] = None, start_scale: int = 1,
         noise_scale: float = 1.0) -> np.ndarray:
    """Sample the recursion from ``start_scale``; ``start`` replaces the upsampled input there."""
    dtype = ad.default_dtype()
    prev = start
    for j in range(start_scale, len(weights) + 1):
        h, w = sizes[j - 1]
        z = rng.standard_normal((n, 3, h, w)).astype(dtype) * dtype.type(sigmas[j - 1] * noise_scale)
        up = prev
        if j > 1 and prev is not None and prev.shape[2:] != (h, w):
            up = ad.upsample(prev, h, w)
        prev = generator_forward(weights[j - 1], up if j > 1 else None, Tensor(z, dtype=dtype))
    return prev.data


def feedforward_generate(ckpt: Checkpoint, image: np.ndarray, n_samples: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Samples ``[n, 3, H, W]`` for an image in one forward pass, without any optimization."""
    _check_trained(ckpt)
    image = prepare_image(image, ckpt.geometry)
    with ad.no_grad():
        weights = _weights_for(ckpt, image)
        return _run(weights, _sigmas(ckpt, image), ckpt.geometry.sizes, n_samples, rng)


def reconstruct(ckpt: Checkpoint, image: np.ndarray) -> np.ndarray:
    """Noise-free path from the fixed reconstruction noise, ``[3, H, W]``."""
    _check_trained(ckpt)
    image = prepare_image(image, ckpt.geometry)
    z0 = ckpt.state.z0.astype(ad.default_dtype())
    with ad.no_grad():
        weights = _weights_for(ckpt, image)
        outs = reconstruction_path(weights, Tensor(z0, dtype=z0.dtype), ckpt.geometry.sizes)
    return outs[-1].data[0]


def interpolate(ckpt: Checkpoint, spec: InterpolationSpec, rng: np.random.Generator,
                n_samples: int = 1) -> np.ndarray:
    """Mix two embeddings; scales below the injection scale keep image A's generator.

    Noise amplitudes follow the same rule: A's below the injection scale,
    the alpha-mix of both images' amplitudes from there on.
    """
    _check_trained(ckpt)
    k = ckpt.model.cfg.num_scales
    m = spec.injection_scale
    if not 1 <= m <= k:
        raise InputError(f"injection scale must lie in 1..{k}, got {m}")
    a = prepare_image(spec.image_a, ckpt.geometry)
    b = prepare_image(spec.image_b, ckpt.geometry)
    alpha = spec.alpha
    sig_a, sig_b = _sigmas(ckpt, a), _sigmas(ckpt, b)
    model = ckpt.model
    with ad.no_grad():
        emb_a = model.embed_g(_encoder_input(ckpt, a))
        emb_b = model.embed_g(_encoder_input(ckpt, b))
        emb_mix = ad.add(ad.scale(emb_a, alpha), ad.scale(emb_b, 1.0 - alpha))
        weights, sigmas = [], []
        for j in range(1, k + 1):
            if j < m:
                weights.append(model.gen_weights(j, emb_a).select(0))
                sigmas.append(sig_a[j - 1])
            else:
                weights.append(model.gen_weights(j, emb_mix).select(0))
                sigmas.append(alpha * sig_a[j - 1] + (1.0 - alpha) * sig_b[j - 1])
        return _run(weights, sigmas, ckpt.geometry.sizes, n_samples, rng)


def inject_at_scale(ckpt: Checkpoint, source_image: np.ndarray, content_image: np.ndarray,
                    start_scale: int, rng: np.random.Generator, noise_scale: float = 1.0) -> np.ndarray:
    """Feed a resized content image into the source's recursion from ``start_scale`` on."""
    _check_trained(ckpt)
    k = ckpt.model.cfg.num_scales
    if start_scale == 1:
        raise ContractError("scale 1 has no upstream input to replace")
    if not 2 <= start_scale <= k:
        raise InputError(f"start scale must lie in 2..{k}, got {start_scale}")
    source = prepare_image(source_image, ckpt.geometry)
    content = np.asarray(content_image, dtype=ad.default_dtype())
    if content.ndim != 3 or content.shape[0] != 3:
        raise InputError(f"expected a [3, H, W] content image, got {content.shape}")
    th, tw = ckpt.geometry.sizes[-1]
    if abs(content.shape[2] * th - content.shape[1] * tw) > max(th, tw):
        raise InputError("content image must share the source's aspect ratio")
    h, w = ckpt.geometry.size(start_scale)
    start = Tensor(resize_image(content, h, w)[None], dtype=content.dtype)
    with ad.no_grad():
        weights = _weights_for(ckpt, source)
        return _run(weights, _sigmas(ckpt, source), ckpt.geometry.sizes, 1, rng,
                    start=start, start_scale=start_scale, noise_scale=noise_scale)[0]


def arbitrary_geometry(geometry: ScaleGeometry, target_h: int, target_w: int) -> ScaleGeometry:
    """Stretch every scale of ``geometry`` by the target/training ratio per axis."""
    h1, w1 = geometry.sizes[0]
    if target_h < h1 or target_w < w1:
        raise InputError(f"target {target_h}x{target_w} is smaller than the coarsest scale {h1}x{w1}")
    th, tw = geometry.sizes[-1]
    fy, fx = target_h / th, target_w / tw
    sizes = [(max(1, math.ceil(h * fy - 1e-9)), max(1, math.ceil(w * fx - 1e-9))) for h, w in geometry.sizes[:-1]]
    sizes.append((target_h, target_w))
    return ScaleGeometry(tuple(sizes), geometry.scale_factor, geometry.s0)


def generate_arbitrary(ckpt: Checkpoint, image: np.ndarray, target_h: int, target_w: int,
                       rng: np.random.Generator, n_samples: int = 1) -> np.ndarray:
    """Sample at another resolution by resizing the noise maps; weights are unchanged."""
    _check_trained(ckpt)
    geom = arbitrary_geometry(ckpt.geometry, target_h, target_w)
    image = prepare_image(image, ckpt.geometry)
    with ad.no_grad():
        weights = _weights_for(ckpt, image)
        return _run(weights, _sigmas(ckpt, image), geom.sizes, n_samples, rng)
