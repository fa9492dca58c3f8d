"""Scale geometry, image pyramids and per-scale noise."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, InputError

# guards ceil() against values like 70.00000000000001 that are exact in decimal
_CEIL_EPS = 1e-9


def _ceil(x: float) -> int:
    return int(math.ceil(x - _CEIL_EPS))


@dataclass(frozen=True)
class ScaleGeometry:
    """Sizes of every scale, coarsest first. ``sizes[i]`` is ``(h, w)``."""

    sizes: tuple
    scale_factor: float
    s0: int

    @property
    def k(self) -> int:
        return len(self.sizes)

    @property
    def aspect_ratio(self) -> float:
        h, w = self.sizes[-1]
        return w / h

    def size(self, scale: int) -> tuple:
        """Size of a 1-based scale index."""
        if not 1 <= scale <= self.k:
            raise ContractError(f"scale {scale} outside 1..{self.k}")
        return self.sizes[scale - 1]


def compute_geometry(s0: int, r: float, target_h: int, target_w: int,
                     num_scales: Optional[int] = None) -> ScaleGeometry:
    """Geometric size progression from a coarsest width ``s0`` up to the target.

    Widths follow ``ceil(s0 / r**j)`` until they reach the target width, which
    is then used as the last scale. Heights are the widths times the target's
    h/w ratio, rounded up. ``num_scales`` forces the count: widths are then
    spaced geometrically between ``s0`` and the target width.
    """
    if not 0 < r < 1:
        raise ConfigError(f"scale factor must be in (0, 1), got {r}")
    if s0 < 1 or target_h < 1 or target_w < 1:
        raise ConfigError("sizes must be positive")
    if s0 > target_w:
        raise ConfigError(f"s0={s0} exceeds the target width {target_w}")
    ar = target_h / target_w
    if num_scales is None:
        widths = [s0]
        j = 1
        while widths[-1] < target_w:
            widths.append(min(_ceil(s0 / r ** j), target_w))
            j += 1
    else:
        if num_scales < 1:
            raise ConfigError("num_scales must be >= 1")
        if num_scales == 1:
            if s0 != target_w:
                raise ConfigError("num_scales=1 requires s0 equal to the target width")
            widths = [s0]
        else:
            ratio = target_w / s0
            widths = [_ceil(s0 * ratio ** (j / (num_scales - 1))) for j in range(num_scales)]
            widths[-1] = target_w
            if any(b <= a for a, b in zip(widths, widths[1:])):
                raise ConfigError(f"num_scales={num_scales} too large for widths {s0}..{target_w}")
    sizes = [(max(1, _ceil(w * ar)), w) for w in widths[:-1]]
    sizes.append((target_h, target_w))
    for (h0, w0), (h1, w1) in zip(sizes, sizes[1:]):
        if h1 <= h0 or w1 <= w0:
            raise ConfigError(f"scale sizes do not strictly increase: {sizes}")
    return ScaleGeometry(sizes=tuple(sizes), scale_factor=r, s0=s0)


def resize_image(image: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resize of a [C, H, W] array with the engine's resampler."""
    with ad.no_grad():
        t = ad.Tensor(image[None], dtype=image.dtype)
        return ad.upsample(t, h, w).data[0]


def image_id(image: np.ndarray) -> str:
    """Stable content hash of an image (first 16 hex digits of sha1)."""
    arr = np.ascontiguousarray(np.asarray(image, dtype=np.float32))
    return hashlib.sha1(arr.tobytes() + str(arr.shape).encode()).hexdigest()[:16]


@dataclass
class ImagePyramid:
    levels: list
    source_id: str
    geometry: ScaleGeometry = field(repr=False)

    def level(self, scale: int) -> np.ndarray:
        self.geometry.size(scale)
        return self.levels[scale - 1]


def build_pyramid(image: np.ndarray, geom: ScaleGeometry, source_id: Optional[str] = None) -> ImagePyramid:
    """Downscale ``image`` ([3, H, W] in [-1, 1]) to every size of ``geom``."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise InputError(f"expected a [3, H, W] image, got {image.shape}")
    if image.size and (image.min() < -1.0 or image.max() > 1.0):
        raise InputError("pixel values must lie in [-1, 1]")
    finest = image
    if image.shape[1:] != geom.sizes[-1]:
        finest = resize_image(image, *geom.sizes[-1])
    levels = []
    for h, w in geom.sizes[:-1]:
        levels.append(np.clip(resize_image(finest, h, w), -1.0, 1.0))
    levels.append(finest)
    return ImagePyramid(levels=levels, source_id=source_id or image_id(image), geometry=geom)


def sample_noise(geom: ScaleGeometry, scale: int, batch: int, rng: np.random.Generator,
                 dtype=None) -> np.ndarray:
    """Standard normal noise of shape [batch, 3, h_i, w_i]."""
    h, w = geom.size(scale)
    return rng.standard_normal((batch, 3, h, w)).astype(dtype or ad.default_dtype())
