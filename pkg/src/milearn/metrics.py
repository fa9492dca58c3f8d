"""Sample diversity, a sliced-Wasserstein patch distance and interpolation slopes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InputError

SMOOTHNESS_ALPHAS = tuple(round(0.1 * j, 10) for j in range(1, 10))


@dataclass
class MetricReport:
    diversity: Optional[float] = None
    patch_swd: dict = field(default_factory=dict)
    smoothness: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = []
        if self.diversity is not None:
            lines.append(f"diversity\t{self.diversity:.6g}")
        for key, v in self.patch_swd.items():
            lines.append(f"patch_swd\t{key}\t{v:.6g}")
        for scale, row in self.smoothness.items():
            lines.append(f"smoothness\t{scale}\t" + "\t".join(f"{v:.6g}" for v in row))
        return "\n".join(lines) + "\n"


def diversity(samples) -> float:
    """Per-location sample std (divisor n-1) across samples, averaged over locations."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim < 2 or arr.shape[0] < 2:
        raise InputError("diversity needs at least two samples")
    # centring on one sample is exact for identical samples and leaves the std unchanged
    return float(np.std(arr - arr[0], axis=0, ddof=1).mean())


def extract_patches(image: np.ndarray, patch_size: int, stride: int = 1) -> np.ndarray:
    """Flattened ``[N, C*p*p]`` patches of a ``[C, H, W]`` image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise InputError(f"expected a [C, H, W] image, got {image.shape}")
    if patch_size < 1 or stride < 1 or patch_size > min(image.shape[1:]):
        raise InputError(f"patch size {patch_size} does not fit an image of shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise InputError("image contains non-finite values")
    win = sliding_window_view(image, (patch_size, patch_size), axis=(1, 2))[:, ::stride, ::stride]
    c, nh, nw = win.shape[:3]
    return win.transpose(1, 2, 0, 3, 4).reshape(nh * nw, c * patch_size * patch_size)


def random_projections(dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sorted_w1(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.sort(a), np.sort(b)
    if a.size != b.size:
        n = min(a.size, b.size)
        q = (np.arange(n) + 0.5) / n
        a, b = np.quantile(a, q), np.quantile(b, q)
    return float(np.mean(np.abs(a - b)))


def patch_swd(image_a: np.ndarray, image_b: np.ndarray, patch_size: int = 7, n_projections: int = 64,
              rng: Optional[np.random.Generator] = None, projections: Optional[np.ndarray] = None,
              stride: int = 1) -> float:
    """Sliced 1-Wasserstein distance between the patch sets of two images.

    ``projections`` (``[P, C*p*p]``, unit rows) overrides the random directions.
    """
    pa = extract_patches(image_a, patch_size, stride)
    pb = extract_patches(image_b, patch_size, stride)
    if pa.shape[1] != pb.shape[1]:
        raise InputError("images have different channel counts")
    if projections is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        projections = random_projections(pa.shape[1], n_projections, rng)
    projections = np.asarray(projections, dtype=np.float64)
    if projections.ndim != 2 or projections.shape[1] != pa.shape[1]:
        raise InputError(f"projections must have shape [P, {pa.shape[1]}]")
    qa, qb = pa @ projections.T, pb @ projections.T
    return float(np.mean([_sorted_w1(qa[:, j], qb[:, j]) for j in range(projections.shape[0])]))


def slopes(frames: Sequence[np.ndarray], alphas: Sequence[float]) -> np.ndarray:
    """``||H(a_{j+1}) - H(a_j)||_1 / (h*w*(a_{j+1}-a_j))`` for consecutive grid points."""
    if len(frames) != len(alphas) or len(alphas) < 2:
        raise InputError("need one frame per alpha and at least two alphas")
    out = []
    for j in range(len(alphas) - 1):
        f0 = np.asarray(frames[j], dtype=np.float64)
        f1 = np.asarray(frames[j + 1], dtype=np.float64)
        h, w = f0.shape[-2:]
        da = alphas[j + 1] - alphas[j]
        if da <= 0:
            raise InputError("alphas must increase")
        out.append(np.abs(f1 - f0).sum() / (h * w * da))
    return np.array(out)


def smoothness(ckpt, image_a: np.ndarray, image_b: np.ndarray, scales: Sequence[int],
               alphas: Sequence[float] = SMOOTHNESS_ALPHAS, seeds: Sequence[int] = (0,)) -> dict:
    """Slope table per injection scale, averaged over a fixed seed set shared by every alpha."""
    from .applications import InterpolationSpec, interpolate

    table = {}
    for i in scales:
        rows = []
        for seed in seeds:
            frames = [interpolate(ckpt, InterpolationSpec(image_a, image_b, a, i), np.random.default_rng(seed))[0]
                      for a in alphas]
            rows.append(slopes(frames, alphas))
        table[i] = np.mean(rows, axis=0)
    return table
