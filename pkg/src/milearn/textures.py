"""Seeded procedural RGB images in [-1, 1] for tests and demos."""
from __future__ import annotations

import numpy as np


def _smooth_field(rng: np.random.Generator, h: int, w: int, cells: int) -> np.ndarray:
    """Bilinearly upsampled random grid: a blobby field in [0, 1]."""
    grid = rng.uniform(size=(cells + 1, cells + 1))
    ys = np.linspace(0, cells, h)
    xs = np.linspace(0, cells, w)
    y0 = np.minimum(ys.astype(int), cells - 1)
    x0 = np.minimum(xs.astype(int), cells - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[y0][:, x0]
    g01 = grid[y0][:, x0 + 1]
    g10 = grid[y0 + 1][:, x0]
    g11 = grid[y0 + 1][:, x0 + 1]
    return (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
            + g10 * fy * (1 - fx) + g11 * fy * fx)


def texture(seed: int, h: int = 48, w: int = 48) -> np.ndarray:
    """A [3, h, w] float32 image: stripes, blobs and a two-colour palette, all seeded."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    angle = rng.uniform(0, np.pi)
    freq = rng.uniform(0.15, 0.45)
    stripes = 0.5 + 0.5 * np.sin(freq * (np.cos(angle) * xx + np.sin(angle) * yy) + rng.uniform(0, 2 * np.pi))
    blobs = _smooth_field(rng, h, w, int(rng.integers(3, 7)))
    mix = rng.uniform(0.3, 0.7)
    t = mix * stripes + (1 - mix) * blobs
    c0 = rng.uniform(-0.9, 0.2, size=3)
    c1 = rng.uniform(-0.2, 0.9, size=3)
    img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    img += 0.05 * rng.standard_normal((3, h, w))
    return np.clip(img, -1.0, 1.0).astype(np.float32)
