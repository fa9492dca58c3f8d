"""Edit a reconstruction with a flat colour patch and re-inject it at a middle scale.

The generator of the source image repaints the patch in the image's own texture
while the rest of the picture stays close to the reconstruction.

    python3 demos/harmonize_inject.py --ckpt demo_out/model.milc
"""
import argparse
from pathlib import Path

import numpy as np

from milearn.applications import inject_at_scale, reconstruct
from milearn.store import load_checkpoint, load_png, save_png


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--ckpt", default="demo_out/model.milc")
    p.add_argument("--source", default="demo_out/train_0.png")
    p.add_argument("--scale", type=int, default=None, help="injection scale (default: middle)")
    p.add_argument("--out", default="demo_out/harmonized")
    args = p.parse_args()

    ckpt = load_checkpoint(args.ckpt)
    source = load_png(args.source)
    rec = reconstruct(ckpt, source)
    h, w = rec.shape[1:]
    edited = rec.copy()
    edited[:, h // 3:h // 2, w // 3:w // 2] = np.array([0.8, -0.6, 0.2], np.float32)[:, None, None]
    scale = args.scale or max(2, (ckpt.geometry.k + 1) // 2)
    result = inject_at_scale(ckpt, source, edited, scale, np.random.default_rng(0))

    out = Path(args.out)
    save_png(out / "edited.png", edited)
    save_png(out / "result.png", result)
    save_png(out / "comparison.png", np.concatenate([rec, edited, result], axis=2))
    print(f"injected at scale {scale}; files in {out}")


if __name__ == "__main__":
    main()
