"""Generate samples at a different size and aspect from a trained model.

    python3 demos/arbitrary_size.py --ckpt demo_out/model.milc --height 48 --width 128
"""
import argparse
from pathlib import Path

import numpy as np

from milearn.applications import arbitrary_geometry, generate_arbitrary
from milearn.store import load_checkpoint, load_png, save_png


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--ckpt", default="demo_out/model.milc")
    p.add_argument("--image", default="demo_out/train_0.png")
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--out", default="demo_out/arbitrary")
    args = p.parse_args()

    ckpt = load_checkpoint(args.ckpt)
    geom = arbitrary_geometry(ckpt.geometry, args.height, args.width)
    print("scale sizes:", ", ".join(f"{h}x{w}" for h, w in geom.sizes))
    samples = generate_arbitrary(ckpt, load_png(args.image), args.height, args.width,
                                 np.random.default_rng(0), args.n)
    out = Path(args.out)
    for k, s in enumerate(samples):
        save_png(out / f"sample_{k}.png", s)
    print(f"{len(samples)} samples of {args.height}x{args.width} in {out}")


if __name__ == "__main__":
    main()
