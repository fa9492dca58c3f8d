"""Train a small multi-image model on synthetic textures and save a checkpoint.

    python3 demos/train_desk.py --images 2 --iterations 200 --out demo_out
"""
import argparse
import time
from pathlib import Path

import numpy as np

from milearn.applications import feedforward_generate, reconstruct
from milearn.metrics import diversity
from milearn.networks import ModelConfig, PrimaryConfig, init_model
from milearn.pyramid import compute_geometry
from milearn.store import save_checkpoint, save_png
from milearn.textures import texture
from milearn.trainer import Dataset, LossLog, TrainConfig, train_all


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--images", type=int, default=2)
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="demo_out")
    args = p.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    geom = compute_geometry(15, 0.6, args.size, args.size)
    cfg = ModelConfig(num_scales=geom.k, primary=PrimaryConfig(channels=args.channels))
    images = [texture(s, args.size, args.size) for s in range(args.images)]
    for k, im in enumerate(images):
        save_png(out / f"train_{k}.png", im)

    model = init_model(cfg, np.random.default_rng(args.seed))
    tcfg = TrainConfig(iterations_per_scale=args.iterations, batch_size=args.images, seed=args.seed)
    start = time.perf_counter()
    with open(out / "loss.log", "w", encoding="utf-8") as fh:
        ckpt = train_all(model, Dataset(images, geom, cfg.encoder_input_size), tcfg, log=LossLog(fh),
                         on_scale_end=lambda ck: print(f"scale {ck.model.scale}/{geom.k} "
                                                       f"({time.perf_counter() - start:.0f} s)", flush=True))
    save_checkpoint(ckpt, out / "model.milc")

    for k, im in enumerate(images):
        rec = reconstruct(ckpt, im)
        samples = feedforward_generate(ckpt, im, 16, np.random.default_rng(k))
        save_png(out / f"sample_{k}.png", samples[0])
        print(f"image {k}: reconstruction mse {np.mean((rec - im) ** 2):.4f}, diversity {diversity(samples):.4f}")
    print(f"checkpoint: {out / 'model.milc'}")


if __name__ == "__main__":
    main()
