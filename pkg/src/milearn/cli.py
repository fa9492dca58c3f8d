"""``milearn`` command line: train, generate, interpolate, inject, metrics, verify.

Exit codes: 0 success, 1 usage or input problem, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import contextlib
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .errors import MilearnError, NumericError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _alphas(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--alpha expects a number or comma list, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="milearn", description="Hypernetwork internal-learning engine")
    p.add_argument("--seed", type=int, default=None, help="global random seed")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")

    g = sub.add_parser("generate", help="sample from an image in one forward pass")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--image", required=True)
    g.add_argument("--n", type=int, default=1)
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--out", default="samples")

    i = sub.add_parser("interpolate", help="mix two images' embeddings")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image-a", required=True)
    i.add_argument("--image-b", required=True)
    i.add_argument("--alpha", type=_alphas, required=True)
    i.add_argument("--inject-scale", type=int, default=1)
    i.add_argument("--out", default="interpolation")

    j = sub.add_parser("inject", help="feed a content image into a source's generator")
    j.add_argument("--ckpt", required=True)
    j.add_argument("--source", required=True)
    j.add_argument("--content", required=True)
    j.add_argument("--scale", type=int, required=True)
    j.add_argument("--out", default="injected.png")

    m = sub.add_parser("metrics", help="diversity and patch distance per image")
    m.add_argument("--ckpt", required=True)
    m.add_argument("--images", required=True, help="directory of PNG images")
    m.add_argument("--diversity-n", type=int, default=150)
    m.add_argument("--out", help="write the report here instead of stdout")

    v = sub.add_parser("verify", help="numerical checks of the equilibrium propositions")
    v.add_argument("--prop", choices=("zero-eq", "case1", "leakage", "all"), default=None,
                   help="default runs zero-eq and case1")
    v.add_argument("--images", nargs=2, help="two PNGs for the leakage run")
    return p


def _precision_for(ckpt):
    bits = int(ckpt.run_config.get("precision", 32)) if ckpt.run_config else 32
    if bits == 64 or ckpt.model.params and next(iter(ckpt.model.params.values())).dtype == np.float64:
        return ad.precision(64)
    return contextlib.nullcontext()


def cmd_train(args) -> int:
    from .applications import prepare_image
    from .networks import init_model
    from .store import load_checkpoint, load_png, save_checkpoint, save_run_config, load_run_config
    from .trainer import Dataset, LossLog, new_state, train_all

    cfg_path = Path(args.config)
    cfg = load_run_config(cfg_path)
    if args.seed is not None:
        cfg.seed = args.seed
    if not cfg.images:
        print(f"error: {cfg_path}: 'images' lists no training images", file=sys.stderr)
        return EXIT_USAGE
    paths = [(cfg_path.parent / p) if not Path(p).is_absolute() else Path(p) for p in cfg.images]
    out = Path(cfg.output_dir)
    if not out.is_absolute():
        out = cfg_path.parent / out
    with ad.precision(cfg.precision):
        raw = [load_png(p) for p in paths]
        geom = cfg.geometry(*raw[0].shape[1:])
        images = [prepare_image(im, geom) for im in raw]
        tcfg = cfg.train_config()
        mcfg = cfg.model_config(geom.k)
        data = Dataset(images, geom, mcfg.encoder_input_size)
        if args.resume:
            ckpt = load_checkpoint(args.resume)
            if ckpt.model.cfg.to_dict() != mcfg.to_dict() or ckpt.geometry.sizes != geom.sizes:
                print(f"error: checkpoint {args.resume} does not match config {cfg_path}", file=sys.stderr)
                return EXIT_USAGE
            model, state = ckpt.model, ckpt.state
        else:
            model = init_model(mcfg, np.random.default_rng(cfg.seed))
            state = new_state(geom, cfg.seed)
        out.mkdir(parents=True, exist_ok=True)
        save_run_config(cfg, out / "config.json")

        def on_scale_end(ck):
            save_checkpoint(ck, out / f"scale{ck.model.scale}.milc")
            print(f"scale {ck.model.scale}/{geom.k} done", flush=True)

        with open(out / "loss.log", "a" if args.resume else "w", encoding="utf-8") as fh:
            ckpt = train_all(model, data, tcfg, state, LossLog(fh), on_scale_end, cfg.to_dict())
        save_checkpoint(ckpt, out / "final.milc")
    print(f"wrote {out / 'final.milc'}")
    return EXIT_OK


def cmd_generate(args) -> int:
    from .applications import feedforward_generate, generate_arbitrary
    from .store import load_checkpoint, load_png, save_png

    if args.n < 1:
        print("error: --n must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if (args.width is None) != (args.height is None):
        print("error: --width and --height go together", file=sys.stderr)
        return EXIT_USAGE
    ckpt = load_checkpoint(args.ckpt)
    rng = np.random.default_rng(args.seed or 0)
    with _precision_for(ckpt):
        image = load_png(args.image)
        if args.width is not None:
            samples = generate_arbitrary(ckpt, image, args.height, args.width, rng, args.n)
        else:
            samples = feedforward_generate(ckpt, image, args.n, rng)
    out = Path(args.out)
    for k, s in enumerate(samples):
        save_png(out / f"sample_{k:03d}.png", s)
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def cmd_interpolate(args) -> int:
    from .applications import InterpolationSpec, interpolate
    from .store import load_checkpoint, load_png, save_png

    ckpt = load_checkpoint(args.ckpt)
    seed = args.seed or 0
    with _precision_for(ckpt):
        a, b = load_png(args.image_a), load_png(args.image_b)
        frames = [interpolate(ckpt, InterpolationSpec(a, b, alpha, args.inject_scale),
                              np.random.default_rng(seed))[0] for alpha in args.alpha]
    out = Path(args.out)
    for alpha, f in zip(args.alpha, frames):
        save_png(out / f"alpha_{alpha:.3f}.png", f)
    if len(frames) > 1:
        save_png(out / "sweep.png", np.concatenate(frames, axis=2))
    print(f"wrote {len(frames)} frame(s) to {out}")
    return EXIT_OK


def cmd_inject(args) -> int:
    from .applications import inject_at_scale
    from .store import load_checkpoint, load_png, save_png

    ckpt = load_checkpoint(args.ckpt)
    with _precision_for(ckpt):
        out = inject_at_scale(ckpt, load_png(args.source), load_png(args.content), args.scale,
                              np.random.default_rng(args.seed or 0))
    save_png(args.out, out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .applications import feedforward_generate, prepare_image
    from .metrics import MetricReport, diversity, patch_swd
    from .store import list_images, load_checkpoint, load_png

    if args.diversity_n < 2:
        print("error: --diversity-n must be >= 2", file=sys.stderr)
        return EXIT_USAGE
    ckpt = load_checkpoint(args.ckpt)
    seed = args.seed or 0
    lines = []
    with _precision_for(ckpt):
        for path in list_images(args.images):
            image = prepare_image(load_png(path), ckpt.geometry)
            samples = feedforward_generate(ckpt, image, args.diversity_n, np.random.default_rng(seed))
            rep = MetricReport(diversity(samples),
                               {"sample0_vs_image": patch_swd(samples[0], image, rng=np.random.default_rng(seed))})
            lines.append(f"# {path.name}\n" + rep.to_text())
    text = "".join(lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import proplab

    props = ("zero-eq", "case1") if args.prop is None else (
        ("zero-eq", "case1", "leakage") if args.prop == "all" else (args.prop,))
    seed = args.seed or 0
    ok = True
    if "zero-eq" in props:
        for variant in ("shared_encoder_case1", "shared_encoder_case2", "hyper"):
            rep = proplab.verify_zero_equilibrium(variant, np.random.default_rng(seed))
            print(rep.to_text())
            ok &= rep.passed
        rep = proplab.verify_zero_equilibrium("hyper", np.random.default_rng(seed), projection_bias=0.1)
        print(rep.to_text() + " [nonzero projection biases]")
        ok &= rep.passed
    if "case1" in props:
        for s in range(seed, seed + 10):
            rep = proplab.verify_case1_cancellation(s)
            print(rep.to_text())
            ok &= rep.passed
    if "leakage" in props:
        if args.images:
            from .store import load_png
            images = [load_png(p) for p in args.images]
        else:
            from .textures import texture
            images = [texture(0, 32, 32), texture(1, 32, 32)]
        rep = proplab.leakage_experiment(images)
        print(rep.to_text())
        ok &= rep.passed
    return EXIT_OK if ok else EXIT_USAGE


COMMANDS = {"train": cmd_train, "generate": cmd_generate, "interpolate": cmd_interpolate,
            "inject": cmd_inject, "metrics": cmd_metrics, "verify": cmd_verify}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MilearnError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
