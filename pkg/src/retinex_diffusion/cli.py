"""Command-line entry point: ``retinex-diffusion <command> ...``."""
import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .bundle import ModelBundle
from .checkpoint import load_checkpoint, save_checkpoint
from .config import read_config
from .data import list_images, load_image, load_pairs, save_image, to_image, to_tensor
from .decomposition import decompose
from .errors import CheckpointError, ConfigError, DatasetError, NumericalError, ShapeError
from .metrics import hist_l1, psnr, ssim
from .retinex import linear_stretch, msr_reflectance
from .sampler import enhance
from .trainer import Trainer, pretrain_dnet

log = logging.getLogger("retinex_diffusion")


def pad_to_multiple(y, m=16):
    """Reflect-pad bottom/right so H and W divide ``m``; returns (padded, (H, W))."""
    H, W = y.shape[-2:]
    ph, pw = (-H) % m, (-W) % m
    if ph or pw:
        y = F.pad(y, (0, pw, 0, ph), mode="reflect" if min(H, W) > max(ph, pw) else "replicate")
    return y, (H, W)


def _configs(args):
    train, sampler = read_config(getattr(args, "config", None))
    over = {k: getattr(args, k) for k in ("iterations", "seed") if getattr(args, k, None) is not None}
    if over:
        train = dataclasses.replace(train, **over)
    return train, sampler


def cmd_pretrain_dnet(args):
    train, sampler = _configs(args)
    ds = load_pairs(args.data)
    bundle = ModelBundle.create(seed=train.seed)
    history = pretrain_dnet(ds, bundle, train)
    for rec in history[:: max(train.log_every, 1)] + history[-1:]:
        print(json.dumps(rec))
    save_checkpoint(args.out, bundle, 0, train, sampler)
    log.info("saved %s", args.out)


def cmd_train(args):
    train, sampler = _configs(args)
    ds = load_pairs(args.data)
    source = args.resume or args.checkpoint
    ck = load_checkpoint(source)
    trainer = Trainer(ck.bundle, ds, train, sampler)
    if args.resume:
        trainer.restore(ck.iteration, ck.optimizer, ck.rng_state)
    trainer.run(out_dir=args.out, on_log=lambda rec: print(json.dumps(rec), flush=True))


def _inputs(path):
    path = Path(path)
    return list_images(path) if path.is_dir() else [path]


def _enhance_file(src, bundle, sampler, pad):
    y = to_tensor(load_image(src))
    size = y.shape[-2:]
    if pad:
        y, size = pad_to_multiple(y)
    out = enhance(y, bundle, sampler)
    return to_image(out[..., : size[0], : size[1]])


def cmd_enhance(args):
    ck = load_checkpoint(args.checkpoint)
    _, sampler = _configs(args)
    over = {k: getattr(args, k) for k in ("seed", "steps") if getattr(args, k) is not None}
    sampler = dataclasses.replace(sampler, **over)
    bundle = ck.bundle.eval()
    srcs = _inputs(args.input)
    out = Path(args.output)
    for src in srcs:
        dst = out / src.name if len(srcs) > 1 or out.is_dir() else out
        save_image(dst, _enhance_file(src, bundle, sampler, args.pad))
        print(dst)


def cmd_decompose(args):
    out = Path(args.outdir)
    img = load_image(args.input)
    if args.classical:
        save_image(out / "reflectance.png", linear_stretch(msr_reflectance(img)))
    else:
        bundle = load_checkpoint(args.checkpoint).bundle.eval()
        y, size = pad_to_multiple(to_tensor(img), 2 ** bundle.dnet.config.depth)
        with torch.no_grad():
            R, L = decompose(y, y, bundle.dnet)
        save_image(out / "reflectance.png", to_image(R[..., : size[0], : size[1]]))
        save_image(out / "illumination.png", to_image(L[..., : size[0], : size[1]]))
    print(out)


def image_metrics(pred, ref):
    return {"psnr": psnr(pred, ref), "ssim": ssim(pred, ref),
            "hist_l1": hist_l1(pred.mean(axis=-1), ref.mean(axis=-1))}


def format_table(rows):
    name_w = max([len("image")] + [len(r["image"]) for r in rows])
    lines = [f"{'image':<{name_w}}  {'PSNR':>8}  {'SSIM':>7}  {'Hist-L1':>8}"]
    for r in rows:
        lines.append(f"{r['image']:<{name_w}}  {r['psnr']:>8.3f}  {r['ssim']:>7.4f}  {r['hist_l1']:>8.4f}")
    return "\n".join(lines)


def cmd_evaluate(args):
    highs = {p.name: p for p in list_images(args.high_dir)}
    bundle = sampler = None
    if args.checkpoint:
        bundle = load_checkpoint(args.checkpoint).bundle.eval()
        _, sampler = _configs(args)
        if args.seed is not None:
            sampler = dataclasses.replace(sampler, seed=args.seed)
    rows = []
    for lo in list_images(args.low_dir):
        if lo.name not in highs:
            raise DatasetError(f"no reference image for {lo} in {args.high_dir}")
        pred = _enhance_file(lo, bundle, sampler, True) if bundle else load_image(lo)
        ref = load_image(highs[lo.name])
        if pred.shape != ref.shape:
            raise ShapeError(f"{lo} is {pred.shape[:2]} but its reference is {ref.shape[:2]}")
        rows.append({"image": lo.name, **image_metrics(pred, ref)})
    if not rows:
        raise DatasetError(f"no images in {args.low_dir}")
    mean = {"image": "mean", **{k: float(np.mean([r[k] for r in rows])) for k in ("psnr", "ssim", "hist_l1")}}
    print(format_table(rows + [mean]))
    if args.sidecar:
        with open(args.sidecar, "w") as f:
            for r in rows + [mean]:
                f.write(json.dumps(r) + "\n")


def build_parser():
    p = argparse.ArgumentParser(prog="retinex-diffusion", description="Low-light enhancement with a Retinex-conditioned diffusion model.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pretrain-dnet", help="fit the decomposition network and write a fresh checkpoint")
    s.add_argument("--data", required=True, help="dataset root with low/ and high/")
    s.add_argument("--out", required=True, help="checkpoint path to write")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_pretrain_dnet)

    s = sub.add_parser("train", help="joint training of ANet, UNet and RNet")
    s.add_argument("--data", required=True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="starting checkpoint, usually from pretrain-dnet")
    src.add_argument("--resume", help="continue a run from one of its checkpoints")
    s.add_argument("--out", required=True, help="directory for logs and checkpoints")
    s.add_argument("--config")
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("enhance", help="enhance an image or a directory of images")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--pad", action="store_true", help="pad to a multiple of 16 and crop back")
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("decompose", help="write reflectance.png and illumination.png")
    s.add_argument("input")
    s.add_argument("outdir")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--classical", action="store_true", help="multi-scale Retinex reflectance only")
    s.set_defaults(func=cmd_decompose)

    s = sub.add_parser("evaluate", help="PSNR/SSIM/Hist-L1 table against references")
    s.add_argument("low_dir")
    s.add_argument("high_dir")
    s.add_argument("--checkpoint", help="enhance the low images first")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--sidecar", help="also write one JSON record per image here")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (CheckpointError, ConfigError, DatasetError, NumericalError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
