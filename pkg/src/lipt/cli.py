"""``lipt`` command line."""
from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import io, masks
from .bench import bench
from .errors import LIPTError
from .metrics import psnr, rgb_to_y, shave, ssim
from .model import LIPTConfig, LIPTWeights, build, forward, fuse_model


def _load_model(args):
    config = LIPTConfig.load(args.config, scale=args.scale)
    weights = LIPTWeights.from_named(io.load_weights(args.weights))
    return config, weights


def cmd_infer(args):
    config, weights = _load_model(args)
    if args.fused and not weights.fused:
        weights = fuse_model(weights)
    img = io.load_ppm(args.input)
    x = io.image_to_tensor(img)
    if config.in_channels == 1:
        x = (rgb_to_y(img) / 255.0).astype(np.float32)
    y = forward(x, weights, config)
    io.save_ppm(io.tensor_to_image(y), args.output)
    print(f"wrote {args.output} ({img.width * config.scale}x{img.height * config.scale})")


def cmd_fuse(args):
    weights = LIPTWeights.from_named(io.load_weights(args.weights))
    io.save_weights(fuse_model(weights).named(), args.out)
    print(f"wrote {args.out}")


def cmd_init(args):
    config = LIPTConfig.load(args.config, scale=args.scale)
    io.save_weights(build(config, args.seed).named(), args.out)
    print(f"wrote {args.out}")


def cmd_mask_verify(args):
    mask = masks.load_mask(args.mask)
    b = masks.beta(mask)
    verdict = "non-volatile" if b == 0.0 else "volatile"
    print(f"beta={b:.4f} {verdict}")
    for row in masks.coverage_map(mask):
        print(" ".join(str(v) for v in row))


_MASK_KINDS = {
    "sparse": masks.sparse_mask,
    "dense": masks.dense_mask,
    "stride": masks.global_stride_mask,
}


def cmd_mask_gen(args):
    mask = _MASK_KINDS[args.kind](args.p, args.s)
    masks.save_mask(mask, args.out)
    print(f"wrote {args.out}")


def cmd_bench(args):
    config = LIPTConfig.load(args.config)
    report = bench(config, args.height, args.width, fused=args.fused, runs=args.runs)
    print("\n".join(report.lines()))


def cmd_metrics(args):
    ref = rgb_to_y(io.load_ppm(args.ref))
    test = rgb_to_y(io.load_ppm(args.test))
    border = args.scale if args.crop_border is None else args.crop_border
    ref, test = shave(ref, border), shave(test, border)
    p = psnr(ref, test)
    p_txt = "inf" if math.isinf(p) else f"{p:.4f}"
    print(f"psnr_y={p_txt} dB ssim_y={ssim(ref, test):.6f}")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1 like every other failure."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"lipt: usage error: {message}\n")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lipt", description="LIPT inference engine")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("infer", help="upscale/restore a PPM image")
    p.add_argument("--config", required=True, help="tiny|small|base or a JSON file")
    p.add_argument("--weights", required=True)
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--fused", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("fuse", help="fuse HRM branches into single 3x3 convolutions")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("init", help="write random weights")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("mask", help="sampling-mask tools")
    msub = p.add_subparsers(dest="mask_command", required=True)
    m = msub.add_parser("verify")
    m.add_argument("--mask", required=True)
    m.set_defaults(func=cmd_mask_verify)
    m = msub.add_parser("gen")
    m.add_argument("--kind", choices=sorted(_MASK_KINDS), required=True)
    m.add_argument("--p", type=int, required=True)
    m.add_argument("--s", type=int, required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mask_gen)

    p = sub.add_parser("bench", help="time the forward pass")
    p.add_argument("--config", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--fused", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("metrics", help="Y-channel PSNR/SSIM between two PPM images")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--scale", type=int, default=0,
                   help="super-resolution scale; sets the default crop border")
    p.add_argument("--crop-border", type=int, default=None)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        args.func(args)
    except LIPTError as exc:
        print(f"lipt: {exc.kind} error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"lipt: I/O error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"lipt: parse error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
