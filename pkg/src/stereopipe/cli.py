"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or format error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from stereopipe import imagecore, rectify, scenes
from stereopipe.imagecore import DisparityMap, FormatError, GrayImage
from stereopipe.pipeline import (
    POST_STAGES,
    PipelineConfig,
    StageError,
    benchmark,
    build_config,
    evaluate,
    load_config,
    run_pipeline,
)
from stereopipe.sgm import PROFILES

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"expected positive size, got {text!r}")
    return w, h


def _read_pgm(path: str) -> GrayImage:
    return imagecore.load_pgm(Path(path).read_bytes())


def _write_disparity(disp: DisparityMap, path: str) -> None:
    if path.lower().endswith(".pfm"):
        Path(path).write_bytes(imagecore.save_disparity_pfm(disp))
    else:
        Path(path).write_bytes(imagecore.save_disparity_pgm16(disp))


def _config(args) -> PipelineConfig:
    return load_config(args.config) if args.config else PipelineConfig()


def cmd_match(args) -> int:
    cfg = _config(args)
    off = {name: False for name in POST_STAGES if getattr(args, f"no_{name}")}
    if off:
        cfg = replace(cfg, stages=replace(cfg.stages, **off))
    if args.map:
        cfg = replace(cfg, rectification_map=args.map, stages=replace(cfg.stages, rectify=True))
    disp = run_pipeline(_read_pgm(args.left), _read_pgm(args.right), cfg)
    _write_disparity(disp, args.output)
    print(f"wrote {args.output} ({disp.width}x{disp.height}, density {disp.valid.mean():.4f})")
    return 0


def cmd_rectify(args) -> int:
    rmap = rectify.decode_map(Path(args.map).read_bytes())
    left, right = rectify.rectify_pair(_read_pgm(args.left), _read_pgm(args.right), rmap)
    for name, img in (("left", left), ("right", right)):
        Path(f"{args.output}_{name}.pgm").write_bytes(imagecore.save_pgm(img))
    print(f"wrote {args.output}_left.pgm and {args.output}_right.pgm")
    return 0


def cmd_genmap(args) -> int:
    w, h = args.width, args.height
    if w < 1 or h < 1:
        raise UsageError("map size must be positive")
    if args.identity:
        rmap = rectify.RectificationMap.identity(w, h)
    else:
        rmap = scenes.synthetic_map(w, h, args.seed)
    data = rectify.encode_map(rmap)
    Path(args.output).write_bytes(data)
    per_pixel = (len(data)) / (w * h)
    print(f"wrote {args.output}: {len(data)} bytes ({per_pixel:.3f} bytes/pixel for both images)")
    return 0


def cmd_genscene(args) -> int:
    w, h = args.size
    try:
        scene = scenes.gen_test_scene(args.kind, w, h, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    prefix = args.output
    Path(f"{prefix}_left.pgm").write_bytes(imagecore.save_pgm(scene.left))
    Path(f"{prefix}_right.pgm").write_bytes(imagecore.save_pgm(scene.right))
    Path(f"{prefix}_truth.pfm").write_bytes(imagecore.save_disparity_pfm(scene.truth))
    occl = GrayImage(np.where(scene.occluded, 255, 0).astype(np.uint8))
    Path(f"{prefix}_occl.pgm").write_bytes(imagecore.save_pgm(occl))
    print(f"wrote {prefix}_left.pgm, {prefix}_right.pgm, {prefix}_truth.pfm, {prefix}_occl.pgm")
    return 0


def cmd_bench(args) -> int:
    w, h = args.size
    base = _config(args)
    p = PROFILES[base.profile]
    if args.range % p:
        raise UsageError(f"range {args.range} is not a multiple of p={p}")
    cfg = build_config({"n_i": str(args.range // p)}, base)
    scene = scenes.shift_scene(6.0, w, h, args.seed)
    report = benchmark([(scene.left, scene.right)], cfg, repetitions=args.frames)
    print(report.table())
    for line in report.key_values():
        print(line)
    return 0


def cmd_eval(args) -> int:
    disp = imagecore.load_disparity(Path(args.disp).read_bytes())
    truth = imagecore.load_disparity(Path(args.truth).read_bytes())
    mask = _read_pgm(args.mask).data > 0 if args.mask else None
    m = evaluate(disp, truth, mask)
    print(f"density={m.density!r}")
    print(f"evaluated={m.evaluated}")
    for t, v in m.bad.items():
        print(f"bad_{t}=" + ("absent" if v is None else repr(v)))
    print("mae=" + ("absent" if m.mae is None else repr(m.mae)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stereopipe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("match", help="compute a disparity map from a rectified or raw pair")
    p.add_argument("left")
    p.add_argument("right")
    p.add_argument("-c", "--config")
    p.add_argument("-o", "--output", default="disparity.pfm")
    p.add_argument("--map", help="RMAP1 file; enables rectification")
    for name in POST_STAGES:
        p.add_argument(f"--no-{name}", action="store_true", help=f"disable the {name} stage")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("rectify", help="apply an RMAP1 map to a pair")
    p.add_argument("left")
    p.add_argument("right")
    p.add_argument("map")
    p.add_argument("-o", "--output", required=True, help="output prefix")
    p.set_defaults(func=cmd_rectify)

    p = sub.add_parser("genmap", help="write an identity or synthetic RMAP1 map")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--identity", action="store_true")
    mode.add_argument("--synthetic", action="store_true")
    p.add_argument("width", type=int)
    p.add_argument("height", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_genmap)

    p = sub.add_parser("genscene", help="write a synthetic pair with ground truth")
    p.add_argument("--kind", default="shift:6", help="shift:D | two-plane:D1,D2 | noise")
    p.add_argument("--size", type=_size, default=(640, 480))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="output prefix")
    p.set_defaults(func=cmd_genscene)

    p = sub.add_parser("bench", help="measure pipeline throughput")
    p.add_argument("--size", type=_size, default=(640, 480))
    p.add_argument("--range", type=int, choices=(128, 256), default=128)
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-c", "--config")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="score a disparity map against ground truth")
    p.add_argument("disp")
    p.add_argument("truth")
    p.add_argument("--mask", help="PGM, non-zero pixels are excluded (occlusions)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "frames", 1) < 1:
        parser.error("--frames must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"stereopipe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, StageError, ValueError, OSError) as exc:
        print(f"stereopipe: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
