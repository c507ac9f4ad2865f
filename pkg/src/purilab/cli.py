"""purilab command line: gen, train, purify, detect, eval, sweep.

Every subcommand accepts ``--config FILE.json``; keys in the file (using the
flag names with underscores) become defaults, and explicit flags override them.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import imageio
from .denoiser import TrainConfig, save_model, train_conv_denoiser
from .diffusion import purify_image
from .errors import ParameterError
from .experiment import ExperimentConfig, ExperimentError, load_denoiser, run_experiment, run_sweep, write_dataset
from .forensics import DETECTORS
from .forgerylab import PipelineParams, Recipe, synth_clean
from .schedule import build_linear_schedule

log = logging.getLogger("purilab")


def _add_purify_flags(p):
    p.add_argument("--model", default="model.cfdn", help="CFDN1 model file")
    p.add_argument("--t-star", type=int, default=40)
    p.add_argument("--guided", action="store_true", help="use SSIM/MSE guidance toward the input")
    p.add_argument("--scale", type=float, default=1e6)
    p.add_argument("--metric", choices=("ssim", "mse"), default="ssim")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch", type=int, default=256)


def _add_eval_flags(p):
    _add_purify_flags(p)
    p.add_argument("--dataset", default="data")
    p.add_argument("--detectors", nargs="+", default=sorted(DETECTORS), choices=sorted(DETECTORS))
    p.add_argument("--median-kernel", type=int, default=3)
    p.add_argument("--limit", type=int, default=0, help="only evaluate the first N images")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="out")


def build_parser():
    parser = argparse.ArgumentParser(prog="purilab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic forged dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--region", type=int, default=64)
    p.add_argument("--out", default="data")

    p = sub.add_parser("train", help="train the convolutional denoiser on clean synthetic images")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=64)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--crop", type=int, default=32)
    p.add_argument("--t-max", type=int, default=250, help="train on steps 1..t_max (0 = all)")
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--out", default="model.cfdn")

    p = sub.add_parser("purify", help="purify one PNG image")
    _add_purify_flags(p)
    p.add_argument("input")
    p.add_argument("--image-id", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("detect", help="write a detector heat map for one PNG image")
    p.add_argument("input")
    p.add_argument("--detector", choices=sorted(DETECTORS), default="grid")
    p.add_argument("--format", choices=("pfm", "png16"), default=None,
                   help="default: from the output suffix (.pfm or .png)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score detectors before and after purification")
    _add_eval_flags(p)

    p = sub.add_parser("sweep", help="repeat the evaluation over t_star or scale values")
    _add_eval_flags(p)
    p.add_argument("--param", choices=("t_star", "scale"), default="t_star")
    p.add_argument("--values", type=float, nargs="+", required=True)

    for action in sub.choices.values():
        action.add_argument("--config", help="JSON file of defaults; flags override")
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        defaults = json.loads(Path(args.config).read_text())
        if not isinstance(defaults, dict):
            raise ParameterError(f"{args.config}: expected a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(defaults) - known
        if unknown:
            raise ParameterError(f"{args.config}: unknown keys {sorted(unknown)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def experiment_config(args):
    return ExperimentConfig(
        dataset=args.dataset, model=args.model, out=args.out,
        t_star=args.t_star, guided=args.guided, scale=args.scale, metric=args.metric,
        seed=args.seed, patch=args.patch, jobs=args.jobs, detectors=tuple(args.detectors),
        median_kernel=args.median_kernel, limit=args.limit,
        sweep_param=getattr(args, "param", "t_star"),
        sweep_values=tuple(getattr(args, "values", ()) or ()),
    )


def cmd_gen(args):
    manifest = write_dataset(args.out, args.seed, Recipe(count=args.count, size=args.size, region=args.region))
    print(f"wrote {len(manifest['images'])} images to {args.out}")


def cmd_train(args):
    schedule = build_linear_schedule(args.T, args.beta_start, args.beta_end)
    data = [synth_clean(args.seed * 100_003 + 10_000 + i, args.size, PipelineParams()) for i in range(args.images)]
    config = TrainConfig(iterations=args.iterations, batch_size=args.batch_size, learning_rate=args.lr,
                         seed=args.seed, patch=args.crop, t_max=args.t_max)
    net = train_conv_denoiser(data, schedule, config)
    save_model(net, args.out, schedule)
    print(f"saved {net.n_params} parameters to {args.out}")


def cmd_purify(args):
    net, schedule = load_denoiser(args.model)
    cfg = ExperimentConfig(t_star=args.t_star, guided=args.guided, scale=args.scale,
                           metric=args.metric, seed=args.seed, patch=args.patch)
    image = imageio.read_png(args.input)
    out = purify_image(image, net, schedule, cfg.purify_config(), args.image_id, args.patch)
    imageio.write_png(args.out, out)


def cmd_detect(args):
    heat = DETECTORS[args.detector](imageio.read_png(args.input))
    fmt = args.format or ("pfm" if args.out.lower().endswith(".pfm") else "png16")
    if fmt == "pfm":
        imageio.write_pfm(args.out, heat)
    else:
        imageio.write_heat_png16(args.out, heat)


def cmd_eval(args):
    _, summary = run_experiment(experiment_config(args))
    for variant, by_metric in summary["deltas"].items():
        d = by_metric["mcc"]
        per = "  ".join(f"{k}={v:+.4f}" for k, v in sorted(d["deltas"].items()))
        print(f"{variant:9s} delta mcc  {per}  avg_w={d['avg_w']:+.4f}")


def cmd_sweep(args):
    rows = run_sweep(experiment_config(args))
    for r in rows:
        print(f"{r['param']}={r['value']:<10g} {r['detector']:9s} dmcc={r['delta_mcc']:+.4f} "
              f"psnr={r['psnr']:.2f} ssim={r['ssim']:.4f}")


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "purify": cmd_purify,
            "detect": cmd_detect, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None):
    try:
        args = parse_args(argv)
    except (ParameterError, OSError, json.JSONDecodeError) as exc:
        print(f"purilab: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        COMMANDS[args.command](args)
    except (OSError, ExperimentError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"purilab {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
