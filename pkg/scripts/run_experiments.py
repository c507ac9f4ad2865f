"""Full pipeline: dataset, denoiser, default evaluation and both sweeps.

    python3 scripts/run_experiments.py --out runs/default

Reuses runs/<...>/model.cfdn (or --model) if present.
"""

import argparse
import logging
from pathlib import Path

from purilab.cli import main as cli


def run(*args):
    code = cli([str(a) for a in args])
    if code:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/default")
    ap.add_argument("--model", default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--sweep-images", type=int, default=6)
    ap.add_argument("--sweep-t-star", type=int, default=20, help="t* held fixed in the scale sweep")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    data = out / "data"
    model = Path(args.model) if args.model else out / "model.cfdn"
    if not (data / "manifest.json").is_file():
        run("gen", "--seed", args.seed, "--out", data)
    if not model.is_file():
        run("train", "--out", model)
    common = ["--dataset", data, "--model", model, "--seed", args.seed, "--jobs", args.jobs]
    run("eval", *common, "--guided", "--out", out / "eval")
    run("sweep", *common, "--limit", args.sweep_images, "--param", "t_star",
        "--values", 10, 20, 40, 80, 160, "--out", out / "sweep_t_star")
    run("sweep", *common, "--limit", args.sweep_images, "--guided", "--t-star", args.sweep_t_star,
        "--param", "scale", "--values", 0, 1e2, 1e4, 1e6, "--out", out / "sweep_scale")


if __name__ == "__main__":
    main()
