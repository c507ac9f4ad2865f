"""Detector scores on clean and forged synthetic images (no denoiser needed).

    python3 scripts/detector_baseline.py --count 8
"""

import argparse

import numpy as np

from purilab.forensics import DETECTORS
from purilab.forgerylab import Recipe, generate_dataset
from purilab.metrics import score, weighted_confusion


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    stats = {k: [] for k in DETECTORS}
    for _, clean, forged, mask, _ in generate_dataset(args.seed, Recipe(count=args.count)):
        for name, det in DETECTORS.items():
            heat = det(forged)
            _, mcc, f1 = score(weighted_confusion(heat, mask))
            stats[name].append((mcc, f1, heat[mask == 1].mean(), heat[mask == 0].mean(), det(clean).mean()))
    print(f"{'detector':9s} {'mcc':>7s} {'f1':>7s} {'in':>7s} {'out':>7s} {'clean':>7s}")
    for name, rows in stats.items():
        print(f"{name:9s} " + " ".join(f"{v:7.3f}" for v in np.mean(rows, axis=0)))


if __name__ == "__main__":
    main()
