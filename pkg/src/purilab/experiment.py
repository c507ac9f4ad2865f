"""Dataset files, the per-image evaluation loop, and parameter sweeps."""

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import imageio
from .denoiser import load_model
from .diffusion import PurifyConfig, median_purify, purify_image
from .errors import ParameterError
from .forensics import DETECTORS
from .forgerylab import Recipe, generate_dataset
from .metrics import PSNR_CAP, delta_report, image_quality, score, weighted_confusion
from .schedule import build_linear_schedule

log = logging.getLogger(__name__)

VARIANTS = ("orig", "diff-cf", "diff-cfg", "median")
SWEEP_AXES = ("t_star", "scale")
REPORT_COLUMNS = ("image_id", "detector", "variant", "iou", "mcc", "f1", "psnr", "ssim")
SWEEP_COLUMNS = ("param", "value", "detector", "delta_mcc", "delta_iou", "psnr", "ssim")
LABEL_NOTE = (
    "tp/fp/tn/fn follow the usual definitions (fp = heat outside the mask, "
    "fn = missed heat inside it); swapping the fp and fn labels leaves iou, f1 "
    "and mcc unchanged"
)


class ExperimentError(RuntimeError):
    """A failure inside the evaluation loop, tagged with image and stage."""


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "data"
    model: str = "model.cfdn"
    out: str = "out"
    t_star: int = 40
    guided: bool = False
    scale: float = 1e6
    metric: str = "ssim"
    seed: int = 0
    patch: int = 256
    jobs: int = 1
    detectors: tuple = ("grid", "variance", "residual")
    median_kernel: int = 3
    limit: int = 0  # evaluate only the first ``limit`` images when > 0
    sweep_param: str = "t_star"
    sweep_values: tuple = field(default_factory=tuple)

    def __post_init__(self):
        unknown = set(self.detectors) - set(DETECTORS)
        if unknown or not self.detectors:
            raise ParameterError(f"unknown detectors {sorted(unknown)}; choose from {sorted(DETECTORS)}")
        if self.patch < 1 or self.jobs < 1 or self.limit < 0:
            raise ParameterError("patch and jobs must be >= 1, limit >= 0")
        if self.sweep_param not in SWEEP_AXES:
            raise ParameterError(f"sweep axis must be one of {SWEEP_AXES}, got {self.sweep_param!r}")
        if any(v < 0 for v in self.sweep_values):
            raise ParameterError("sweep values must be non-negative")
        self.purify_config()

    def purify_config(self, guided=None):
        return PurifyConfig(
            t_star=self.t_star,
            guided=self.guided if guided is None else guided,
            scale=self.scale,
            metric=self.metric,
            seed=self.seed,
        )

    def variants(self):
        """orig, diff-cf and median always; diff-cfg only when guidance is on."""
        return tuple(v for v in VARIANTS if v != "diff-cfg" or self.guided)


# -- dataset directory ------------------------------------------------------------

def write_dataset(out, seed, recipe=Recipe()):
    """Write NNN_{clean,forged,mask}.png and manifest.json; return the manifest."""
    out = imageio.ensure_dir(out)
    items = []
    for i, clean, forged, mask, record in generate_dataset(seed, recipe):
        stem = f"{i:03d}"
        imageio.write_png(out / f"{stem}_clean.png", clean)
        imageio.write_png(out / f"{stem}_forged.png", forged)
        imageio.write_mask(out / f"{stem}_mask.png", mask)
        items.append(dict(record, clean=f"{stem}_clean.png", forged=f"{stem}_forged.png", mask=f"{stem}_mask.png"))
    manifest = {"seed": int(seed), "recipe": asdict(recipe), "images": items}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(dataset):
    path = Path(dataset) / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest.json in {dataset}")
    return json.loads(path.read_text())


def load_denoiser(path):
    net, header = load_model(path)
    schedule = build_linear_schedule(
        T=header["T"], beta_start=header.get("beta_start", 1e-4), beta_end=header.get("beta_end", 0.02))
    return net, schedule


# -- one image ----------------------------------------------------------------------

def _stage(image_id, stage, fn, *args):
    try:
        return fn(*args)
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError(f"image {image_id}, stage {stage}: {type(exc).__name__}: {exc}") from exc


def purified_variants(forged, image_id, config, denoiser, schedule, variants):
    """Map each requested variant name to its 8-bit re-quantized image."""
    out = {}
    for name in variants:
        if name == "orig":
            out[name] = forged
        elif name == "median":
            out[name] = _stage(image_id, "median", median_purify, forged, config.median_kernel)
        else:
            pc = config.purify_config(guided=(name == "diff-cfg"))
            out[name] = _stage(image_id, f"purify {name}", purify_image,
                               forged, denoiser, schedule, pc, image_id, config.patch)
        out[name] = imageio.quantize8(out[name])
    return out


def evaluate_image(image_id, forged, mask, config, denoiser, schedule, variants):
    """Report rows for one image: one per (detector, variant)."""
    images = purified_variants(forged, image_id, config, denoiser, schedule, variants)
    rows = []
    for variant, img in images.items():
        if variant == "orig":
            q = (PSNR_CAP, 1.0)
        else:
            q = _stage(image_id, f"quality {variant}", image_quality, img, forged)
        for det in config.detectors:
            heat = _stage(image_id, f"detect {det} on {variant}", DETECTORS[det], img)
            iou, mcc, f1 = score(_stage(image_id, f"score {det} on {variant}", weighted_confusion, heat, mask))
            rows.append({"image_id": image_id, "detector": det, "variant": variant,
                         "iou": iou, "mcc": mcc, "f1": f1, "psnr": q[0], "ssim": q[1]})
    return rows


_WORKER = {}


def _worker_eval(args):
    config, variants, image_id, forged_path, mask_path = args
    net = schedule = None
    if any(v.startswith("diff") for v in variants):
        if _WORKER.get("model") != config.model:
            _WORKER["net"] = _stage(image_id, "load model", load_denoiser, config.model)
            _WORKER["model"] = config.model
        net, schedule = _WORKER["net"]
    forged = _stage(image_id, "load", imageio.read_png, forged_path)
    mask = _stage(image_id, "load", imageio.read_mask, mask_path)
    return evaluate_image(image_id, forged, mask, config, net, schedule, variants)


def _tasks(config, variants):
    root = Path(config.dataset)
    items = read_manifest(root)["images"]
    if config.limit:
        items = items[:config.limit]
    tasks = []
    for item in items:
        paths = [root / item["forged"], root / item["mask"]]
        for p in paths:
            if not p.is_file():
                raise FileNotFoundError(f"missing dataset file {p}")
        tasks.append((config, variants, int(item["index"]), str(paths[0]), str(paths[1])))
    return tasks


def collect_rows(config, variants=None):
    """Evaluate every image; rows come back sorted whatever ``jobs`` is."""
    variants = config.variants() if variants is None else tuple(variants)
    if not Path(config.model).is_file() and any(v.startswith("diff") for v in variants):
        raise FileNotFoundError(f"missing model file {config.model}")
    tasks = _tasks(config, variants)
    if config.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            per_image = list(pool.map(_worker_eval, tasks))
    else:
        per_image = []
        for task in tasks:
            log.info("image %d", task[2])
            per_image.append(_worker_eval(task))
    rows = [r for rs in per_image for r in rs]
    order = {v: k for k, v in enumerate(VARIANTS)}
    rows.sort(key=lambda r: (r["image_id"], r["detector"], order[r["variant"]]))
    return rows


# -- reports ------------------------------------------------------------------------

def _fmt(v):
    return v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else f"{v:.6f}")


def report_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def summarize(rows, config=None):
    """Dataset means per (detector, variant) and deltas against the originals."""
    means = {}
    for r in rows:
        means.setdefault(r["detector"], {}).setdefault(r["variant"], []).append(r)
    table = {
        det: {var: {k: float(np.mean([r[k] for r in rs])) for k in ("iou", "mcc", "f1", "psnr", "ssim")}
              for var, rs in by_var.items()}
        for det, by_var in means.items()
    }
    variants = sorted({r["variant"] for r in rows} - {"orig"}, key=VARIANTS.index)
    deltas = {}
    for var in variants:
        deltas[var] = {}
        for metric in ("iou", "mcc", "f1"):
            before = {d: table[d]["orig"][metric] for d in table}
            after = {d: table[d][var][metric] for d in table}
            deltas[var][metric] = delta_report(before, after)
    out = {"means": table, "deltas": deltas, "label_convention": LABEL_NOTE,
           "images": len({r["image_id"] for r in rows})}
    if config is not None:
        out["config"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(config).items()}
    return out


def run_experiment(config):
    """Evaluate the dataset and write report.csv and summary.json under ``config.out``."""
    rows = collect_rows(config)
    out = imageio.ensure_dir(config.out)
    (out / "report.csv").write_text(report_csv(rows))
    summary = summarize(rows, config)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return rows, summary


def sweep_rows(config):
    """One sweep.csv row per (value, detector) for the variant picked by ``guided``."""
    if not config.sweep_values:
        raise ParameterError("a sweep needs at least one value")
    variant = "diff-cfg" if config.guided else "diff-cf"
    if config.sweep_param == "t_star":
        bad = [v for v in config.sweep_values if int(v) != v]
        if bad:
            raise ParameterError(f"t_star values must be integers, got {bad}")
    baseline = None
    out = []
    for value in config.sweep_values:
        v = int(value) if config.sweep_param == "t_star" else float(value)
        cfg = replace(config, **{config.sweep_param: v})
        variants = (variant,) if baseline is not None else ("orig", variant)
        rows = collect_rows(cfg, variants)
        if baseline is None:
            baseline = [r for r in rows if r["variant"] == "orig"]
        summary = summarize(baseline + [r for r in rows if r["variant"] == variant])
        for det in config.detectors:
            m = summary["means"][det]
            out.append({
                "param": config.sweep_param, "value": v, "detector": det,
                "delta_mcc": m[variant]["mcc"] - m["orig"]["mcc"],
                "delta_iou": m[variant]["iou"] - m["orig"]["iou"],
                "psnr": m[variant]["psnr"], "ssim": m[variant]["ssim"],
            })
    return out


def sweep_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def run_sweep(config):
    rows = sweep_rows(config)
    out = imageio.ensure_dir(config.out)
    (out / "sweep.csv").write_text(sweep_csv(rows))
    return rows
