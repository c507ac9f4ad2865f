import csv
import json

import numpy as np
import pytest

from purilab.cli import main
from purilab.denoiser import ConvNet, save_model
from purilab.experiment import (REPORT_COLUMNS, ExperimentConfig, ExperimentError, collect_rows,
                                run_experiment, run_sweep, write_dataset)
from purilab.forgerylab import Recipe
from purilab import imageio


@pytest.fixture(scope="module")
def lab(tmp_path_factory, schedule):
    root = tmp_path_factory.mktemp("lab")
    write_dataset(root / "data", 3, Recipe(count=2, size=96, region=32))
    net = ConvNet.init(np.random.default_rng(0), channels=3, width=4, depth=2, T=1000, dtype=np.float32)
    save_model(net, root / "tiny.cfdn", schedule)
    return root


def config(lab, out, **kw):
    base = dict(dataset=str(lab / "data"), model=str(lab / "tiny.cfdn"), out=str(out), t_star=3, patch=64)
    base.update(kw)
    return ExperimentConfig(**base)


def read_rows(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_manifest(lab):
    manifest = json.loads((lab / "data" / "manifest.json").read_text())
    assert len(manifest["images"]) == 2 and manifest["seed"] == 3
    for name in ("000_clean.png", "000_forged.png", "000_mask.png", "001_mask.png"):
        assert (lab / "data" / name).is_file()
    mask = imageio.read_mask(lab / "data" / "001_mask.png")
    assert mask.sum() == 32 * 32


def test_zero_t_star_changes_nothing(lab, tmp_path):
    rows, summary = run_experiment(config(lab, tmp_path, t_star=0))
    for metric in ("iou", "mcc", "f1"):
        d = summary["deltas"]["diff-cf"][metric]
        assert all(v == 0 for v in d["deltas"].values()) and d["avg_w"] == 0
    cf = [r for r in rows if r["variant"] == "diff-cf"]
    assert all(r["psnr"] == 80.0 and r["ssim"] == pytest.approx(1.0) for r in cf)


def test_report_layout_and_jobs_independence(lab, tmp_path):
    cfg = config(lab, tmp_path / "a", guided=True, scale=100.0)
    run_experiment(cfg)
    rows = read_rows(tmp_path / "a" / "report.csv")
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert len(rows) == 2 * 3 * 4
    assert {r["variant"] for r in rows} == {"orig", "diff-cf", "diff-cfg", "median"}
    run_experiment(config(lab, tmp_path / "b", guided=True, scale=100.0, jobs=2))
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert "label_convention" in summary and summary["images"] == 2


def test_single_value_sweep_matches_experiment(lab, tmp_path):
    rows = run_sweep(config(lab, tmp_path, sweep_param="t_star", sweep_values=(3,)))
    _, summary = run_experiment(config(lab, tmp_path / "e"))
    for r in rows:
        m = summary["means"][r["detector"]]
        assert r["delta_mcc"] == pytest.approx(m["diff-cf"]["mcc"] - m["orig"]["mcc"], abs=1e-15)
        assert r["psnr"] == pytest.approx(m["diff-cf"]["psnr"], abs=1e-12)
    text = (tmp_path / "sweep.csv").read_text().splitlines()
    assert text[0] == "param,value,detector,delta_mcc,delta_iou,psnr,ssim"
    assert len(text) == 1 + 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_failures_name_image_and_stage(lab, tmp_path, schedule):
    net = ConvNet.init(np.random.default_rng(0), channels=3, width=4, depth=2, T=1000, dtype=np.float32)
    huge = ConvNet([w * 1e30 for w in net.weights], net.biases, 1000)
    save_model(huge, tmp_path / "bad.cfdn", schedule)
    with pytest.raises(ExperimentError, match=r"image 0, stage purify diff-cf"):
        collect_rows(config(lab, tmp_path, model=str(tmp_path / "bad.cfdn")))
    with pytest.raises(FileNotFoundError):
        collect_rows(config(lab, tmp_path, model=str(tmp_path / "missing.cfdn")))
    with pytest.raises(FileNotFoundError):
        collect_rows(config(lab, tmp_path, dataset=str(tmp_path)))


def test_cli_commands(lab, tmp_path, capsys):
    forged = str(lab / "data" / "000_forged.png")
    assert main(["detect", forged, "--detector", "variance", "--out", str(tmp_path / "h.pfm")]) == 0
    assert imageio.read_pfm(tmp_path / "h.pfm").shape == (96, 96)
    assert main(["detect", forged, "--out", str(tmp_path / "h.png")]) == 0
    assert imageio.read_heat_png16(tmp_path / "h.png").shape == (96, 96)
    out = tmp_path / "p.png"
    args = ["purify", forged, "--model", str(lab / "tiny.cfdn"), "--t-star", "2", "--patch", "64", "--out", str(out)]
    assert main(args) == 0
    assert imageio.read_png(out).shape == (96, 96, 3)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": str(lab / "data"), "model": str(lab / "tiny.cfdn"),
                               "t_star": 0, "detectors": ["grid"], "out": str(tmp_path / "ignored")}))
    assert main(["eval", "--config", str(cfg), "--out", str(tmp_path / "ev")]) == 0
    rows = read_rows(tmp_path / "ev" / "report.csv")
    assert len(rows) == 2 * 1 * 3 and not (tmp_path / "ignored").exists()
    assert main(["eval", "--dataset", str(tmp_path / "nowhere"), "--out", str(tmp_path / "x")]) == 1
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["eval", "--config", str(cfg)]) == 2
    capsys.readouterr()


def test_cli_gen(tmp_path):
    assert main(["gen", "--count", "1", "--size", "64", "--region", "16", "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "000_forged.png").is_file()


def test_config_validation(lab):
    with pytest.raises(ValueError):
        ExperimentConfig(detectors=("grid", "noiseprint"))
    with pytest.raises(ValueError):
        ExperimentConfig(sweep_param="kernel")
    with pytest.raises(ValueError):
        ExperimentConfig(sweep_values=(-1,))
