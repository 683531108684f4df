import json
import time
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from vitfill.checkpoint import Checkpoint
from vitfill.cli import main
from vitfill.imageio import load_image
from vitfill.trainer import build_models

from conftest import tiny_config, tiny_dataset

TOY = Path(__file__).resolve().parents[1] / "data" / "toy64"


def _write_pngs(d: Path, n: int, size: int = 16, seed: int = 0):
    d.mkdir(parents=True, exist_ok=True)
    imgs = tiny_dataset(seed=seed, n=(n, 0, 0), size=size).images["train"]
    for i, img in enumerate(imgs):
        Image.fromarray((img.transpose(1, 2, 0) * 255).round().astype(np.uint8)).save(d / f"im{i:03d}.png")
    return d


def _tiny_config_file(path: Path, **overrides) -> Path:
    doc = tiny_config(**overrides).to_dict()
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    imgs = _write_pngs(root / "imgs", 100)
    manifest = root / "manifest.json"
    assert main(["ingest", str(imgs), "--out", str(manifest), "--size", "16", "--seed", "3"]) == 0
    cfg = _tiny_config_file(root / "cfg.json", max_epochs=2, pretrain_epochs=1)
    return root, manifest, cfg


def test_ingest_deterministic_manifest(corpus, tmp_path):
    root, manifest, _ = corpus
    again = tmp_path / "m.json"
    assert main(["ingest", str(root / "imgs"), "--out", str(again), "--size", "16", "--seed", "3"]) == 0
    assert again.read_bytes() == manifest.read_bytes()
    doc = json.loads(manifest.read_text())
    assert sorted(doc) == ["items", "seed", "target"]
    assert [sum(it["split"] == s for it in doc["items"]) for s in ("train", "val", "test")] == [80, 10, 10]


def test_ingest_errors(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["ingest", str(tmp_path / "empty"), "--out", str(tmp_path / "m.json")]) == 4
    assert main(["ingest", str(tmp_path / "missing"), "--out", str(tmp_path / "m.json")]) == 3
    assert main(["ingest", str(tmp_path), "--out", "x", "--size", "abc"]) == 2


@pytest.mark.parametrize("command", ["ingest", "mask", "prefill", "train", "eval", "ablate", "report"])
def test_help_and_unknown_flags(command, capsys):
    assert main([command, "--help"]) == 0
    assert "usage" in capsys.readouterr().out
    assert main([command, "--no-such-flag"]) == 2


def test_unknown_config_key_rejected(corpus, tmp_path):
    _, manifest, _ = corpus
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"lr": 1e-3, "learning_rate": 1}))
    assert main(["train", "--config", str(bad), "--manifest", str(manifest), "--out", str(tmp_path / "r")]) == 4
    assert not (tmp_path / "r").exists()
    bad.write_text(json.dumps({"vit": {"scheme": "diag:2"}}))
    assert main(["train", "--config", str(bad), "--manifest", str(manifest), "--out", str(tmp_path / "r")]) == 4
    assert main(["train", "--config", str(tmp_path / "nope.json"), "--manifest", str(manifest),
                 "--out", str(tmp_path / "r")]) == 3


@pytest.fixture(scope="module")
def trained_run(corpus):
    root, manifest, cfg = corpus
    run = root / "run"
    assert main(["train", "--config", str(cfg), "--manifest", str(manifest), "--out", str(run)]) == 0
    return run


def test_train_run_directory(trained_run, corpus):
    _, _, cfg = corpus
    files = {p.name for p in trained_run.iterdir()}
    assert {"config.json", "checkpoint.vmf", "train_log.jsonl", "val_metrics.csv"} <= files
    echoed = json.loads((trained_run / "config.json").read_text())
    assert echoed == json.loads(cfg.read_text())
    log = [json.loads(line) for line in (trained_run / "train_log.jsonl").read_text().splitlines()]
    assert [r["phase"] for r in log] == ["pretrain", "train", "train"]
    assert Checkpoint.load(trained_run / "checkpoint.vmf").config.max_epochs == 2


def test_train_rerun_byte_identical(trained_run, corpus, tmp_path):
    _, manifest, cfg = corpus
    assert main(["train", "--config", str(cfg), "--manifest", str(manifest), "--out", str(tmp_path)]) == 0
    for name in ("checkpoint.vmf", "train_log.jsonl", "val_metrics.csv", "config.json"):
        assert (tmp_path / name).read_bytes() == (trained_run / name).read_bytes(), name


def test_eval_rows(trained_run, corpus, tmp_path):
    _, manifest, _ = corpus
    args = ["eval", "--checkpoint", str(trained_run / "checkpoint.vmf"), "--manifest", str(manifest)]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    text = (tmp_path / "a" / "metrics.csv").read_text()
    rows = [ln for ln in text.splitlines()[1:] if not ln.startswith("#")]
    assert len(rows) == 10
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    missing = ["eval", "--checkpoint", str(tmp_path / "missing.vmf"), "--manifest", str(manifest)]
    assert main(missing + ["--out", str(tmp_path / "c")]) == 3


def _zero_checkpoint(path: Path, **overrides):
    cfg = tiny_config(**overrides)
    _, vit, gen = build_models(cfg, (3, 16, 16))
    tensors = {f"vit.{k}": np.zeros_like(v.data) for k, v in (vit or {}).items()}
    tensors.update({f"gen.{k}": np.zeros_like(v.data) for k, v in gen.items()})
    Checkpoint(cfg, (3, 16, 16), tensors).save(path)
    return path


def test_prefill_zero_checkpoint(tmp_path):
    img_dir = _write_pngs(tmp_path / "imgs", 1)
    image = img_dir / "im000.png"
    ckpt = _zero_checkpoint(tmp_path / "zero.vmf")
    out = tmp_path / "out"
    assert main(["prefill", "--image", str(image), "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    assert {"X.png", "mask.png", "xr.png", "yhat.png"} <= {p.name for p in out.iterdir()}
    src = np.asarray(Image.open(image))
    m = np.asarray(Image.open(out / "mask.png")) > 127
    assert m.any() and not m.all()
    for name in ("X.png", "xr.png", "yhat.png"):
        got = np.asarray(Image.open(out / name))
        assert np.array_equal(got[~m], src[~m]), name
    assert np.all(np.asarray(Image.open(out / "X.png"))[m] == 0)
    again = tmp_path / "again"
    assert main(["prefill", "--image", str(image), "--checkpoint", str(ckpt), "--out", str(again)]) == 0
    for name in ("X.png", "mask.png", "xr.png", "yhat.png"):
        assert (again / name).read_bytes() == (out / name).read_bytes()


def test_prefill_dimension_mismatch(tmp_path):
    img_dir = _write_pngs(tmp_path / "imgs", 1, size=32)
    ckpt = _zero_checkpoint(tmp_path / "zero.vmf")
    code = main(["prefill", "--image", str(img_dir / "im000.png"), "--checkpoint", str(ckpt),
                 "--out", str(tmp_path / "o")])
    assert code == 4
    assert main(["prefill", "--image", str(tmp_path / "none.png"), "--checkpoint", str(ckpt),
                 "--out", str(tmp_path / "o")]) == 3


def test_mask_command(tmp_path):
    cfg = _tiny_config_file(tmp_path / "c.json")
    assert main(["mask", "--config", str(cfg), "--id", "im000", "--size", "16x16", "--out", str(tmp_path / "m.png")]) == 0
    m = load_image(tmp_path / "m.png")
    assert m.shape == (1, 16, 16) and set(np.unique(m)) == {0.0, 1.0}


def test_report_attention_and_markdown(trained_run, corpus, tmp_path):
    root, _, _ = corpus
    out = tmp_path / "rep"
    args = ["report", "--checkpoint", str(trained_run / "checkpoint.vmf"), "--image", str(root / "imgs" / "im000.png"),
            "--csv", str(trained_run / "val_metrics.csv"), "--out", str(out)]
    assert main(args) == 0
    heads = sorted(p.name for p in out.glob("attention_*.png"))
    assert heads == ["attention_l0_h0.png", "attention_l0_h1.png"]
    n = 8  # column:2 on 16 px
    assert np.asarray(Image.open(out / heads[0])).shape == (n, n)
    md = (out / "report.md").read_text()
    assert "| run | images | PSNR | SSIM | hole PSNR |" in md
    assert main(["report", "--out", str(out)]) == 2


def test_ablate_grid(corpus, tmp_path):
    _, manifest, _ = corpus
    cfg = _tiny_config_file(tmp_path / "c.json", max_epochs=1, pretrain_epochs=1)
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(cfg), "--manifest", str(manifest), "--out", str(out),
                 "--dataset", "tiny"]) == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0] == "method,scheme,dataset,psnr_db,ssim,psnr_masked_db"
    assert len(lines) == 9
    assert len(list((out / "cells").iterdir())) == 8
    assert main(["report", "--csv", str(out / "ablation.csv"), "--out", str(out / "rep")]) == 0
    assert (out / "rep" / "report.md").read_text().count("\n| G") == 8


def test_train_one_epoch_on_toy_corpus(tmp_path):
    manifest = tmp_path / "toy.json"
    assert main(["ingest", str(TOY), "--out", str(manifest), "--size", "64", "--seed", "0"]) == 0
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"max_epochs": 1, "pretrain_epochs": 1}))
    start = time.perf_counter()
    assert main(["train", "--config", str(cfg), "--manifest", str(manifest), "--out", str(tmp_path / "r")]) == 0
    assert time.perf_counter() - start < 300
