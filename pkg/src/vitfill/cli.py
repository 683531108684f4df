"""Command line front end.

Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 validation failure.
Every command that produces results writes them under one output directory
together with ``config.json``, the fully resolved configuration it ran with.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, CheckpointError
from .config import ConfigError, TrainConfig, load_config
from .imageio import Corpus, CorpusError, ImageError, ImageNotFoundError, ingest_corpus, load_image, save_image
from .masking import mask_to_png_bytes, sample_mask
from .metrics import read_csv
from .patching import PatchError
from .tensor import ContractError, DimensionError
from .trainer import (
    TAG_EVAL_MASK,
    Dataset,
    TrainingDiverged,
    ablate,
    ablation_csv,
    evaluate,
    image_key,
    infer,
    models_from_checkpoint,
    train,
)
from .vit import vit_forward

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_INVALID = 0, 2, 3, 4

log = logging.getLogger("vitfill")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- helpers


def _config(path) -> TrainConfig:
    if path is None:
        return TrainConfig()
    if not Path(path).is_file():
        raise CliError(EXIT_IO, f"config not found: {path}")
    return load_config(path)


def _manifest(path) -> Corpus:
    if not Path(path).is_file():
        raise CliError(EXIT_IO, f"manifest not found: {path}")
    try:
        return Corpus.load_manifest(path)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CliError(EXIT_INVALID, f"{path}: malformed manifest ({exc})") from exc


def _checkpoint(path) -> Checkpoint:
    if not Path(path).is_file():
        raise CliError(EXIT_IO, f"checkpoint not found: {path}")
    return Checkpoint.load(path)


def _run_dir(path, config: TrainConfig) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json(), encoding="utf-8")
    return out


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, allow_nan=False) + "\n")


def _dataset(corpus: Corpus, config: TrainConfig) -> Dataset:
    ds = Dataset.from_corpus(corpus, config.channels)
    if not len(ds.images["train"]):
        raise CliError(EXIT_INVALID, "manifest has an empty train split")
    return ds


def _markdown(csv_path: Path) -> str:
    """Render a metrics or ablation CSV as a markdown table."""
    lines = [ln for ln in csv_path.read_text(encoding="utf-8").splitlines() if ln and not ln.startswith("#")]
    if not lines:
        raise CliError(EXIT_INVALID, f"{csv_path}: empty CSV")
    header = lines[0].split(",")
    if header[0] == "id":
        rep = read_csv(csv_path)
        agg = rep.aggregate()
        body = [f"| {csv_path.stem} | {len(rep)} | {agg['mean_psnr_db']:.2f} | {agg['mean_ssim']:.4f} | "
                f"{agg['mean_psnr_masked_db']:.2f} |"]
        header = ["run", "images", "PSNR", "SSIM", "hole PSNR"]
    else:
        body = []
        for ln in lines[1:]:
            cells = ln.split(",")
            body.append("| " + " | ".join(_cell(c) for c in cells) + " |")
    head = "| " + " | ".join(header) + " |"
    rule = "|" + "|".join("---" for _ in header) + "|"
    return "\n".join([f"### {csv_path.name}", "", head, rule, *body, ""])


def _cell(text: str) -> str:
    try:
        v = float(text)
    except ValueError:
        return text
    if not math.isfinite(v):
        return text
    return f"{v:.4f}" if abs(v) <= 1 else f"{v:.2f}"


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    if not Path(args.dir).is_dir():
        raise CliError(EXIT_IO, f"not a directory: {args.dir}")
    corpus = ingest_corpus(args.dir, (args.size, args.size), seed=args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    corpus.save(args.out)
    counts = {s: len(corpus.split(s)) for s in ("train", "val", "test")}
    print(f"{args.out}: {counts['train']} train, {counts['val']} val, {counts['test']} test")
    return EXIT_OK


def cmd_mask(args) -> int:
    config = _config(args.config)
    h, w = args.size
    m = sample_mask([config.seed, TAG_EVAL_MASK, image_key(args.id)], h, w, config.mask)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_image(mask_to_png_bytes(m)[None] / 255.0, args.out)
    return EXIT_OK


def cmd_prefill(args) -> int:
    ckpt = _checkpoint(args.checkpoint)
    config = _config(args.config) if args.config else ckpt.config
    image = load_image(args.image)
    c = ckpt.image_shape[0]
    if image.shape[0] != c:
        image = np.repeat(image, 3, axis=0) if c == 3 else image[:1]
    if tuple(image.shape) != tuple(ckpt.image_shape):
        raise CliError(EXIT_INVALID, f"image {tuple(image.shape)} does not match checkpoint {ckpt.image_shape}")
    _, h, w = image.shape
    vit_cfg, vit, gen = models_from_checkpoint(ckpt)
    if vit_cfg is not None:
        vit_cfg.scheme.check(h, w)
    m = sample_mask([config.seed, TAG_EVAL_MASK, image_key(Path(args.image).stem)], h, w, config.mask)
    out = infer(image[None], m[None], vit, vit_cfg, gen, ckpt.config.composition)
    run = _run_dir(args.out, config)
    save_image(out["x"][0], run / "X.png")
    save_image(mask_to_png_bytes(m)[None] / 255.0, run / "mask.png")
    save_image(out["x_r"][0], run / "xr.png")
    save_image(out["y_hat"][0], run / "yhat.png")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config(args.config)
    if args.epochs is not None:
        config = config.replace(max_epochs=args.epochs)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    corpus = _manifest(args.manifest)
    data = _dataset(corpus, config)
    run = _run_dir(args.out, config)
    ckpt, history = train(data, config)
    ckpt.save(run / "checkpoint.vmf")
    _write_jsonl(run / "train_log.jsonl", history)
    if data.images["val"].shape[0]:
        evaluate(data.ids["val"], data.images["val"], ckpt).write_csv(run / "val_metrics.csv")
    print(f"{run}: best epoch {ckpt.epoch}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = _checkpoint(args.checkpoint)
    corpus = _manifest(args.manifest)
    ids, images = corpus.load(args.split, ckpt.config.channels)
    if not ids:
        raise CliError(EXIT_INVALID, f"split {args.split!r} is empty")
    run = _run_dir(args.out, ckpt.config)
    report = evaluate(ids, images, ckpt)
    report.write_csv(run / "metrics.csv")
    agg = report.aggregate()
    print(f"{len(report)} images: PSNR {agg['mean_psnr_db']:.3f} dB, SSIM {agg['mean_ssim']:.4f}, "
          f"hole PSNR {agg['mean_psnr_masked_db']:.3f} dB")
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = _config(args.config)
    if args.epochs is not None:
        config = config.replace(max_epochs=args.epochs)
    corpus = _manifest(args.manifest)
    data = _dataset(corpus, config)
    if not len(data.ids[args.split]):
        raise CliError(EXIT_INVALID, f"split {args.split!r} is empty")
    run = _run_dir(args.out, config)
    rows = ablate(data, config, split=args.split)
    for row in rows:
        cell = run / "cells" / row.scheme.replace(":", "_")
        cell.mkdir(parents=True, exist_ok=True)
        (cell / "config.json").write_text(row.checkpoint.config.to_json(), encoding="utf-8")
        row.checkpoint.save(cell / "checkpoint.vmf")
        row.report.write_csv(cell / "metrics.csv")
        _write_jsonl(cell / "train_log.jsonl", row.checkpoint.history)
    with open(run / "ablation.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(ablation_csv(rows, args.dataset))
    print(f"{run / 'ablation.csv'}: {len(rows)} cells")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.csv and not args.checkpoint:
        raise CliError(EXIT_ARGS, "report needs --csv and/or --checkpoint with --image")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.checkpoint:
        if not args.image:
            raise CliError(EXIT_ARGS, "--checkpoint requires --image")
        ckpt = _checkpoint(args.checkpoint)
        vit_cfg, vit, _ = models_from_checkpoint(ckpt)
        if vit is None:
            raise CliError(EXIT_INVALID, "checkpoint has no ViT (vit_mode none)")
        image = load_image(args.image)
        if image.shape[0] != ckpt.image_shape[0]:
            image = np.repeat(image, 3, axis=0) if ckpt.image_shape[0] == 3 else image[:1]
        if tuple(image.shape) != tuple(ckpt.image_shape):
            raise CliError(EXIT_INVALID, f"image {tuple(image.shape)} does not match checkpoint {ckpt.image_shape}")
        _, maps = vit_forward(image, vit, vit_cfg)
        for layer, att in enumerate(maps):
            for head, a in enumerate(att):
                scale = a.max() if a.max() > 0 else 1.0
                save_image((a / scale)[None], out / f"attention_l{layer}_h{head}.png")
    if args.csv:
        parts = []
        for p in args.csv:
            if not Path(p).is_file():
                raise CliError(EXIT_IO, f"CSV not found: {p}")
            parts.append(_markdown(Path(p)))
        (out / "report.md").write_text("\n".join(parts), encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _hw(text: str) -> tuple[int, int]:
    try:
        parts = [int(v) for v in text.lower().split("x")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or min(parts) <= 0:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    return parts[0], parts[1]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vitfill", description="ViT self-attention prefill for image inpainting.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="scan a PNG directory into a split manifest")
    s.add_argument("dir")
    s.add_argument("--out", required=True, help="manifest JSON path")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("mask", help="write the evaluation mask for one image id")
    s.add_argument("--config")
    s.add_argument("--id", required=True)
    s.add_argument("--size", type=_hw, default=(64, 64), help="HxW")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("prefill", help="write X, mask, X_R and Y_hat PNGs for one image")
    s.add_argument("--config", help="mask settings; defaults to the checkpoint's config")
    s.add_argument("--image", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prefill)

    s = sub.add_parser("train", help="pretrain the ViT (optional) and train the generator")
    s.add_argument("--config")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="run directory")
    s.add_argument("--epochs", type=int, help="override max_epochs")
    s.add_argument("--seed", type=int, help="override seed")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="PSNR/SSIM report for one split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--out", required=True, help="run directory")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="train and evaluate the eight scheme cells")
    s.add_argument("--config")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="run directory")
    s.add_argument("--split", default="test", choices=("val", "test"))
    s.add_argument("--dataset", default="toy64", help="dataset label for the CSV")
    s.add_argument("--epochs", type=int, help="override max_epochs")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("report", help="attention heatmaps and markdown tables")
    s.add_argument("--checkpoint")
    s.add_argument("--image")
    s.add_argument("--csv", nargs="*", default=[])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"vitfill {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (ImageNotFoundError, FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"vitfill {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, CorpusError, CheckpointError, PatchError, DimensionError, ContractError, ImageError,
            TrainingDiverged, ValueError) as exc:
        print(f"vitfill {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"vitfill {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
