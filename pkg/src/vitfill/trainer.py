"""Optional ViT pretraining, prefill + generator training, evaluation, ablation.

Every random draw comes from ``numpy.random.default_rng`` seeded with a tuple
``(seed, tag, ...)``, so masks, batch order and initial weights are a pure
function of the config. A zero-fill run and a prefill run with the same seed
therefore see identical masks, batches and generator initialisation.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .composer import compose_for_training, finalize, predict_for_training, prefill
from .config import TrainConfig
from .generator import g_forward, init_generator, reconstruction_loss
from .imageio import Corpus
from .masking import apply_mask, sample_mask
from .metrics import MetricsReport, psnr, psnr_masked, ssim
from .optim import Adam
from .patching import PatchScheme
from .vit import ViTConfig, init_vit, trainable, vit_forward

log = logging.getLogger(__name__)

TAG_ORDER, TAG_MASK = 11, 12
TAG_PRE_ORDER, TAG_PRE_MASK = 21, 22
TAG_EVAL_MASK = 31
TAG_VIT_INIT, TAG_GEN_INIT = 41, 42

ABLATION_GRID = ("none", "square:16", "column:1", "column:2", "column:4", "row:1", "row:2", "row:4")


class TrainingDiverged(RuntimeError):
    def __init__(self, phase: str, epoch: int, step: int):
        super().__init__(f"non-finite loss during {phase} at epoch {epoch}, step {step}")
        self.phase, self.epoch, self.step = phase, epoch, step


@dataclass
class Dataset:
    """Decoded ``N x C x H x W`` splits keyed by name."""

    ids: dict[str, list[str]] = field(default_factory=dict)
    images: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_corpus(cls, corpus: Corpus, channels: int = 3) -> "Dataset":
        ds = cls()
        for name in ("train", "val", "test"):
            ds.ids[name], ds.images[name] = corpus.load(name, channels)
        return ds

    @classmethod
    def from_arrays(cls, **splits: np.ndarray) -> "Dataset":
        ds = cls()
        for name, arr in splits.items():
            ds.images[name] = np.asarray(arr, dtype=np.float32)
            ds.ids[name] = [f"{name}{i:04d}" for i in range(len(arr))]
        return ds

    @property
    def image_shape(self) -> tuple[int, int, int]:
        for arr in self.images.values():
            if len(arr):
                return tuple(arr.shape[1:])
        raise ValueError("dataset is empty")


# ---------------------------------------------------------------- seeding


def image_key(image_id: str) -> int:
    return zlib.crc32(image_id.encode("utf-8"))


def eval_masks(ids: list[str], h: int, w: int, config: TrainConfig) -> np.ndarray:
    """Fixed per-(seed, image id) masks used for validation and evaluation."""
    out = np.zeros((len(ids), h, w), dtype=np.float32)
    for i, image_id in enumerate(ids):
        out[i] = sample_mask([config.seed, TAG_EVAL_MASK, image_key(image_id)], h, w, config.mask)
    return out


def _epoch_plan(n: int, epoch: int, config: TrainConfig, tags: tuple[int, int]):
    order_tag, mask_tag = tags
    order = np.random.default_rng([config.seed, order_tag, epoch]).permutation(n)
    for start in range(0, n, config.batch):
        yield order[start : start + config.batch], mask_tag


def _train_masks(idx, epoch, mask_tag, h, w, config) -> np.ndarray:
    return np.stack([sample_mask([config.seed, mask_tag, epoch, int(i)], h, w, config.mask) for i in idx])


def _frozen(params: dict[str, T.Tensor] | None):
    if params is None:
        return None
    return {k: T.Tensor(v.data) for k, v in params.items()}


def _snapshot(params: dict[str, T.Tensor] | None):
    return None if params is None else {k: v.data.copy() for k, v in params.items()}


def _restore(params, snap) -> None:
    if params is None:
        return
    for k, v in params.items():
        v.data = snap[k].copy()


# ---------------------------------------------------------------- inference


def infer(images, masks, vit_params, vit_cfg: ViTConfig | None, gen_params, composition="residual", batch=32):
    """Run the full pipeline without recording gradients.

    Returns a dict of ``x`` (zero-filled), ``x_vit`` (raw fill, zeros without a
    ViT), ``x_r``, ``residual`` and ``y_hat`` arrays.
    """
    vit_p, gen_p = _frozen(vit_params), _frozen(gen_params)
    keys = ("x", "x_vit", "x_r", "residual", "y_hat")
    out = {k: np.zeros_like(images) for k in keys}
    for s in range(0, len(images), batch):
        y, m = images[s : s + batch], masks[s : s + batch]
        x = apply_mask(y, m)
        x_vit = vit_forward(x, vit_p, vit_cfg)[0].data if vit_p is not None else np.zeros_like(y)
        composed = prefill(x_vit, y, m)
        res = g_forward(composed.x_r, m, gen_p).data if gen_p is not None else np.zeros_like(y)
        pred = finalize(x_vit, y, m, res, composition)
        for k, v in zip(keys, (x, x_vit, composed.x_r, res, pred.y_hat)):
            out[k][s : s + batch] = v
    return out


def _mean_masked_psnr(y, y_hat, masks) -> float:
    vals = [psnr_masked(a, b, m) for a, b, m in zip(y_hat, y, masks)]
    finite = [v for v in vals if math.isfinite(v)]
    return float(np.mean(finite)) if finite else math.inf


# ---------------------------------------------------------------- pretraining


def pretrain_vit(data: Dataset, config: TrainConfig):
    """Train the ViT alone to reconstruct masked pixels; return best-validation params."""
    vit_cfg = config.effective_vit
    if vit_cfg is None:
        raise ValueError("pretrain_vit requires vit_mode other than 'none'")
    train_imgs = data.images.get("train")
    if train_imgs is None or len(train_imgs) == 0:
        raise ValueError("pretrain_vit: empty train split")
    shape = data.image_shape
    c, h, w = shape
    vit_cfg.scheme.check(h, w)
    params = init_vit(vit_cfg, shape, seed=[config.seed, TAG_VIT_INIT])
    opt = Adam(trainable(params), lr=config.lr, weight_decay=config.weight_decay)
    val_imgs = data.images.get("val")
    val_masks = eval_masks(data.ids["val"], h, w, config) if val_imgs is not None and len(val_imgs) else None

    history, best, best_score, stale = [], _snapshot(params), -math.inf, 0
    for epoch in range(config.pretrain_epochs):
        losses = []
        for step, (idx, tag) in enumerate(_epoch_plan(len(train_imgs), epoch, config, (TAG_PRE_ORDER, TAG_PRE_MASK))):
            y = train_imgs[idx]
            m = _train_masks(idx, epoch, tag, h, w, config)
            x_vit, _ = vit_forward(apply_mask(y, m), params, vit_cfg)
            loss = reconstruction_loss(x_vit, y, m, config.lambda_known)
            if not np.isfinite(loss.data):
                raise TrainingDiverged("pretrain", epoch, step)
            opt.step(T.backward(loss))
            losses.append(float(loss.data))
        score = None
        if val_masks is not None:
            out = infer(val_imgs, val_masks, params, vit_cfg, None)
            score = _mean_masked_psnr(val_imgs, out["x_r"], val_masks)
        history.append({"phase": "pretrain", "epoch": epoch, "train_loss": float(np.mean(losses)),
                        "val_psnr_masked": score, "lr": opt.lr})
        log.info("pretrain epoch %d loss %.6f val %s", epoch, history[-1]["train_loss"], score)
        if val_masks is None or score > best_score:
            best, best_score, stale = _snapshot(params), score, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    _restore(params, best)
    return params, history


# ---------------------------------------------------------------- main loop


def build_models(config: TrainConfig, shape):
    vit_cfg = config.effective_vit
    vit = None if vit_cfg is None else init_vit(vit_cfg, shape, seed=[config.seed, TAG_VIT_INIT])
    gen = init_generator(shape[0], seed=[config.seed, TAG_GEN_INIT], widths=config.gen_widths)
    return vit_cfg, vit, gen


def train_step(y, m, vit, vit_cfg, vit_trainable: bool, gen, config: TrainConfig) -> T.Tensor:
    """Loss for one batch; ViT weights are detached unless ``vit_trainable``."""
    x = apply_mask(y, m)
    if vit is None:
        x_vit, x_r = None, T.Tensor(x)
    else:
        x_vit, _ = vit_forward(x, vit if vit_trainable else _frozen(vit), vit_cfg)
        x_r = compose_for_training(x_vit, y, m)
    residual = g_forward(x_r, m, gen)
    y_hat = predict_for_training(x_vit, y, m, residual, config.composition)
    return reconstruction_loss(y_hat, y, m, config.lambda_known)


def train(data, config: TrainConfig) -> tuple[Checkpoint, list[dict]]:
    """Train prefill + generator; return the best-validation checkpoint and history."""
    if isinstance(data, Corpus):
        data = Dataset.from_corpus(data, config.channels)
    train_imgs = data.images.get("train")
    if train_imgs is None or len(train_imgs) == 0:
        raise ValueError("train: empty train split")
    if config.batch > len(train_imgs):
        raise ValueError(f"batch {config.batch} exceeds train split size {len(train_imgs)}")
    shape = data.image_shape
    c, h, w = shape
    config.mask.validate(h, w)

    vit_cfg, vit, gen = build_models(config, shape)
    history: list[dict] = []
    vit_trainable = vit is not None
    if vit is not None:
        vit_cfg.scheme.check(h, w)
        if config.pretrain_epochs > 0:
            vit, history = pretrain_vit(data, config)
            vit_trainable = config.finetune_vit

    params = list(gen.values()) + (trainable(vit) if vit_trainable else [])
    opt = Adam(params, lr=config.lr, weight_decay=config.weight_decay)
    val_imgs = data.images.get("val")
    has_val = val_imgs is not None and len(val_imgs) > 0
    val_masks = eval_masks(data.ids["val"], h, w, config) if has_val else None

    def state():
        return (_snapshot(vit), _snapshot(gen), [m.copy() for m in opt.state.m], [v.copy() for v in opt.state.v],
                opt.state.step)

    best, best_epoch, best_score = state(), -1, -math.inf
    stale = lr_stale = 0
    for epoch in range(config.max_epochs):
        losses = []
        for step, (idx, tag) in enumerate(_epoch_plan(len(train_imgs), epoch, config, (TAG_ORDER, TAG_MASK))):
            y = train_imgs[idx]
            m = _train_masks(idx, epoch, tag, h, w, config)
            loss = train_step(y, m, vit, vit_cfg, vit_trainable, gen, config)
            if not np.isfinite(loss.data):
                raise TrainingDiverged("train", epoch, step)
            opt.step(T.backward(loss))
            losses.append(float(loss.data))
        score = None
        if has_val:
            out = infer(val_imgs, val_masks, vit, vit_cfg, gen, config.composition)
            score = _mean_masked_psnr(val_imgs, out["y_hat"], val_masks)
        history.append({"phase": "train", "epoch": epoch, "train_loss": float(np.mean(losses)),
                        "val_psnr_masked": score, "lr": opt.lr})
        log.info("epoch %d loss %.6f val %s lr %g", epoch, history[-1]["train_loss"], score, opt.lr)
        if not has_val or score > best_score:
            best, best_epoch, best_score = state(), epoch, score
            stale = lr_stale = 0
            continue
        stale += 1
        lr_stale += 1
        if stale >= config.patience:
            break
        if lr_stale >= config.lr_patience:
            opt.lr *= 0.5
            lr_stale = 0

    vit_snap, gen_snap, ms, vs, step = best
    _restore(vit, vit_snap)
    _restore(gen, gen_snap)
    tensors = {}
    if vit is not None:
        tensors.update({f"vit.{k}": v.data for k, v in vit.items()})
    tensors.update({f"gen.{k}": v.data for k, v in gen.items()})
    for p, mm, vv in zip(params, ms, vs):
        owner = "gen" if any(p is q for q in gen.values()) else "vit"
        tensors[f"adam.m.{owner}.{p.name}"] = mm
        tensors[f"adam.v.{owner}.{p.name}"] = vv
    ckpt = Checkpoint(config, shape, tensors, epoch=best_epoch, adam_step=step, history=history)
    return ckpt, history


def models_from_checkpoint(ckpt: Checkpoint):
    vit_cfg = ckpt.config.effective_vit
    vit = None
    if vit_cfg is not None:
        vit = {k: T.Tensor(v.copy()) for k, v in ckpt.group("vit.").items()}
    gen = {k: T.Tensor(v.copy()) for k, v in ckpt.group("gen.").items()}
    return vit_cfg, vit, gen


def evaluate(ids: list[str], images: np.ndarray, ckpt: Checkpoint) -> MetricsReport:
    """Full-image PSNR/SSIM and hole PSNR with deterministic per-image masks."""
    if len(images) == 0:
        raise ValueError("evaluate: empty split")
    if tuple(images.shape[1:]) != tuple(ckpt.image_shape):
        raise ValueError(f"evaluate: images {images.shape[1:]} vs checkpoint {ckpt.image_shape}")
    _, h, w = ckpt.image_shape
    masks = eval_masks(ids, h, w, ckpt.config)
    vit_cfg, vit, gen = models_from_checkpoint(ckpt)
    out = infer(images, masks, vit, vit_cfg, gen, ckpt.config.composition)
    report = MetricsReport(fingerprint=ckpt.config.fingerprint())
    for i, image_id in enumerate(ids):
        y, yh, m = images[i], out["y_hat"][i], masks[i]
        report.add(image_id, psnr(yh, y), psnr_masked(yh, y, m), ssim(yh, y))
    return report


# ---------------------------------------------------------------- ablation


def ablation_configs(base: TrainConfig) -> list[tuple[str, str, TrainConfig]]:
    """The eight scheme cells: zero-fill baseline plus seven tokenisations."""
    cells = []
    for cell in ABLATION_GRID:
        if cell == "none":
            cells.append(("G (zero-fill)", cell, base.replace(vit_mode="none")))
            continue
        scheme = PatchScheme.parse(cell)
        mode = "fixed_16" if base.vit_mode == "fixed_16" and scheme.kind == "square" else "pretrain_scheme"
        cfg = base.replace(vit_mode=mode, vit=_with_scheme(base.vit, scheme))
        cells.append((f"G-ViT({_label(scheme)})", cell, cfg))
    return cells


def _with_scheme(vit: ViTConfig, scheme: PatchScheme) -> ViTConfig:
    return dataclasses.replace(vit, scheme=scheme)


def _label(scheme: PatchScheme) -> str:
    if scheme.kind == "square":
        return f"{scheme.size}x{scheme.size}"
    return f"{scheme.size}-{scheme.kind.capitalize()}"


@dataclass
class AblationRow:
    method: str
    scheme: str
    report: MetricsReport
    checkpoint: Checkpoint


def ablate(data: Dataset, base: TrainConfig, split: str = "test") -> list[AblationRow]:
    rows = []
    for method, cell, cfg in ablation_configs(base):
        log.info("ablation cell %s", cell)
        ckpt, _ = train(data, cfg)
        report = evaluate(data.ids[split], data.images[split], ckpt)
        rows.append(AblationRow(method, cell, report, ckpt))
    return rows


def ablation_csv(rows: list[AblationRow], dataset: str) -> str:
    lines = ["method,scheme,dataset,psnr_db,ssim,psnr_masked_db"]
    for r in rows:
        agg = r.report.aggregate()
        lines.append(
            f"{r.method},{r.scheme},{dataset},{agg['mean_psnr_db']:.6f},{agg['mean_ssim']:.6f},"
            f"{agg['mean_psnr_masked_db']:.6f}"
        )
    return "\n".join(lines) + "\n"
