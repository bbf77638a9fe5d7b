"""Three-stream SGD training with online attention-guided augmentation."""
import io
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from . import augment
from ._validation import ConfigError
from .config import TrainConfig
from .data import load_images, load_manifest
from .inference import coarse_predict
from .model import WSDAN, training_loss
from .regularization import FeatureCenters, update_centers

__all__ = [
    "lr_schedule",
    "TrainState",
    "train_step",
    "fit",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "METRICS_HEADER",
]

log = logging.getLogger(__name__)

METRICS_HEADER = "epoch\tlr\ttrain_loss\ttrain_acc\tval_acc"


def lr_schedule(epoch, cfg):
    """Step-wise exponential decay: ``lr_init * lr_decay ** (epoch // every)``."""
    if epoch < 0:
        raise ValueError(f"epoch must be nonnegative, got {epoch}")
    return cfg.lr_init * cfg.lr_decay ** (epoch // cfg.lr_decay_every_epochs)


def derive_seeds(seed):
    """Independent seeds for the data split, the training stream and weight init."""
    split, stream, init = np.random.SeedSequence(seed).generate_state(3)
    return int(split), int(stream), int(init)


class TrainState:
    """Everything a training run mutates: model, centers, optimizer, RNG, epoch."""

    def __init__(self, cfg, model=None):
        cfg.validate()
        self.cfg = cfg
        _, stream_seed, init_seed = derive_seeds(cfg.seed)
        if model is None:
            torch.manual_seed(init_seed)
            model = WSDAN(cfg.num_classes, cfg.num_parts, cfg.num_features, pool=cfg.pool,
                          last_stride=cfg.last_stride)
        self.model = model
        dtype = next(model.parameters()).dtype
        self.centers = FeatureCenters(cfg.num_classes, cfg.num_parts, cfg.num_features,
                                      beta=cfg.beta, per_class=cfg.center_mode == "class",
                                      dtype=dtype)
        self.optimizer = torch.optim.SGD(model.parameters(), lr=lr_schedule(0, cfg),
                                         momentum=cfg.momentum, weight_decay=cfg.weight_decay)
        self.rng = np.random.default_rng(stream_seed)
        self.epoch = 0
        self.best_val_acc = -1.0
        self.history = []

    def set_lr(self, lr):
        for group in self.optimizer.param_groups:
            group["lr"] = lr

    def state_dict(self):
        return {
            "model": self.model.state_dict(),
            "centers": self.centers.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "epoch": self.epoch,
            "best_val_acc": self.best_val_acc,
            "rng": self.rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
            "config": asdict(self.cfg),
        }

    def load_state_dict(self, ckpt):
        self.model.load_state_dict(ckpt["model"])
        self.centers.load_state_dict(ckpt["centers"])
        self.optimizer.load_state_dict(ckpt["optimizer"])
        self.epoch = ckpt["epoch"]
        self.best_val_acc = ckpt["best_val_acc"]
        self.rng.bit_generator.state = ckpt["rng"]
        torch.set_rng_state(ckpt["torch_rng"])

    @classmethod
    def from_checkpoint(cls, ckpt, cfg=None):
        state = cls(cfg or TrainConfig(**ckpt["config"]))
        state.load_state_dict(ckpt)
        return state


def save_checkpoint(path, ckpt):
    buf = io.BytesIO()
    torch.save(ckpt, buf)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    return torch.load(path, map_location="cpu", weights_only=False)


def build_model(ckpt):
    """Rebuild an evaluation-ready model from a checkpoint."""
    cfg = TrainConfig(**ckpt["config"])
    model = WSDAN(cfg.num_classes, cfg.num_parts, cfg.num_features, pool=cfg.pool,
                  last_stride=cfg.last_stride)
    model.load_state_dict(ckpt["model"])
    return model.eval(), cfg


def augment_batch(images, attention, cfg, rng, kind):
    """Build the crop or drop stream for one batch.

    Each image draws its own augmentation map; crop and drop draw
    independently.
    """
    h, w = images.shape[2:]
    out = []
    for img, att in zip(images, attention):
        if cfg.augment == "random":
            if kind == "crop":
                out.append(augment.random_crop_baseline(
                    img, rng, h, w, scale=(cfg.random_crop_min_scale, 1.0)))
            else:
                out.append(augment.random_drop_baseline(img, rng, cfg.random_drop_fraction))
            continue
        _, aug = augment.select_augmentation_map(att, rng, size=(h, w), mode=cfg.select_mode)
        if kind == "crop":
            out.append(augment.attention_crop(img, aug, cfg.theta_c, h, w))
        else:
            out.append(augment.attention_drop(img, aug, cfg.theta_d))
    return torch.stack(out)


def train_step(state, images, labels):
    """One SGD step over the raw, crop and drop streams.

    Returns a dict of Python floats: ``loss``, per-stream cross-entropies,
    ``reg`` and the raw-stream ``acc``.
    """
    cfg, model = state.cfg, state.model
    model.train()
    raw = model(images)
    attention = raw.attention.detach()
    crop_out = model(augment_batch(images, attention, cfg, state.rng, "crop")) if cfg.crop else None
    drop_out = model(augment_batch(images, attention, cfg, state.rng, "drop")) if cfg.drop else None
    loss, parts = training_loss(raw, crop_out, drop_out, labels, state.centers, cfg.lam)
    if not torch.isfinite(loss):
        bad = [k for k, v in parts.items() if not torch.isfinite(v)]
        raise FloatingPointError(f"non-finite training loss; offending terms: {bad or ['total']}")
    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.step()
    update_centers(state.centers, raw.parts.detach(), labels)
    metrics = {k: float(v) for k, v in parts.items()}
    metrics["loss"] = float(loss.detach())
    metrics["acc"] = float((raw.logits.argmax(dim=1) == labels).float().mean())
    return metrics


def evaluate_accuracy(model, images, labels, batch_size=64):
    if len(labels) == 0:
        return float("nan")
    correct = 0
    for i in range(0, len(labels), batch_size):
        probs, _ = coarse_predict(model, images[i:i + batch_size])
        correct += int((probs.argmax(axis=1) == labels[i:i + batch_size].numpy()).sum())
    return correct / len(labels)


def format_metrics(epoch, lr, loss, acc, val_acc):
    return f"{epoch}\t{lr:.8g}\t{loss:.8f}\t{acc:.6f}\t{val_acc:.6f}"


def run_epoch(state, images, labels):
    cfg = state.cfg
    lr = lr_schedule(state.epoch, cfg)
    state.set_lr(lr)
    order = state.rng.permutation(len(labels))
    total_loss, total_correct = 0.0, 0.0
    for i in range(0, len(order), cfg.batch_size):
        idx = torch.from_numpy(order[i:i + cfg.batch_size])
        m = train_step(state, images[idx], labels[idx])
        total_loss += m["loss"] * len(idx)
        total_correct += m["acc"] * len(idx)
    state.epoch += 1
    return lr, total_loss / len(order), total_correct / len(order)


def fit(state, images, labels, val_images=None, val_labels=None, checkpoint_dir=None,
        out=None):
    """Train ``state`` until ``state.cfg.epochs`` epochs are complete.

    Writes ``ckpt_epoch{e}.bin`` after every epoch (and for the initial
    state when starting from epoch 0) plus ``ckpt_best.bin`` by validation
    accuracy, when ``checkpoint_dir`` is given. Metric lines go to ``out``
    and ``checkpoint_dir/metrics.tsv``.
    """
    if len(labels) == 0:
        raise ConfigError("training set is empty")
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    metrics_file = None
    if ckdir is not None:
        ckdir.mkdir(parents=True, exist_ok=True)
        fresh = state.epoch == 0
        metrics_file = open(ckdir / "metrics.tsv", "w" if fresh else "a", encoding="utf-8")
        if fresh:
            metrics_file.write(METRICS_HEADER + "\n")
            save_checkpoint(ckdir / "ckpt_epoch0.bin", state.state_dict())
    if out is not None and state.epoch < state.cfg.epochs:
        print(METRICS_HEADER, file=out, flush=True)
    try:
        while state.epoch < state.cfg.epochs:
            lr, loss, acc = run_epoch(state, images, labels)
            if val_labels is not None and len(val_labels):
                val_acc = evaluate_accuracy(state.model, val_images, val_labels)
            else:
                val_acc = acc
            state.history.append({"epoch": state.epoch, "lr": lr, "train_loss": loss,
                                  "train_acc": acc, "val_acc": val_acc})
            line = format_metrics(state.epoch, lr, loss, acc, val_acc)
            log.debug(line)
            if out is not None:
                print(line, file=out, flush=True)
            if metrics_file is not None:
                metrics_file.write(line + "\n")
                metrics_file.flush()
            improved = val_acc > state.best_val_acc
            if improved:
                state.best_val_acc = val_acc
            if ckdir is not None:
                ckpt = state.state_dict()
                save_checkpoint(ckdir / f"ckpt_epoch{state.epoch}.bin", ckpt)
                if improved:
                    save_checkpoint(ckdir / "ckpt_best.bin", ckpt)
    finally:
        if metrics_file is not None:
            metrics_file.close()
    return state


def split_validation(n, cfg):
    """Deterministic holdout indices drawn with the config seed."""
    split_seed, _, _ = derive_seeds(cfg.seed)
    perm = np.random.default_rng(split_seed).permutation(n)
    n_val = int(math.ceil(cfg.val_fraction * n)) if n > 1 else 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def load_training_data(cfg):
    if not cfg.train_manifest:
        raise ConfigError("train_manifest is not set")
    records = load_manifest(cfg.train_manifest, cfg.num_classes)
    images, labels = load_images(cfg.train_manifest, records, cfg.input_size)
    if cfg.val_manifest:
        val_records = load_manifest(cfg.val_manifest, cfg.num_classes)
        val_images, val_labels = load_images(cfg.val_manifest, val_records, cfg.input_size)
    else:
        tr, va = split_validation(len(labels), cfg)
        tr, va = torch.from_numpy(tr), torch.from_numpy(va)
        images, labels, val_images, val_labels = images[tr], labels[tr], images[va], labels[va]
    return images, labels, val_images, val_labels


def train(cfg, resume=None, out=sys.stdout):
    """Train from manifests named in ``cfg``; returns the final checkpoint dict.

    With ``resume`` (a checkpoint path) training continues after the saved
    epoch with the same schedule as an uninterrupted run.
    """
    cfg.validate()
    data = load_training_data(cfg)
    if resume is not None:
        state = TrainState.from_checkpoint(load_checkpoint(resume), cfg)
    else:
        state = TrainState(cfg)
    fit(state, *data, checkpoint_dir=cfg.checkpoint_dir, out=out)
    return state.state_dict()
