"""Loss, optimizer, schedules, the training loop, and checkpoints."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import evaluate
from .phantom import TargetStats, TissueMap
from .tensor import Tensor, absolute, narrow, no_grad
from .tensorio import load_named, save_named


class NumericError(RuntimeError):
    """Non-finite values encountered during optimization."""


@dataclass
class TrainConfig:
    lr: float = 5e-5
    weight_decay: float = 0.01
    batch: int = 2
    epochs: int = 100
    milestones: tuple = (25, 50, 75, 90)
    gamma: float = 0.5
    l1_weight: float = 0.2
    w_start: float = 1.5
    w_end: float = 1.0
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        ms = tuple(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("milestones must be strictly increasing")
        if ms and ms[-1] >= self.epochs:
            raise ValueError("milestones must lie below the epoch count")
        if self.w_start < self.w_end:
            raise ValueError("the T1 weight decays, so w_start >= w_end")
        self.milestones = ms

    @classmethod
    def desk(cls, epochs: int = 50, seed: int = 0) -> "TrainConfig":
        return cls(epochs=epochs, milestones=_scaled_milestones(epochs), val_fraction=0.25, seed=seed)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "batch": self.batch,
            "epochs": self.epochs,
            "milestones": list(self.milestones),
            "gamma": self.gamma,
            "l1_weight": self.l1_weight,
            "w_start": self.w_start,
            "w_end": self.w_end,
            "val_fraction": self.val_fraction,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "milestones" in d:
            d["milestones"] = tuple(d["milestones"])
        return cls(**d)


def _scaled_milestones(epochs: int, reference=(25, 50, 75, 90), reference_epochs: int = 100) -> tuple:
    scaled = []
    for m in reference:
        v = max(1, round(m * epochs / reference_epochs))
        if v < epochs and (not scaled or v > scaled[-1]):
            scaled.append(v)
    return tuple(scaled)


def t1_weight(epoch: int, cfg: TrainConfig) -> float:
    """Linear decay from w_start at epoch 1 to w_end at the final epoch."""
    if not (1 <= epoch <= cfg.epochs):
        raise ValueError(f"epoch {epoch} outside [1, {cfg.epochs}]")
    if cfg.epochs == 1:
        return cfg.w_start
    frac = (epoch - 1) / (cfg.epochs - 1)
    return cfg.w_start + (cfg.w_end - cfg.w_start) * frac


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    drops = sum(1 for m in cfg.milestones if m <= epoch)
    return cfg.lr * cfg.gamma**drops


def loss_total(pred: Tensor, target: np.ndarray, mask: np.ndarray, epoch: int, cfg: TrainConfig) -> Tensor:
    """Weighted MSE + L1 over masked voxels, T1 emphasized early in training.

    pred: (B, 2, H, W) tensor; target: matching array of standardized maps;
    mask: (B, H, W) or (B, 1, H, W) boolean tissue mask.
    """
    w_e = t1_weight(epoch, cfg)
    if mask.ndim == 3:
        mask = mask[:, None]
    m = mask.astype(pred.data.dtype)
    count = float(m.sum())
    if count == 0:
        raise ValueError("loss needs at least one masked voxel")
    diff = pred - Tensor(np.asarray(target, dtype=pred.data.dtype))
    mask_t = Tensor(m)

    def channel_terms(c):
        d = narrow(diff, 1, c, 1)
        mse = (d * d * mask_t).sum() * (1.0 / count)
        l1 = (absolute(d) * mask_t).sum() * (1.0 / count)
        return mse + cfg.l1_weight * l1

    return w_e * channel_terms(0) + channel_terms(1)


class AdamW:
    """Decoupled weight decay Adam (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, params: list, weight_decay: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {p.name or '<unnamed>'}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - lr * (update + self.weight_decay * p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self, names: list) -> dict:
        out = {}
        for name, m, v in zip(names, self.m, self.v):
            out[f"adam.m.{name}"] = m
            out[f"adam.v.{name}"] = v
        return out

    def load_state_arrays(self, names: list, table: dict, t: int) -> None:
        self.t = t
        self.m = [np.asarray(table[f"adam.m.{n}"], dtype=p.data.dtype) for n, p in zip(names, self.params)]
        self.v = [np.asarray(table[f"adam.v.{n}"], dtype=p.data.dtype) for n, p in zip(names, self.params)]


# -- checkpoints ---------------------------------------------------------------------


def save_checkpoint(path, model, optimizer: AdamW | None, manifest: dict) -> None:
    names = [name for name, _ in model.named_parameters()]
    table = {f"param.{name}": p.data for name, p in model.named_parameters()}
    if optimizer is not None:
        table.update(optimizer.state_arrays(names))
        manifest = dict(manifest, adam_t=optimizer.t)
    save_named(path, table)
    Path(path).with_suffix(".json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(path, model, optimizer: AdamW | None = None) -> dict:
    table = load_named(path)
    manifest = json.loads(Path(path).with_suffix(".json").read_text())
    state = {k[len("param."):]: v for k, v in table.items() if k.startswith("param.")}
    model.load_state_dict(state)
    if optimizer is not None:
        names = [name for name, _ in model.named_parameters()]
        optimizer.load_state_arrays(names, table, manifest["adam_t"])
    return manifest


def checkpoint_parameter_names(path) -> list:
    table = load_named(path)
    return [k[len("param."):] for k in table if k.startswith("param.")]


# -- training loop -------------------------------------------------------------------


@dataclass
class Sample:
    """One training example: compressed input, standardized targets, tissue mask."""

    inputs: np.ndarray  # (2r, H, W)
    target: np.ndarray  # (2, H, W) standardized T1/T2
    truth: TissueMap


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[list, list]:
    order = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(round(n * val_fraction))) if n > 1 else 0
    return list(order[n_val:]), list(order[:n_val])


LOG_FIELDS = [
    "epoch", "lr", "w_e", "train_loss", "val_loss",
    "val_psnr_t1", "val_psnr_t2", "val_ssim_t1", "val_ssim_t2",
    "val_rmse_t1", "val_rmse_t2", "val_nmse_t1", "val_nmse_t2",
]


def train(
    model,
    train_samples: list,
    val_samples: list,
    cfg: TrainConfig,
    stats: TargetStats,
    log_path=None,
    checkpoint_path=None,
    start_epoch: int = 1,
    end_epoch: int | None = None,
    optimizer: AdamW | None = None,
    manifest_extra: dict | None = None,
) -> list:
    """Epoch loop with per-epoch logging and best-validation checkpointing.

    Batch order reshuffles per epoch from (seed, epoch) so an interrupted run
    resumed from a checkpoint replays the identical trace. Returns the list of
    per-epoch log rows (dicts with LOG_FIELDS keys).
    """
    from .perf import tune_allocator

    tune_allocator()
    dtype = model.parameters()[0].data.dtype
    optimizer = optimizer or AdamW(model.parameters(), weight_decay=cfg.weight_decay)
    history = []
    best_val = np.inf
    writer = None
    if log_path is not None:
        log_file = open(log_path, "a" if start_epoch > 1 else "w", newline="")
        writer = csv.DictWriter(log_file, fieldnames=LOG_FIELDS)
        if start_epoch == 1:
            writer.writeheader()

    for epoch in range(start_epoch, (end_epoch or cfg.epochs) + 1):
        lr = lr_at_epoch(epoch, cfg)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_samples))
        losses = []
        for lo in range(0, len(order), cfg.batch):
            batch = [train_samples[i] for i in order[lo : lo + cfg.batch]]
            x = Tensor(np.stack([s.inputs for s in batch]).astype(dtype))
            target = np.stack([s.target for s in batch])
            mask = np.stack([s.truth.mask for s in batch])
            model.zero_grad()
            pred = model(x)
            loss = loss_total(pred, target, mask, epoch, cfg)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite training loss {value} at epoch {epoch} (lr={lr})"
                )
            loss.backward()
            optimizer.step(lr)
            losses.append(value)
        row = {
            "epoch": epoch,
            "lr": lr,
            "w_e": t1_weight(epoch, cfg),
            "train_loss": float(np.mean(losses)),
        }
        row.update(_validate(model, val_samples, epoch, cfg, stats, dtype))
        history.append(row)
        if writer is not None:
            writer.writerow(row)
            log_file.flush()
        if checkpoint_path is not None and row["val_loss"] <= best_val:
            best_val = row["val_loss"]
            manifest = {
                "epoch": epoch,
                "val_loss": row["val_loss"],
                "metrics": {k: row[k] for k in LOG_FIELDS[5:]},
                "train_config": cfg.to_dict(),
            }
            if manifest_extra:
                manifest.update(manifest_extra)
            save_checkpoint(checkpoint_path, model, optimizer, manifest)
    if writer is not None:
        log_file.close()
    return history


def _validate(model, val_samples, epoch, cfg, stats, dtype) -> dict:
    losses = []
    sums = {k: 0.0 for k in LOG_FIELDS[5:]}
    with no_grad():
        for s in val_samples:
            x = Tensor(s.inputs[None].astype(dtype))
            pred = model(x)
            loss = loss_total(pred, s.target[None], s.truth.mask[None], epoch, cfg)
            losses.append(loss.item())
            scores = evaluate(pred.data[0].astype(np.float64), s.truth, stats)
            for param in ("t1", "t2"):
                for metric in ("psnr", "ssim", "rmse", "nmse"):
                    sums[f"val_{metric}_{param}"] += scores[param][metric]
    n = max(len(val_samples), 1)
    out = {k: v / n for k, v in sums.items()}
    out["val_loss"] = float(np.mean(losses)) if losses else np.nan
    return out
