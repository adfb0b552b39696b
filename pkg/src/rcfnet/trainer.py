"""Minibatch SGD training loop with step-decay schedule, telemetry and
resumable checkpoints."""

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import loss as loss_mod
from . import model as model_mod
from . import ops
from .data import AnnotationSet, SyntheticSample, consensus
from .tensor import Tensor


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    base_lr: float = 1e-6
    lr_decay_every: int = 10_000
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0002
    batch_size: int = 10
    total_iters: int = 40_000
    eta: float = 0.5
    lam: float = 1.1
    seed: int = 0
    checkpoint_every: int = 5_000

    def __post_init__(self):
        if min(self.lr_decay_every, self.batch_size,
               self.total_iters, self.checkpoint_every) <= 0:
            raise ValueError("train config values must be positive")
        if self.base_lr < 0:
            raise ValueError(f"base_lr must be >= 0, got {self.base_lr}")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ValueError(
                f"lr_decay_factor must be in (0, 1], got {self.lr_decay_factor}")

    def lr_at(self, iteration):
        return self.base_lr * self.lr_decay_factor ** (iteration
                                                       // self.lr_decay_every)


def paper_train_config(**overrides):
    """The published SGD schedule: lr 1e-6 decayed 10x every 10k
    iterations, momentum 0.9, weight decay 2e-4, batch 10, 40k
    iterations, loss eta 0.5 / lambda 1.1."""
    return TrainConfig(**overrides)


def _as_annotation(sample):
    return sample.annotations if isinstance(sample, SyntheticSample) else sample


def screen_dataset(dataset, params):
    """Drop images whose consensus map has no positives or no negatives."""
    usable = []
    skipped = []
    for sample in dataset:
        ann = _as_annotation(sample)
        gt = consensus(ann).prob
        try:
            loss_mod.balanced_weights(gt, params)
        except loss_mod.DegenerateMapError:
            skipped.append(ann.image_id)
            continue
        usable.append((ann, gt))
    if skipped:
        warnings.warn(f"skipping {len(skipped)} degenerate ground-truth maps: "
                      f"{', '.join(skipped[:5])}"
                      + ("..." if len(skipped) > 5 else ""))
    return usable


def save_checkpoint(model, path, iteration):
    extra = {f"opt/{name}": (model.params[name].velocity
                             if model.params[name].velocity is not None
                             else np.zeros(model.params[name].dims,
                                           dtype=np.float32))
             for name in sorted(model.params)}
    extra["meta/iteration"] = np.array([iteration], dtype=np.float32)
    model_mod.save_weights(model, path, extra=extra)


def load_checkpoint(model, path):
    """Restore weights + optimizer state; returns the stored iteration."""
    extras = model_mod.load_weights(model, path)
    for name in sorted(model.params):
        key = f"opt/{name}"
        if key in extras:
            model.params[name].velocity = np.ascontiguousarray(
                extras[key].astype(model.dtype)).reshape(model.params[name].dims)
    it = extras.get("meta/iteration")
    return int(it[0]) if it is not None else 0


def train(model, dataset, config, callbacks=None, log_path=None,
          checkpoint_dir=None, start_iter=0):
    """Run SGD from start_iter to config.total_iters.

    Each iteration samples batch_size images with replacement (the rng is
    derived from (seed, iteration), so resumed runs are bit-identical),
    accumulates summed per-image gradients and applies one momentum step.
    Returns the loss history as a list of (iteration, batch_loss, lr).
    """
    params = loss_mod.LossParams(eta=config.eta, lam=config.lam)
    usable = screen_dataset(dataset, params)
    if not usable:
        raise ValueError("no usable training images after degeneracy screening")

    history = []
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    try:
        for it in range(start_iter, config.total_iters):
            rng = np.random.default_rng((config.seed, it))
            idx = rng.integers(0, len(usable), size=config.batch_size)
            lr = config.lr_at(it)
            batch_loss = 0.0
            model.zero_grads()
            for j in idx:
                ann, gt = usable[j]
                x = (ann.image.astype(model.dtype)
                     - np.asarray(model.config.mean_rgb,
                                  dtype=model.dtype)[:, None, None])
                out = model.forward(Tensor(x[None]), train=True)
                lv, stage_grads, fused_grad = loss_mod.total_loss(out, gt, params)
                if not np.isfinite(lv):
                    raise TrainingDiverged(
                        f"non-finite loss at iteration {it} on image "
                        f"{ann.image_id!r}")
                model.backward(stage_grads, fused_grad)
                batch_loss += lv
            ops.sgd_step(model.parameters(), lr, momentum=config.momentum,
                         weight_decay=config.weight_decay)
            history.append((it, batch_loss, lr))
            if log_fh:
                log_fh.write(f"{it} {batch_loss:.6f} {lr:.3e}\n")
                log_fh.flush()
            if callbacks:
                for cb in callbacks:
                    cb(it, batch_loss, lr, model)
            if ckpt_dir and (it + 1) % config.checkpoint_every == 0:
                save_checkpoint(model, ckpt_dir / f"iter{it + 1:07d}.rcfw", it + 1)
    finally:
        if log_fh:
            log_fh.close()
    return history
