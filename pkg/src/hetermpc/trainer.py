"""Optimization loop: AdamW with linear learning-rate decay and global-norm
gradient clipping, gradient accumulation over micro-batches, and best-model
selection on validation loss."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .kernels import adamw_update
from .tape import ComputationTape, mul


@dataclass
class TrainConfig:
    lr: float = 6.25e-5
    clip_norm: float = 1.0
    batch_size: int = 16
    grad_accum_steps: int = 8
    max_epochs: int = 15
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 50  # in effective (optimizer) steps

    def __post_init__(self):
        for name in ("lr", "clip_norm", "batch_size", "grad_accum_steps",
                     "max_epochs", "eval_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class AdamW:
    """Decoupled weight decay Adam over a named parameter dict."""

    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.01):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {n: np.zeros(p.data.size, dtype=p.data.dtype)
                   for n, p in params.items()}
        self._v = {n: np.zeros(p.data.size, dtype=p.data.dtype)
                   for n, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float):
        self.step_count += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            flat = p.data.reshape(-1)
            adamw_update(flat, np.ascontiguousarray(p.grad.reshape(-1)),
                         self._m[name], self._v[name],
                         lr, self.beta1, self.beta2, self.eps,
                         self.weight_decay, self.step_count)


def clip_gradients(params: dict, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm.

    Returns the factor applied (1.0 when already within bounds).
    """
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    norm = math.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    factor = max_norm / norm
    for p in params.values():
        if p.grad is not None:
            p.grad *= p.data.dtype.type(factor)
    return factor


def linear_lr(step: int, total_steps: int, lr0: float) -> float:
    """Linear decay from lr0 at step 0 to exactly 0 at the final step."""
    if total_steps <= 1:
        return lr0
    frac = min(max(step, 0), total_steps - 1) / (total_steps - 1)
    return lr0 * (1.0 - frac)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    metrics: list
    best_valid_loss: float
    best_step: int
    total_steps: int
    final_params: dict = field(repr=False, default=None)


def _mean_loss(model, samples) -> float:
    losses = []
    for s in samples:
        losses.append(float(model.loss(s).item()))
    return float(np.mean(losses))


def train(model, train_records, cfg: TrainConfig, valid_records=None,
          checkpoint_path=None, log_path=None, on_event=None) -> TrainResult:
    """Optimize model parameters on the given records.

    The loss of an effective step is the mean per-sample loss over the whole
    effective batch (batch_size x grad_accum_steps samples); gradients are
    accumulated across micro-batches before one clipped AdamW update. Keeps
    the checkpoint with the best validation loss when a path is given.
    """
    if not train_records:
        raise ValueError("training corpus is empty")
    samples = [model.prepare(r) for r in train_records]
    valid_samples = ([model.prepare(r) for r in valid_records]
                     if valid_records else samples)

    named = model.params.named_parameters()
    opt = AdamW(named, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    shuffle_rng = np.random.default_rng(cfg.seed)

    per_update = cfg.batch_size * cfg.grad_accum_steps
    updates_per_epoch = max(1, math.ceil(len(samples) / per_update))
    total_steps = cfg.max_epochs * updates_per_epoch

    metrics = []
    best_valid = math.inf
    best_step = -1
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None

    def run_validation(step, train_loss, lr):
        nonlocal best_valid, best_step
        valid_loss = _mean_loss(model, valid_samples)
        entry = {"step": step, "train_loss": round(train_loss, 6),
                 "valid_loss": round(valid_loss, 6), "lr": lr}
        metrics.append(entry)
        if log_file:
            log_file.write(json.dumps(entry) + "\n")
            log_file.flush()
        if valid_loss < best_valid:
            best_valid = valid_loss
            best_step = step
            if checkpoint_path:
                save_checkpoint(checkpoint_path, named)
        if on_event:
            on_event(entry)

    step = 0
    try:
        for _epoch in range(cfg.max_epochs):
            order = shuffle_rng.permutation(len(samples))
            for start in range(0, len(order), per_update):
                batch_idx = order[start:start + per_update]
                opt.zero_grad()
                batch_losses = []
                for idx in batch_idx:
                    with ComputationTape() as tape:
                        loss = model.loss(samples[idx])
                        value = float(loss.item())
                        if not math.isfinite(value):
                            raise TrainingDiverged(
                                f"non-finite loss {value} at step {step}, sample {idx}"
                            )
                        tape.backward(mul(loss, 1.0 / len(batch_idx)))
                    batch_losses.append(value)
                clip_gradients(named, cfg.clip_norm)
                lr = linear_lr(step, total_steps, cfg.lr)
                opt.step(lr)
                train_loss = float(np.mean(batch_losses))
                step += 1
                if step % cfg.eval_every == 0 or step == total_steps:
                    run_validation(step, train_loss, lr)
    finally:
        if log_file:
            log_file.close()

    return TrainResult(metrics=metrics, best_valid_loss=best_valid,
                       best_step=best_step, total_steps=total_steps,
                       final_params=named)
