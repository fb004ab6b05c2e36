"""Optimizer and stage driver: AdamW, loss logging, NaN recovery.

The training loop is deliberately dull: rebuild a deterministic batch from
the step index, compute the stage loss, clip, step, log. If the loss ever
goes non-finite the loop restores the last good parameter snapshot and
stops, reporting the abort instead of writing garbage checkpoints.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distill import (CFG_SCALE, build_batch, stage1_loss, stage2_loss,
                      teacher_loss)
from .model import DenoiserConfig
from .tensor import Tensor
from .toyworld import N_EFFECTS, WorldConfig

__all__ = ["AdamW", "clip_grad_norm", "TrainConfig", "TrainResult",
           "train_stage", "write_loss_csv", "read_loss_csv", "smoothed"]


class AdamW:
    """Adam with decoupled weight decay over a named parameter dict.

    The optimizer is the one sanctioned mutator of parameter data; nothing
    else writes to ``Tensor.data`` in place.
    """

    def __init__(self, params: dict[str, Tensor], lr: float,
                 betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


@dataclass
class TrainConfig:
    steps: int = 200
    batch_size: int = 4
    lr: float = 2e-3
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    warmup_steps: int = 20
    seed: int = 0          # seeds loss-internal draws (timesteps, noise, dropout)
    data_seed: int = 10_000
    n_train: int = 256     # distinct clips cycled through
    log_every: int = 25
    guidance: float = CFG_SCALE   # stage2 rollout CFG; other stages ignore it


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    history: list = field(default_factory=list)  # (step, stage, loss) rows
    aborted: bool = False
    abort_reason: str = ""
    steps_done: int = 0


_STAGE_LOSS = {"teacher": teacher_loss, "stage1": stage1_loss,
               "stage2": stage2_loss}


def _step_batch(cfg: DenoiserConfig, world: WorldConfig, tcfg: TrainConfig,
                step: int):
    idx = [(step * tcfg.batch_size + j) % tcfg.n_train
           for j in range(tcfg.batch_size)]
    seeds = [tcfg.data_seed + i for i in idx]
    effects = [i % N_EFFECTS for i in idx]
    return build_batch(cfg, world, seeds, effects)


def train_stage(stage: str, params: dict[str, Tensor], cfg: DenoiserConfig,
                world: WorldConfig, tcfg: TrainConfig,
                log=None) -> TrainResult:
    """Run one training stage in place on ``params``."""
    if stage not in _STAGE_LOSS:
        raise ValueError(f"unknown stage {stage!r}; want one of {sorted(_STAGE_LOSS)}")
    loss_fn = _STAGE_LOSS[stage]
    opt = AdamW(params, lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    result = TrainResult(params=params)
    # params most recently proven good by a finite loss; a non-finite loss
    # discards the unverified update that produced it
    snapshot = {k: p.data.copy() for k, p in params.items()}
    for step in range(tcfg.steps):
        if tcfg.warmup_steps:
            opt.lr = tcfg.lr * min(1.0, (step + 1) / tcfg.warmup_steps)
        batch = _step_batch(cfg, world, tcfg, step)
        kwargs = {"guidance": tcfg.guidance} if stage == "stage2" else {}
        loss, _ = loss_fn(params, cfg, batch, seed=tcfg.seed, step=step, **kwargs)
        value = loss.item()
        if not math.isfinite(value):
            for k, p in params.items():
                p.data = snapshot[k].copy()
            result.aborted = True
            result.abort_reason = (f"non-finite loss at step {step}; restored "
                                   f"last verified parameters")
            break
        snapshot = {k: p.data.copy() for k, p in params.items()}
        opt.zero_grad()
        loss.backward()
        clip_grad_norm(params, tcfg.grad_clip)
        opt.step()
        result.history.append((step, stage, value))
        result.steps_done = step + 1
        if log is not None and step % tcfg.log_every == 0:
            log(f"{stage} step {step}: loss {value:.5f}")
    return result


def write_loss_csv(path, history, append: bool = False) -> None:
    path = Path(path)
    mode = "a" if append and path.exists() else "w"
    with open(path, mode, newline="") as f:
        writer = csv.writer(f)
        if mode == "w":
            writer.writerow(["step", "stage", "loss"])
        for step, stage, value in history:
            writer.writerow([step, stage, f"{value:.8f}"])


def read_loss_csv(path) -> list[tuple[int, str, float]]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [(int(r["step"]), r["stage"], float(r["loss"])) for r in rows]


def smoothed(values, window: int) -> np.ndarray:
    """Trailing moving average; the loss-decrease checks run on this."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < window:
        raise ValueError(f"need at least {window} points, have {v.size}")
    kernel = np.ones(window) / window
    return np.convolve(v, kernel, mode="valid")
