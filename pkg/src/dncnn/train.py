"""Loss, optimizers, learning-rate schedule, and the epoch loop.

Training minimizes the mean squared error between the network output and
its target, averaged over the mini-batch with a 1/2 factor:

    loss = 1/(2N) * sum_i ||pred_i - target_i||_F^2

In residual mode the target is the corruption (noisy minus clean); in
direct mode it is the clean patch itself. SGD-with-momentum and Adam both
apply coupled L2 weight decay to conv weights only; biases and BN
scale/shift are never decayed. The learning rate interpolates
geometrically from lr_start to lr_end across epochs and is constant
within an epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .data import PatchDataset, augment
from .degrade import degrade
from .errors import ShapeError, TrainingDivergedError
from .model import (
    Gradients,
    Model,
    NetworkSpec,
    backward,
    forward,
    grad_arrays,
    trainable_arrays,
)
from .rng import SeededRng
from .tensor import Tensor


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lr_start: float = 1e-1
    lr_end: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    optimizer: str = "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    deterministic: bool = True
    eval_every: int = 1
    augment: bool = True
    fixed_noise: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_start <= 0 or self.lr_end <= 0:
            raise ValueError("learning rates must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class OptimizerState:
    kinds: list
    momentum_buffers: list | None = None
    first_moments: list | None = None
    second_moments: list | None = None
    step_count: int = 0


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_psnr: float | None = None


@dataclass
class History:
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,lr,train_loss,val_psnr"]
        for r in self.rows:
            val = "" if r.val_psnr is None else repr(r.val_psnr)
            lines.append(f"{r.epoch},{r.lr!r},{r.train_loss!r},{val}")
        return "\n".join(lines) + "\n"


def residual_loss(pred: Tensor, noisy: Tensor, clean: Tensor, target_mode: str):
    """Mean squared error against the residual or the clean image.

    Returns (loss, gradient of the loss w.r.t. pred).
    """
    if pred.shape != noisy.shape or pred.shape != clean.shape:
        raise ShapeError(
            f"shape mismatch: pred {pred.shape}, noisy {noisy.shape}, clean {clean.shape}"
        )
    if target_mode == "residual":
        target = noisy - clean
    elif target_mode == "direct":
        target = clean
    else:
        raise ValueError(f"target_mode must be 'residual' or 'direct', got {target_mode!r}")
    n = pred.shape[0]
    diff = pred - target
    loss = float(np.sum(np.square(diff, dtype=np.float64))) / (2 * n)
    grad = diff / pred.dtype.type(n)
    return loss, grad


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """Geometric interpolation from lr_start (epoch 0) to lr_end (last epoch)."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} out of range [0, {cfg.epochs})")
    if cfg.epochs == 1:
        return cfg.lr_start
    ratio = cfg.lr_end / cfg.lr_start
    return cfg.lr_start * ratio ** (epoch / (cfg.epochs - 1))


def make_variant(spec: NetworkSpec, use_rl: bool, use_bn: bool):
    """Spec for one cell of the residual-learning x batch-norm ablation grid,
    plus the matching loss target mode."""
    variant = replace(spec, use_residual=use_rl, use_bn=use_bn)
    return variant, "residual" if use_rl else "direct"


def init_optimizer_state(model: Model, cfg: TrainConfig) -> OptimizerState:
    kinds = [kind for _, _, _, kind in trainable_arrays(model)]
    zeros = [
        np.zeros_like(getattr(owner, name))
        for _, owner, name, _ in trainable_arrays(model)
    ]
    if cfg.optimizer == "sgd":
        return OptimizerState(kinds=kinds, momentum_buffers=zeros)
    return OptimizerState(
        kinds=kinds,
        first_moments=zeros,
        second_moments=[z.copy() for z in zeros],
    )


def sgd_step(params: list, grads: list, state: OptimizerState, lr: float, cfg: TrainConfig):
    """Momentum SGD; weight decay folds into the gradient for conv weights only."""
    new_params = []
    for i, (p, g, kind) in enumerate(zip(params, grads, state.kinds)):
        if kind == "weight" and cfg.weight_decay != 0.0:
            g = g + p.dtype.type(cfg.weight_decay) * p
        buf = state.momentum_buffers[i]
        buf = p.dtype.type(cfg.momentum) * buf + g
        state.momentum_buffers[i] = buf
        new_params.append(p - p.dtype.type(lr) * buf)
    return new_params, state


def adam_step(params: list, grads: list, state: OptimizerState, lr: float, cfg: TrainConfig):
    """Adam with bias correction; same decay subset rule as sgd_step."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params = []
    for i, (p, g, kind) in enumerate(zip(params, grads, state.kinds)):
        if kind == "weight" and cfg.weight_decay != 0.0:
            g = g + p.dtype.type(cfg.weight_decay) * p
        dt = p.dtype.type
        m = dt(b1) * state.first_moments[i] + dt(1.0 - b1) * g
        v = dt(b2) * state.second_moments[i] + dt(1.0 - b2) * np.square(g)
        state.first_moments[i] = m
        state.second_moments[i] = v
        m_hat = m / dt(bc1)
        v_hat = v / dt(bc2)
        new_params.append(p - dt(lr) * m_hat / (np.sqrt(v_hat) + dt(cfg.adam_eps)))
    return new_params, state


_STEP_FNS = {"sgd": sgd_step, "adam": adam_step}


def _make_batch(dataset: PatchDataset, indices, aug_ks, seeds: SeededRng, epoch: int, cfg: TrainConfig):
    """Degraded/clean pair arrays for one mini-batch."""
    noisy_list = []
    clean_list = []
    noise_epoch = 0 if cfg.fixed_noise else epoch
    for pos, idx in enumerate(indices):
        clean = dataset.patches[idx]
        if cfg.augment:
            clean = augment(clean, int(aug_ks[idx]))
        rng = seeds.stream("noise", noise_epoch, int(idx))
        noisy, _, _ = degrade(clean, dataset.spec, rng)
        noisy_list.append(noisy)
        clean_list.append(clean)
    return np.stack(noisy_list), np.stack(clean_list)


def train(model: Model, dataset: PatchDataset, val, cfg: TrainConfig):
    """Run the epoch loop; returns (trained model, history).

    `val` is an optional list of (name, image) pairs evaluated in infer
    mode with the dataset's own degradation whenever the epoch schedule
    says so. Patch order is reshuffled per epoch, augmentation and
    degradation draws are derived from (seed, epoch, patch) streams, so a
    given seed reproduces the run exactly.
    """
    count = len(dataset.patches)
    if count == 0:
        raise ValueError("dataset is empty")
    if cfg.batch_size > count:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {count}")
    if model.spec.use_bn and cfg.batch_size < 2:
        raise ValueError("batch_size must be >= 2 when batch normalization is enabled")

    target_mode = "residual" if model.spec.use_residual else "direct"
    seeds = SeededRng(cfg.seed)
    state = init_optimizer_state(model, cfg)
    step_fn = _STEP_FNS[cfg.optimizer]
    history = History()
    steps_per_epoch = math.ceil(count / cfg.batch_size)
    global_step = 0

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg)
        perm = seeds.stream("shuffle", epoch).permutation(count)
        aug_ks = seeds.stream("augment", epoch).integers(0, 8, size=count)
        loss_sum = 0.0
        for s in range(steps_per_epoch):
            indices = perm[s * cfg.batch_size : (s + 1) * cfg.batch_size]
            noisy, clean = _make_batch(dataset, indices, aug_ks, seeds, epoch, cfg)
            pred, tape, model = forward(model, noisy, mode="train")
            loss, grad_pred = residual_loss(pred, noisy, clean, target_mode)
            if not np.isfinite(loss):
                raise TrainingDivergedError(global_step, epoch, loss)
            grads = backward(model, tape, grad_pred)
            refs = list(trainable_arrays(model))
            params = [getattr(owner, name) for _, owner, name, _ in refs]
            new_params, state = step_fn(params, list(grad_arrays(grads)), state, lr, cfg)
            for (_, owner, name, _), arr in zip(refs, new_params):
                setattr(owner, name, arr)
            loss_sum += loss
            global_step += 1

        val_psnr = None
        scheduled = (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1
        if val and scheduled:
            report = metrics.evaluate(model, val, dataset.spec, seed=cfg.seed)
            val_psnr = report.mean_psnr
        history.rows.append(
            EpochStats(epoch=epoch, lr=lr, train_loss=loss_sum / steps_per_epoch,
                       val_psnr=val_psnr)
        )
    return model, history
