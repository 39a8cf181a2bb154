"""Loss, initialization, AdamW, the learning-rate schedule, and the train loop.

The training objective mixes the two standard regression losses with a
relaxation weight alpha in [0, 1]:

    (1 - alpha) / N * sum_i mse(pred_i, target_i)
        + alpha / N * sum_i l1(pred_i, target_i)

where mse and l1 are per-sample means over the m output entries, so alpha
trades the terms off independently of the output width. Everything here is
deterministic under a fixed seed: shuffles, initialization, and any
measurement refresh all derive from named child streams.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import network
from .errors import NumericError, ParameterError, StructureError
from .numerics import SeededRng, as_dense

__all__ = [
    "LossConfig",
    "AdamWConfig",
    "ScheduleConfig",
    "TrainConfig",
    "OptimizerState",
    "EpochStats",
    "loss",
    "loss_gradient",
    "glorot_init",
    "adamw_step",
    "lr_at",
    "train",
]


@dataclass(frozen=True)
class LossConfig:
    """Relaxation weight between the squared-error and absolute-error terms."""

    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class AdamWConfig:
    """AdamW hyperparameters; decay is decoupled from the gradient step."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.003

    def __post_init__(self):
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ParameterError("beta1 and beta2 must lie in [0, 1)")
        if self.epsilon <= 0.0 or self.learning_rate < 0.0 or self.weight_decay < 0.0:
            raise ParameterError("need epsilon > 0, learning_rate >= 0, weight_decay >= 0")


@dataclass(frozen=True)
class ScheduleConfig:
    """Step-drop schedule: multiply the rate by ``factor`` every ``period`` epochs."""

    factor: float = 1.0
    period: int = 1

    def __post_init__(self):
        if not 0.0 < self.factor <= 1.0:
            raise ParameterError(f"decay factor must lie in (0, 1], got {self.factor}")
        if self.period < 1:
            raise ParameterError(f"decay period must be >= 1, got {self.period}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    seed: int
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: AdamWConfig = field(default_factory=AdamWConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class OptimizerState:
    """Per-parameter moment estimates plus the shared step counter."""

    first_moments: list
    second_moments: list
    step: int
    config: AdamWConfig

    @classmethod
    def for_parameters(cls, params, config):
        return cls(
            first_moments=[np.zeros_like(p) for p in params],
            second_moments=[np.zeros_like(p) for p in params],
            step=0,
            config=config,
        )


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_rre: float
    wall_seconds: float


def _check_pair(pred, target, alpha):
    pred = as_dense(pred)
    target = as_dense(target)
    if pred.shape != target.shape:
        raise StructureError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    return pred, target


def loss(pred, target, alpha):
    """Combined training loss over an (N, m) batch."""
    pred, target = _check_pair(pred, target, alpha)
    diff = pred - target
    return (1.0 - alpha) * float(np.mean(diff * diff)) + alpha * float(np.mean(np.abs(diff)))


def loss_gradient(pred, target, alpha):
    """Analytic gradient of loss() wrt pred; the |.| subgradient at 0 is 0."""
    pred, target = _check_pair(pred, target, alpha)
    diff = pred - target
    return ((1.0 - alpha) * 2.0 * diff + alpha * np.sign(diff)) / diff.size


def glorot_init(fan_in, fan_out, rng, shape=None):
    """Uniform draws on [-L, L) with L = sqrt(6 / (fan_in + fan_out)).

    ``shape`` defaults to (fan_out, fan_in). For a kernel bank, fan_in is
    the kernel length and fan_out the kernel count (each input block feeds
    every kernel); projections and head rows use fan_in = c, fan_out = 1.
    """
    if fan_in < 1 or fan_out < 1:
        raise ParameterError(f"fans must be >= 1, got ({fan_in}, {fan_out})")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_out, fan_in)
    return limit * (2.0 * rng.uniform(shape) - 1.0)


def adamw_step(params, grads, state, lr):
    """One decoupled-decay update, in place:

        theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta

    with bias-corrected moments mhat, vhat; both subtractions read the
    pre-step theta. Returns (params, state) for convenience.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moments):
        raise StructureError(
            f"{len(params)} params, {len(grads)} grads, "
            f"{len(state.first_moments)} moment slots"
        )
    for g in grads:
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient; aborting the optimizer step")
    cfg = state.config
    state.step += 1
    correction1 = 1.0 - cfg.beta1 ** state.step
    correction2 = 1.0 - cfg.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.first_moments, state.second_moments):
        if p.shape != g.shape:
            raise StructureError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        mhat = m / correction1
        vhat = v / correction2
        p -= lr * (mhat / (np.sqrt(vhat) + cfg.epsilon)) + lr * cfg.weight_decay * p
    return params, state


def lr_at(epoch, schedule, base):
    """Learning rate after step-drop decay: base * factor^(epoch // period)."""
    if epoch < 0:
        raise ParameterError(f"epoch must be >= 0, got {epoch}")
    return base * schedule.factor ** (epoch // schedule.period)


def _mean_rre(pred, truth):
    norms = np.linalg.norm(truth, axis=-1)
    if np.any(norms == 0.0):
        raise ParameterError("validation targets must be nonzero for relative error")
    return float(np.mean(np.linalg.norm(pred - truth, axis=-1) / norms))


def train(net, dataset, config, validation=None, remeasure=None):
    """Mini-batch training of a cascade; returns (net, per-epoch history).

    ``dataset`` is an (X, Y) pair of (N, n) inputs and (N, m) targets.
    ``validation``, when given, is an (Xv, Yv) pair scored by mean relative
    restoration error each epoch. ``remeasure(epoch, rng)``, when given, is
    called at the start of every epoch to regenerate X (fresh measurement
    noise); it must return an (N, n) array.

    The run is bit-reproducible: epoch shuffles use child("shuffle", epoch)
    of the config seed, remeasure receives child("measure", epoch), and all
    parameter updates happen in a fixed order.
    """
    inputs, targets = dataset
    inputs = as_dense(inputs, rank=2)
    targets = as_dense(targets, rank=2)
    count = inputs.shape[0]
    if targets.shape[0] != count or count == 0:
        raise StructureError(
            f"dataset needs matching nonempty inputs/targets, got {inputs.shape} "
            f"and {targets.shape}"
        )
    if inputs.shape[1] != net.n or targets.shape[1] != net.m:
        raise StructureError(
            f"dataset shapes {inputs.shape}/{targets.shape} do not match the "
            f"network (n={net.n}, m={net.m})"
        )
    if config.batch_size > count:
        raise StructureError(f"batch size {config.batch_size} exceeds dataset size {count}")
    rng = SeededRng(config.seed)
    names = [name for name, _ in net.parameters()]
    params = [arr for _, arr in net.parameters()]
    state = OptimizerState.for_parameters(params, config.optimizer)
    alpha = config.loss.alpha
    history = []
    for epoch in range(config.epochs):
        started = time.perf_counter()
        lr = lr_at(epoch, config.schedule, config.optimizer.learning_rate)
        if remeasure is not None:
            inputs = as_dense(remeasure(epoch, rng.child("measure", epoch)), rank=2)
            if inputs.shape != (count, net.n):
                raise StructureError(
                    f"remeasure returned shape {inputs.shape}, expected {(count, net.n)}"
                )
        order = rng.child("shuffle", epoch).permutation(count)
        total = 0.0
        for start in range(0, count, config.batch_size):
            chosen = order[start:start + config.batch_size]
            batch_x = inputs[chosen]
            batch_y = targets[chosen]
            pred, caches = network.forward(net, batch_x, with_caches=True)
            batch_loss = loss(pred, batch_y, alpha)
            if not math.isfinite(batch_loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch offset {start}"
                )
            grads = network.backward(net, caches, loss_gradient(pred, batch_y, alpha))
            adamw_step(params, [grads[name] for name in names], state, lr)
            total += batch_loss * len(chosen)
        val_rre = math.nan
        if validation is not None:
            val_x, val_y = validation
            val_rre = _mean_rre(network.forward(net, val_x), val_y)
        history.append(EpochStats(
            epoch=epoch,
            lr=lr,
            train_loss=total / count,
            val_rre=val_rre,
            wall_seconds=time.perf_counter() - started,
        ))
    return net, history
