"""Lion and AdamW optimizers plus step-indexed learning-rate schedules.

Both optimizers consume gradients left on the parameter tensors by the
autodiff backward pass and mutate parameter buffers in place. ``step``
accepts an effective learning rate so an external schedule can drive it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from reranklab.tensor import ShapeError, Tensor

__all__ = ["Lion", "AdamW", "ScheduleSpec", "lr_at"]

FLOAT_BYTES = 8  # float64 buffers everywhere
COUNTER_BYTES = 8  # AdamW step counter, one int64


def _check_betas(beta1: float, beta2: float) -> None:
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError(f"betas must lie in [0, 1), got ({beta1}, {beta2})")


class Lion:
    """Sign-momentum optimizer.

    Per coordinate, with gradient g and momentum m:

        c = beta1 * m + (1 - beta1) * g
        theta -= lr * (sign(c) + weight_decay * theta)
        m = beta2 * m + (1 - beta2) * g

    sign(0) is 0, so a zero gradient with zero momentum is a fixed point.
    The momentum update uses the original gradient, after the parameter
    update. Keeps a single buffer per parameter.
    """

    name = "lion"

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.99),
        weight_decay: float = 0.01,
        decay_exclude: tuple[str, ...] = (),
    ):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {weight_decay}")
        _check_betas(*betas)
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.weight_decay = weight_decay
        self.decay_exclude = frozenset(decay_exclude)
        self.momentum = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, lr: float | None = None) -> None:
        """Apply one update from the gradients currently on the params."""
        eta = self.lr if lr is None else lr
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} mismatches parameter {name!r} {p.data.shape}")
            m = self.momentum[name]
            c = self.beta1 * m + (1.0 - self.beta1) * g
            wd = 0.0 if name in self.decay_exclude else self.weight_decay
            p.data -= eta * (np.sign(c) + wd * p.data)
            m *= self.beta2
            m += (1.0 - self.beta2) * g

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_bytes(self) -> int:
        """Exact bytes held in optimizer state buffers."""
        return sum(m.size * FLOAT_BYTES for m in self.momentum.values())

    def state_dict(self) -> dict:
        return {
            "kind": self.name,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "weight_decay": self.weight_decay,
            "buffers": {f"m/{name}": m for name, m in self.momentum.items()},
        }

    def load_buffers(self, buffers: Mapping[str, np.ndarray]) -> None:
        for name, m in self.momentum.items():
            src = buffers[f"m/{name}"]
            if src.shape != m.shape:
                raise ShapeError(f"momentum shape {src.shape} mismatches parameter {name!r}")
            m[...] = src


class AdamW:
    """Adam with decoupled weight decay and bias correction.

    Per coordinate, at step t (1-based):

        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g^2
        mhat = m / (1 - beta1^t);  vhat = v / (1 - beta2^t)
        theta -= lr * (mhat / (sqrt(vhat) + eps) + weight_decay * theta)

    Keeps two buffers per parameter plus the step counter.
    """

    name = "adamw"

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        decay_exclude: tuple[str, ...] = (),
    ):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if eps < 0:
            raise ValueError(f"eps must be >= 0, got {eps}")
        if weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {weight_decay}")
        _check_betas(*betas)
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay_exclude = frozenset(decay_exclude)
        self.step_count = 0
        self.moment1 = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.moment2 = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, lr: float | None = None) -> None:
        eta = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} mismatches parameter {name!r} {p.data.shape}")
            m = self.moment1[name]
            v = self.moment2[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            wd = 0.0 if name in self.decay_exclude else self.weight_decay
            p.data -= eta * (mhat / (np.sqrt(vhat) + self.eps) + wd * p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_bytes(self) -> int:
        """Exact bytes in state: two moment buffers plus the counter."""
        buffers = sum(m.size * FLOAT_BYTES for m in self.moment1.values())
        buffers += sum(v.size * FLOAT_BYTES for v in self.moment2.values())
        return buffers + COUNTER_BYTES

    def state_dict(self) -> dict:
        buffers = {f"m/{name}": m for name, m in self.moment1.items()}
        buffers.update({f"v/{name}": v for name, v in self.moment2.items()})
        return {
            "kind": self.name,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "step": self.step_count,
            "buffers": buffers,
        }

    def load_buffers(self, buffers: Mapping[str, np.ndarray], step: int = 0) -> None:
        for prefix, store in (("m", self.moment1), ("v", self.moment2)):
            for name, buf in store.items():
                src = buffers[f"{prefix}/{name}"]
                if src.shape != buf.shape:
                    raise ShapeError(f"{prefix} shape {src.shape} mismatches parameter {name!r}")
                buf[...] = src
        self.step_count = step


@dataclass(frozen=True)
class ScheduleSpec:
    """Learning-rate schedule over a fixed number of steps.

    ``constant`` returns base_lr everywhere. ``cosine`` ramps linearly
    over the first floor(warmup_ratio * total_steps) steps, then anneals
    to zero at total_steps; warmup applies only to the cosine kind.
    """

    kind: str
    base_lr: float
    warmup_ratio: float = 0.0
    total_steps: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ValueError(f"warmup_ratio must lie in [0, 1), got {self.warmup_ratio}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")


def lr_at(spec: ScheduleSpec, step: int) -> float:
    """Effective learning rate at a 0-based step index."""
    if step < 0 or step > spec.total_steps:
        raise ValueError(f"step {step} outside [0, {spec.total_steps}]")
    if spec.kind == "constant":
        return spec.base_lr
    warmup_steps = math.floor(spec.warmup_ratio * spec.total_steps)
    if step < warmup_steps:
        return spec.base_lr * (step + 1) / warmup_steps
    span = spec.total_steps - warmup_steps
    return spec.base_lr * 0.5 * (1.0 + math.cos(math.pi * (step - warmup_steps) / span))
