"""Pair construction, BCE objective, and the seeded training loop.

Training consumes (query, positive, negative) triplets expanded into
binary-labeled pairs, minimizes mean binary cross-entropy per batch, and
records per-step loss, learning rate, wall time, and optimizer state
size. Runs are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from reranklab import tensor as T
from reranklab.checkpoint import checkpoint_text
from reranklab.model import CrossEncoder, Vocab, tokenize_pair
from reranklab.optim import AdamW, Lion, ScheduleSpec, lr_at
from reranklab.tensor import Tape, Tensor

logger = logging.getLogger(__name__)

__all__ = [
    "Triplet",
    "TrainPair",
    "TrainConfig",
    "ResourceStats",
    "LossRecord",
    "TrainResult",
    "NonFiniteLossError",
    "ParseError",
    "load_triplets",
    "triplets_to_pairs",
    "bce_loss",
    "run_training",
    "efficiency_gain",
    "format_loss_log",
    "write_loss_log",
    "resource_stats_lines",
]

BCE_EPS = 1e-12


class ParseError(ValueError):
    """Malformed input file; message names the offending line."""


class NonFiniteLossError(RuntimeError):
    """Training produced a NaN/inf batch loss."""

    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step
        self.value = value


@dataclass
class Triplet:
    query: str
    positive: str
    negative: str


@dataclass
class TrainPair:
    query: str
    passage: str
    label: int


@dataclass
class TrainConfig:
    """Hyperparameters for one training run.

    The schedule's total step count is derived inside ``run_training``
    as epochs * ceil(n_pairs / batch_size).
    """

    batch_size: int = 64
    epochs: int = 3
    seed: int = 12
    optimizer: str = "lion"
    base_lr: float = 2e-4
    schedule: str = "constant"
    warmup_ratio: float = 0.1
    shuffle: bool = True
    weight_decay: float = 0.01
    lion_betas: tuple[float, float] = (0.9, 0.99)
    adamw_betas: tuple[float, float] = (0.9, 0.999)
    adamw_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.optimizer not in ("lion", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class ResourceStats:
    """Process-level optimizer accounting for one run."""

    optimizer_state_bytes: int
    mean_step_ms: float
    peak_step_ms: float
    std_step_ms: float
    n_steps: int


@dataclass
class LossRecord:
    step: int
    epoch: int
    lr: float
    loss: float


@dataclass
class TrainResult:
    model: CrossEncoder
    checkpoints: list[tuple[str, str]]  # (name, serialized checkpoint text)
    loss_log: list[LossRecord]
    stats: ResourceStats


# ---------------------------------------------------------------------------
# data loading and pair construction


def load_triplets(path) -> list[Triplet]:
    """Read a UTF-8 TSV of query<TAB>positive<TAB>negative lines."""
    triplets = []
    bad: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                bad.append(lineno)
                continue
            triplets.append(Triplet(*parts))
    if bad:
        raise ParseError(f"{path}: expected 3 tab-separated fields on lines {bad}")
    return triplets


def triplets_to_pairs(triplets: Iterable[Triplet]) -> list[TrainPair]:
    """Expand each triplet into (query, positive, 1) then (query, negative, 0).

    Triplets with an empty field are skipped with a counted warning.
    """
    pairs: list[TrainPair] = []
    skipped = 0
    for t in triplets:
        if not (t.query.strip() and t.positive.strip() and t.negative.strip()):
            skipped += 1
            continue
        pairs.append(TrainPair(t.query, t.positive, 1))
        pairs.append(TrainPair(t.query, t.negative, 0))
    if skipped:
        logger.warning("skipped %d malformed triplet(s) with empty fields", skipped)
    return pairs


# ---------------------------------------------------------------------------
# objective


def bce_loss(y_hat, y: int) -> Tensor:
    """Binary cross-entropy -[y log(p) + (1-y) log(1-p)].

    The prediction is clamped to [1e-12, 1 - 1e-12] before the logs so
    the loss stays finite; gradients flow through the clamp interior.
    """
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y}")
    p = T.clip(T.as_tensor(y_hat), BCE_EPS, 1.0 - BCE_EPS)
    term_pos = T.log(p)
    term_neg = T.log(1.0 - p)
    return -(float(y) * term_pos + (1.0 - float(y)) * term_neg)


def _batch_mean_loss(losses: Sequence[Tensor]) -> Tensor:
    total = losses[0]
    for item in losses[1:]:
        total = total + item
    return total * (1.0 / len(losses))


# ---------------------------------------------------------------------------
# training loop


def _make_optimizer(model: CrossEncoder, config: TrainConfig):
    if config.optimizer == "lion":
        return Lion(
            model.params,
            lr=config.base_lr,
            betas=config.lion_betas,
            weight_decay=config.weight_decay,
        )
    return AdamW(
        model.params,
        lr=config.base_lr,
        betas=config.adamw_betas,
        eps=config.adamw_eps,
        weight_decay=config.weight_decay,
    )


def run_training(
    model: CrossEncoder,
    vocab: Vocab,
    pairs: Sequence[TrainPair],
    config: TrainConfig,
    run_name: str = "crossenc",
) -> TrainResult:
    """Train ``model`` in place and return checkpoints, loss log, and stats.

    Deterministic for a fixed config: the per-epoch shuffle is seeded
    with seed + epoch index, batches keep the final partial batch, and
    one checkpoint (with optimizer state) is serialized per epoch under
    the name ``{run_name}-{optimizer}-epoch{K}``.
    """
    if not pairs:
        raise ValueError("run_training requires a non-empty pair list")
    steps_per_epoch = math.ceil(len(pairs) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    spec = ScheduleSpec(
        kind=config.schedule,
        base_lr=config.base_lr,
        warmup_ratio=config.warmup_ratio,
        total_steps=total_steps,
    )
    optimizer = _make_optimizer(model, config)

    sequences = [
        tokenize_pair(vocab, pair.query, pair.passage, model.config.max_len) for pair in pairs
    ]
    labels = [pair.label for pair in pairs]

    loss_log: list[LossRecord] = []
    checkpoints: list[tuple[str, str]] = []
    step_times_ms: list[float] = []
    global_step = 0

    for epoch_index in range(config.epochs):
        epoch = epoch_index + 1
        if config.shuffle:
            order = np.random.default_rng(config.seed + epoch_index).permutation(len(pairs))
        else:
            order = np.arange(len(pairs))
        for start in range(0, len(pairs), config.batch_size):
            batch_ids = order[start : start + config.batch_size]
            lr = lr_at(spec, global_step)
            t0 = time.perf_counter()
            with Tape() as tape:
                losses = [
                    bce_loss(model.forward(sequences[i]), labels[i]) for i in batch_ids
                ]
                batch_loss = _batch_mean_loss(losses)
            loss_value = batch_loss.item()
            if not math.isfinite(loss_value):
                raise NonFiniteLossError(global_step, loss_value)
            tape.backward(batch_loss)
            optimizer.step(lr=lr)
            optimizer.zero_grad()
            step_times_ms.append((time.perf_counter() - t0) * 1000.0)
            loss_log.append(LossRecord(step=global_step, epoch=epoch, lr=lr, loss=loss_value))
            global_step += 1
        name = f"{run_name}-{config.optimizer}-epoch{epoch}"
        checkpoints.append((name, checkpoint_text(model, vocab, optimizer)))
        logger.info(
            "epoch %d/%d done, mean loss %.6f",
            epoch,
            config.epochs,
            float(np.mean([r.loss for r in loss_log if r.epoch == epoch])),
        )

    times = np.asarray(step_times_ms)
    stats = ResourceStats(
        optimizer_state_bytes=optimizer.state_bytes(),
        mean_step_ms=float(times.mean()),
        peak_step_ms=float(times.max()),
        std_step_ms=float(times.std()),
        n_steps=len(step_times_ms),
    )
    return TrainResult(model=model, checkpoints=checkpoints, loss_log=loss_log, stats=stats)


# ---------------------------------------------------------------------------
# resource accounting


def efficiency_gain(baseline_mean: float, candidate_mean: float) -> float:
    """Percent saving of candidate over baseline: (base - cand) / base * 100."""
    if baseline_mean <= 0:
        raise ValueError(f"baseline_mean must be positive, got {baseline_mean}")
    return (baseline_mean - candidate_mean) / baseline_mean * 100.0


# ---------------------------------------------------------------------------
# report formats


def format_loss_log(records: Iterable[LossRecord]) -> str:
    """Tab-separated ``step epoch lr loss`` rows, 10 significant digits."""
    lines = [f"{r.step}\t{r.epoch}\t{r.lr:.10g}\t{r.loss:.10g}" for r in records]
    return "\n".join(lines) + "\n" if lines else ""


def write_loss_log(path, records: Iterable[LossRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_loss_log(records))


def resource_stats_lines(stats: ResourceStats, optimizer: str) -> list[str]:
    """key=value lines plus a block mirroring the usage-table columns."""
    return [
        f"optimizer={optimizer}",
        f"optimizer_state_bytes={stats.optimizer_state_bytes}",
        f"mean_step_ms={stats.mean_step_ms:.10g}",
        f"peak_step_ms={stats.peak_step_ms:.10g}",
        f"std_step_ms={stats.std_step_ms:.10g}",
        f"n_steps={stats.n_steps}",
        "[usage-table]",
        f"mean={stats.mean_step_ms:.10g}",
        f"peak={stats.peak_step_ms:.10g}",
        f"std={stats.std_step_ms:.10g}",
        f"data_points={stats.n_steps}",
    ]
