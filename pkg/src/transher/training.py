"""Negative sampling, self-adversarial loss, L_p regularization and the sparse-Adam loop."""
from __future__ import annotations

import csv
import logging
import math
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .model import (ModelParameters, NumericError, SparseGrad, adversarial_weights,
                    batch_loss_and_grad, log_sigmoid, save_checkpoint, score_batch)

logger = logging.getLogger(__name__)

GRADIENT_CSV_HEADER = ("epoch", "entity_grad_std", "relation_grad_std", "translation_grad_std")


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 512
    negatives: int = 128
    alpha: float = 1.0
    learning_rate: float = 1e-3
    # (step, factor) pairs: from ``step`` on the learning rate is multiplied by ``factor``
    lr_decay: Sequence[Tuple[int, float]] = ()
    reg_weight: float = 0.0
    reg_order: int = 3
    reg_targets: Tuple[str, ...] = ("B",)
    filtered_negatives: bool = True
    seed: int = 0
    deterministic: bool = True
    workers: int = 1
    debug: bool = False
    log_every: int = 100
    # calls train()'s ``callback(step, params)`` every this many steps
    eval_every: int = 0
    checkpoint_every: int = 0
    checkpoint_dir: Optional[str] = None
    dataset_fingerprint: str = ""

    def __post_init__(self):
        if self.negatives < 1:
            raise ValueError("negatives per positive must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.alpha < 0:
            raise ValueError("adversarial temperature must be >= 0")
        if self.reg_weight < 0:
            raise ValueError("regularization weight must be >= 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


# ---------------------------------------------------------------------------
# negative sampling

MAX_RESAMPLE_ROUNDS = 20


def sample_negatives_batch(graph, positives: np.ndarray, direction: str, n: int,
                           rng: np.random.Generator, filtered: bool = True) -> np.ndarray:
    """Draw (b, n) corrupting entities; corrupted triples that are known facts get redrawn."""
    if n < 1:
        raise ValueError("n must be >= 1")
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    out = rng.integers(0, graph.num_entities, size=(positives.shape[0], n))
    if not filtered:
        return out
    h, r, t = (positives[:, i:i + 1] for i in range(3))

    def known(cands):
        if direction == "tail":
            return graph.filter_index.contains(h, r, cands)
        return graph.filter_index.contains(cands, r, t)

    bad = known(out)
    rounds = 0
    while bad.any():
        if rounds >= MAX_RESAMPLE_ROUNDS:
            logger.warning("could not find %d filtered negative(s) after %d rounds; "
                           "keeping unfiltered draws", int(bad.sum()), rounds)
            break
        out[bad] = rng.integers(0, graph.num_entities, size=int(bad.sum()))
        bad = known(out)
        rounds += 1
    return out


def sample_negatives(graph, positive, direction: str, n: int, rng: np.random.Generator,
                     filtered: bool = True) -> np.ndarray:
    return sample_negatives_batch(graph, np.asarray(positive)[None, :], direction, n, rng,
                                  filtered)[0]


# ---------------------------------------------------------------------------
# loss and regularization


def self_adversarial_loss(pos_score: float, neg_scores, alpha: float):
    """Return (loss, weights) for one positive score and its negative scores."""
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    weights = adversarial_weights(neg_scores, alpha)
    value = -log_sigmoid(pos_score) - float((weights * log_sigmoid(-neg_scores)).sum())
    return float(value), weights


def loss(params: ModelParameters, positive, negatives, direction: str, alpha: float = 1.0):
    """Self-adversarial loss of one positive against its corrupted ``negatives``."""
    pos = score_batch(params, positive, [positive[0] if direction == "head" else positive[2]],
                      direction)[0]
    neg = score_batch(params, positive, negatives, direction)
    return self_adversarial_loss(pos, neg, alpha)


def regularize(params: ModelParameters, weight: float, order: int = 3, relations=None,
               targets: Sequence[str] = ("B",)):
    """L_p penalty ``weight * sum |x|^p`` over the rows of ``targets`` touched by ``relations``.

    Returns (penalty, SparseGrad). ``relations=None`` means every row.
    """
    if weight < 0:
        raise ValueError("regularization weight must be >= 0")
    names = [n for n in targets if n in params.matrices]
    if weight == 0 or not names:
        return 0.0, SparseGrad({}, {})
    rows = (np.arange(params.num_relations) if relations is None
            else np.unique(np.asarray(relations, dtype=np.int64)))
    penalty = 0.0
    grad_rows, grad_vals = {}, {}
    for name in names:
        block = params.matrices[name][rows]
        penalty += weight * float((np.abs(block) ** order).sum())
        grad_rows[name] = rows
        grad_vals[name] = weight * order * np.abs(block) ** (order - 1) * np.sign(block)
    return penalty, SparseGrad(grad_rows, grad_vals)


def merge(a: SparseGrad, b: SparseGrad, dim: int) -> SparseGrad:
    parts = {}
    for g in (a, b):
        for name in g.rows:
            parts.setdefault(name, []).append((g.rows[name], g.values[name]))
    return SparseGrad.accumulate(parts, dim)


# ---------------------------------------------------------------------------
# optimizer


class SparseAdam:
    """Adam with lazy row updates: moments and weights change only on touched rows."""

    def __init__(self, params: ModelParameters, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(a) for n, a in params.matrices.items()}
        self.v = {n: np.zeros_like(a) for n, a in params.matrices.items()}

    def step(self, grad: SparseGrad, lr: Optional[float] = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, rows in grad.rows.items():
            g = grad.values[name]
            m = self.beta1 * self.m[name][rows] + (1.0 - self.beta1) * g
            v = self.beta2 * self.v[name][rows] + (1.0 - self.beta2) * g * g
            self.m[name][rows] = m
            self.v[name][rows] = v
            self.params.matrices[name][rows] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        out = {}
        for name in self.m:
            out[f"adam_m_{name}"] = self.m[name]
            out[f"adam_v_{name}"] = self.v[name]
        return out

    def load_state(self, arrays, t: int):
        for name in self.m:
            self.m[name][...] = arrays[f"adam_m_{name}"]
            self.v[name][...] = arrays[f"adam_v_{name}"]
        self.t = t


def learning_rate_at(config: TrainConfig, step: int) -> float:
    lr = config.learning_rate
    for at, factor in config.lr_decay:
        if step >= at:
            lr *= factor
    return lr


# ---------------------------------------------------------------------------
# training loop


@dataclass
class GradientStats:
    epochs: List[int] = field(default_factory=list)
    entity_std: List[float] = field(default_factory=list)
    relation_std: List[float] = field(default_factory=list)
    translation_std: List[Optional[float]] = field(default_factory=list)

    def record(self, epoch: int, params: ModelParameters, grad: SparseGrad):
        """Std over every component of the dense gradient matrices (untouched rows are zero)."""
        n_e, n_r, k = params.num_entities, params.num_relations, params.dim
        self.epochs.append(epoch)
        self.entity_std.append(float(grad.dense("E", (n_e, k)).std()))
        rel = [grad.dense(n, (n_r, k)) for n in ("RH", "RT") if n in params.matrices]
        if params.variant == "transe":
            self.relation_std.append(float(rel[0].std()))
            self.translation_std.append(None)
        else:
            self.relation_std.append(float(np.concatenate(rel).std()))
            self.translation_std.append(
                float(grad.dense("B", (n_r, k)).std()) if "B" in params.matrices else None)

    def __len__(self):
        return len(self.epochs)

    def write_csv(self, path: str):
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(GRADIENT_CSV_HEADER)
            for row in zip(self.epochs, self.entity_std, self.relation_std, self.translation_std):
                writer.writerow(["" if x is None else repr(x) if isinstance(x, float) else x
                                 for x in row])


@dataclass
class TrainResult:
    params: ModelParameters
    gradient_stats: GradientStats
    loss_trace: List[Tuple[int, float]]
    optimizer: Optional[SparseAdam] = None
    last_checkpoint: Optional[str] = None


def _training_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(b"train"),)))


def _step_gradient(params, positives, negatives, direction, alpha, workers, pool):
    if pool is None or workers <= 1 or len(positives) < 2 * workers:
        loss_value, grad, _ = batch_loss_and_grad(params, positives, negatives, direction, alpha)
        return loss_value, grad
    chunks = np.array_split(np.arange(len(positives)), workers)
    scale = 1.0 / len(positives)

    def work(idx):
        value, g, _ = batch_loss_and_grad(params, positives[idx], negatives[idx], direction,
                                          alpha, reduction="sum")
        return value, g

    results = list(pool.map(work, chunks))
    parts = {}
    for _, g in results:
        for name in g.rows:
            parts.setdefault(name, []).append((g.rows[name], g.values[name] * scale))
    return sum(v for v, _ in results) * scale, SparseGrad.accumulate(parts, params.dim)


def train(graph, params: ModelParameters, config: TrainConfig, callback=None) -> TrainResult:
    """Optimize ``params`` in place on ``graph.train`` for ``config.steps`` steps.

    Each step draws the next slice of a per-epoch shuffle of the training
    triples, corrupting heads on even steps and tails on odd steps.
    """
    train_triples = graph.train
    stats = GradientStats()
    trace: List[Tuple[int, float]] = []
    optimizer = SparseAdam(params, lr=config.learning_rate)
    if config.steps == 0 or len(train_triples) == 0:
        return TrainResult(params, stats, trace, optimizer)

    rng = _training_rng(config.seed)
    steps_per_epoch = math.ceil(len(train_triples) / config.batch_size)
    workers = 1 if config.deterministic else max(1, config.workers)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    last_checkpoint = None
    running = []
    try:
        order = None
        for step in range(config.steps):
            epoch, within = divmod(step, steps_per_epoch)
            if within == 0:
                order = rng.permutation(len(train_triples))
            idx = order[within * config.batch_size:(within + 1) * config.batch_size]
            positives = train_triples[idx]
            direction = "head" if step % 2 == 0 else "tail"
            negatives = sample_negatives_batch(graph, positives, direction, config.negatives, rng,
                                               config.filtered_negatives)
            loss_value, grad = _step_gradient(params, positives, negatives, direction,
                                              config.alpha, workers, pool)
            if config.reg_weight > 0:
                penalty, reg_grad = regularize(params, config.reg_weight, config.reg_order,
                                               positives[:, 1], config.reg_targets)
                loss_value += penalty
                grad = merge(grad, reg_grad, params.dim)
            if not math.isfinite(loss_value):
                raise NumericError(f"non-finite loss at step {step}; last good checkpoint: "
                                   f"{last_checkpoint or 'none'}")
            if config.debug:
                grad.check_finite()
            if within == 0:
                stats.record(epoch, params, grad)
            optimizer.step(grad, learning_rate_at(config, step))
            if config.debug:
                params.check_finite()
                params.check_entity_floor()
            running.append(loss_value)
            if config.log_every and (step + 1) % config.log_every == 0:
                trace.append((step + 1, float(np.mean(running))))
                logger.info("step %d loss %.6f", step + 1, trace[-1][1])
                running = []
            if callback is not None and config.eval_every and (step + 1) % config.eval_every == 0:
                callback(step + 1, params)
            if (config.checkpoint_every and config.checkpoint_dir
                    and (step + 1) % config.checkpoint_every == 0):
                last_checkpoint = save_training_checkpoint(
                    params, optimizer, os.path.join(config.checkpoint_dir, f"step-{step + 1}"),
                    config.dataset_fingerprint)
    finally:
        if pool is not None:
            pool.shutdown()
    if running:
        trace.append((config.steps, float(np.mean(running))))
    return TrainResult(params, stats, trace, optimizer, last_checkpoint)


def save_training_checkpoint(params, optimizer: Optional[SparseAdam], directory: str,
                             fingerprint: str = "") -> str:
    extra, arrays = None, None
    if optimizer is not None:
        extra = {"optimizer": {"name": "adam", "step": optimizer.t, "beta1": optimizer.beta1,
                               "beta2": optimizer.beta2, "eps": optimizer.eps}}
        arrays = optimizer.state_arrays()
    save_checkpoint(params, directory, fingerprint, extra=extra, extra_arrays=arrays)
    return directory


def write_loss_trace(trace, path: str):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("step", "loss"))
        for step, value in trace:
            writer.writerow((step, repr(value)))
