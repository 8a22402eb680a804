"""
Training Service - PFN meta-training on freshly sampled prior datasets.

Seed streams derived from ``cfg.seed``:

  TRAIN       dataset (step, b) of the batch at ``step``
  CUTOFF      context/query cutoff of that dataset
  VALIDATION  the fixed held-out suite, disjoint from every training stream
  BUCKETS     prior samples that fix the bucket edges before training
  INIT        model initialization
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from dvapfn.errors import ContractError, NumericError, TrainingDivergedError
from dvapfn.models.datasets import SyntheticDataset
from dvapfn.models.results import TrainLog, TrainLogRow
from dvapfn.numerics import SeededRng, Tape, derive_seed
from dvapfn.schemas import PriorConfig, TrainConfig
from dvapfn.services import bardist
from dvapfn.services.backbones import PFNModel, build_model, forward
from dvapfn.services.priors import prior_output_samples, sample_dataset

logger = logging.getLogger(__name__)

TRAIN, CUTOFF, VALIDATION, BUCKETS, INIT = range(1, 6)

Batch = List[Tuple[SyntheticDataset, SyntheticDataset]]


# ==================== Data ====================

def split_context_query(ds: SyntheticDataset, rng: SeededRng) -> Tuple[SyntheticDataset, SyntheticDataset]:
    """Prefix split at a cutoff drawn uniformly from 1..N-1."""
    if ds.n_points < 2:
        raise ContractError(f"need at least 2 points to split, got {ds.n_points}")
    cutoff = int(rng.integers(1, ds.n_points))
    return ds.split(cutoff)


def training_batch(cfg: TrainConfig, step: int) -> Tuple[Batch, List[int]]:
    """The (context, query) pairs for ``step`` and their dataset seeds."""
    batch, seeds = [], []
    for b in range(cfg.batch_size):
        seed = derive_seed(cfg.seed, TRAIN, step, b)
        ds = sample_dataset(cfg.prior, seed)
        batch.append(split_context_query(ds, SeededRng(cfg.seed, (CUTOFF, step, b))))
        seeds.append(seed)
    return batch, seeds


def validation_suite(prior: PriorConfig, seed: int, n_datasets: int = 64) -> List[SyntheticDataset]:
    return [sample_dataset(prior, derive_seed(seed, VALIDATION, k)) for k in range(n_datasets)]


def fit_buckets(cfg: TrainConfig) -> bardist.BucketSpec:
    samples = prior_output_samples(cfg.prior, cfg.bucket_samples, derive_seed(cfg.seed, BUCKETS))
    return bardist.build_buckets(samples, cfg.model.bucket_count)


# ==================== Schedule and optimizer ====================

def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``lr``, then cosine decay to 0 at the last step (``total_steps - 1``)."""
    if step < 0:
        raise ContractError(f"step must be >= 0, got {step}")
    warmup, last = cfg.warmup_steps, cfg.total_steps - 1
    if step < warmup:
        return cfg.lr * step / warmup
    progress = min((step - warmup) / max(last - warmup, 1), 1.0)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamWState:
    """Adaptive moments with decoupled weight decay and global-norm clipping."""
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    grad_clip: Optional[float] = 1.0
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "AdamWState":
        return cls(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay, cfg.grad_clip)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float) -> bool:
        """Update ``params`` in place; returns whether clipping fired."""
        clipped = False
        if self.grad_clip is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
                grads = {k: g * scale for k, g in grads.items()}
                clipped = True
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, w in params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m.setdefault(name, np.zeros_like(w))
            v = self.v.setdefault(name, np.zeros_like(w))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            w *= 1.0 - lr * self.weight_decay
            w -= lr * update
        return clipped


# ==================== Steps ====================

@dataclass
class StepResult:
    loss: float
    n_queries: int
    clipped: bool


def batch_loss(model: PFNModel, batch: Batch, params) -> Tuple[object, int]:
    """Total density NLL over every query of the batch, divided by the query count."""
    total, n_queries = None, 0
    for context, query in batch:
        logits = forward(model, context, query.X, params)
        part = bardist.nll_sum_tape(logits, model.buckets, query.y)
        total = part if total is None else total + part
        n_queries += query.n_points
    return total * (1.0 / n_queries), n_queries


def train_step(
    model: PFNModel,
    opt_state: AdamWState,
    batch: Batch,
    lr: float,
    step: int = 0,
    batch_seeds: Sequence[int] = (),
) -> StepResult:
    """One AdamW update on the mean query NLL of ``batch``."""
    if not batch:
        raise ContractError("train_step needs a nonempty batch")
    tape = Tape()
    leaves = {name: tape.watch(value, name) for name, value in model.params.items()}
    try:
        loss, n_queries = batch_loss(model, batch, leaves)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"loss is {value}")
        grads = tape.backward(loss)
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericError("non-finite gradient")
    except NumericError as exc:
        logger.error("training diverged at step %d; batch seeds %s: %s", step, list(batch_seeds), exc)
        raise TrainingDivergedError(step, list(batch_seeds), str(exc)) from exc
    clipped = opt_state.step(model.params, grads, lr)
    return StepResult(loss=value, n_queries=n_queries, clipped=clipped)


def validate(model: PFNModel, val_suite: Sequence[SyntheticDataset]) -> float:
    """Mean NLL over all query points with the fixed cutoff N/2."""
    total, count = 0.0, 0
    for ds in val_suite:
        context, query = ds.split(ds.n_points // 2)
        logits = forward(model, context, query.X)
        losses = bardist.nll(bardist.BarDistribution(logits.data, model.buckets), query.y)
        total += float(np.sum(losses))
        count += query.n_points
    return total / count


# ==================== Loop ====================

def train(
    cfg: TrainConfig,
    on_epoch: Optional[Callable[[TrainLogRow], None]] = None,
) -> Tuple[PFNModel, TrainLog]:
    """Meta-train with per-epoch validation; returns the best-validation model and the log."""
    buckets = fit_buckets(cfg)
    model = build_model(cfg.model, SeededRng(cfg.seed, (INIT,)), buckets)
    opt = AdamWState.from_config(cfg)
    val_suite = validation_suite(cfg.prior, cfg.seed, cfg.val_datasets)
    points_per_step = cfg.batch_size * cfg.prior.points_per_dataset

    log = TrainLog()
    best_val = validate(model, val_suite)
    best = model.copy()
    log.append(TrainLogRow(0, 0, float("nan"), best_val, 0.0, 0.0))
    logger.info(
        "training %s/%s: %d parameters, %d steps, initial val NLL %.4f",
        cfg.model.backbone.value, cfg.model.attention.kind.value, model.n_params, cfg.total_steps, best_val,
    )

    step = 0
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        losses, clipped = [], 0
        for _ in range(cfg.steps_per_epoch):
            batch, seeds = training_batch(cfg, step)
            result = train_step(model, opt, batch, lr_schedule(step, cfg), step, seeds)
            losses.append(result.loss)
            clipped += int(result.clipped)
            step += 1
        elapsed = time.perf_counter() - started
        val = validate(model, val_suite)
        if val < best_val:
            best_val, best = val, model.copy()
        row = TrainLogRow(
            step=step,
            cumulative_train_points=step * points_per_step,
            train_nll=float(np.mean(losses)),
            val_nll=val,
            wall_seconds=elapsed,
            throughput_points_per_sec=cfg.steps_per_epoch * points_per_step / max(elapsed, 1e-12),
            clipped_steps=clipped,
        )
        log.append(row)
        if clipped:
            logger.warning("epoch %d: gradient clipping fired on %d of %d steps", epoch + 1, clipped, cfg.steps_per_epoch)
        logger.info(
            "epoch %d/%d step %d train NLL %.4f val NLL %.4f (%.0f points/s)",
            epoch + 1, cfg.epochs, step, row.train_nll, val, row.throughput_points_per_sec,
        )
        if on_epoch is not None:
            on_epoch(row)

    best.metadata = {"best_val_nll": best_val, "seed": cfg.seed, "steps": step}
    return best, log
