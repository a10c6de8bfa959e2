"""Mini-batch training with Adam and a per-epoch cosine schedule, plus
evaluation into metric reports."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .fusion import rank_candidates
from .metrics import MetricsReport, compute_metrics
from .model import Batch, Example, RMKModel, collate
from .numerics import AdamState, adam_step, backward, cosine_anneal_lr

log = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, epoch: int, batch: int, parameter: str | None, detail: str):
        self.epoch, self.batch, self.parameter = epoch, batch, parameter
        where = f"epoch {epoch}, batch {batch}"
        if parameter:
            where += f", parameter {parameter}"
        super().__init__(f"{detail} ({where})")


@dataclass
class TrainConfig:
    epochs: int = 16
    batch_size: int = 15
    lr_init: float = 4e-3
    lr_final: float = 5e-5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.lr_init >= self.lr_final > 0:
            raise ValueError("need lr_init >= lr_final > 0")


def epoch_lr(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for 0-based ``epoch``; the last epoch runs at lr_final."""
    return cosine_anneal_lr(epoch, max(cfg.epochs - 1, 1), cfg.lr_init, cfg.lr_final)


def batches(examples: Sequence[Example], size: int, max_len: int, order: np.ndarray | None = None):
    idx = np.arange(len(examples)) if order is None else order
    for start in range(0, len(idx), size):
        yield collate([examples[i] for i in idx[start : start + size]], max_len)


def _first_bad_grad(model: RMKModel) -> str | None:
    for name, p in model.named_parameters():
        if p.grad is not None and not np.isfinite(p.grad).all():
            return name
    return None


def _first_bad_value(model: RMKModel) -> str | None:
    for name, p in model.named_parameters():
        if not np.isfinite(p.data).all():
            return name
    return None


def train(
    model: RMKModel,
    examples: Sequence[Example],
    cfg: TrainConfig,
    seed: int = 0,
    val_examples: Sequence[Example] | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Train in place.  Returns one record per epoch (also passed to
    ``on_epoch``): epoch, lr, mean train loss and optional validation metrics."""
    if not examples:
        raise ValueError("no training examples")
    rng = np.random.default_rng(seed)
    params = model.trainable_parameters()
    state = AdamState()
    history = []
    for epoch in range(cfg.epochs):
        lr = epoch_lr(epoch, cfg)
        order = rng.permutation(len(examples))
        total, count = 0.0, 0
        started = time.perf_counter()
        for b, batch in enumerate(batches(examples, cfg.batch_size, model.config.max_len, order)):
            model.zero_grad()
            try:
                out = model.forward(batch, training=True, rng=rng, scores=False)
            except FloatingPointError as exc:
                raise NumericalError(epoch, b, _first_bad_value(model), str(exc)) from exc
            backward(out.loss, params.values())
            bad = _first_bad_grad(model)
            if bad is not None:
                raise NumericalError(epoch, b, bad, "non-finite gradient")
            adam_step(params, None, state, lr)
            total += float(out.loss.data) * batch.size
            count += batch.size
        record = {"epoch": epoch + 1, "lr": lr, "train_loss": total / count}
        if val_examples:
            record["val"] = {k: v.as_dict() for k, v in evaluate(model, val_examples, cfg.batch_size).items()}
        log.info("epoch %d lr %.3g loss %.6f (%.1fs)", epoch + 1, lr, record["train_loss"], time.perf_counter() - started)
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return history


def score_batch(model: RMKModel, batch: Batch) -> dict[str, np.ndarray]:
    """Candidate scores per decoder, dropout off."""
    out = model.forward(batch, training=False)
    res = {}
    if out.disc_scores is not None:
        res["disc"] = out.disc_scores.data
    if out.gen_scores is not None:
        res["gen"] = out.gen_scores.data
    return res


def evaluate(model: RMKModel, examples: Sequence[Example], batch_size: int = 15) -> dict[str, MetricsReport]:
    """Rank every candidate list; one report per active decoder."""
    if not examples:
        raise ValueError("no examples to evaluate")
    ranks: dict[str, list[int]] = {}
    rel: dict[str, list[np.ndarray]] = {}
    for batch in batches(examples, batch_size, model.config.max_len):
        for mode, scores in score_batch(model, batch).items():
            r = rank_candidates(scores)
            for i, ex in enumerate(batch.examples):
                ranks.setdefault(mode, []).append(int(r[i, ex.gt_index]))
                if ex.relevance is not None:
                    order = np.argsort(r[i], kind="stable")
                    rel.setdefault(mode, []).append(ex.relevance[order])
    return {mode: compute_metrics(ranks[mode], rel.get(mode) or None) for mode in ranks}


def format_log_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True)
