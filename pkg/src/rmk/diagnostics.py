"""Whole-model gradient check on the tiny fixture."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .fixtures import tiny_example
from .model import ModelConfig, RMKModel, collate
from .numerics import check_parameters

THRESHOLD = 1e-3


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    threshold: float = THRESHOLD

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.errors.items() if not v < self.threshold]

    @property
    def ok(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        width = max(len(k) for k in self.errors)
        out = [f"{k:<{width}}  {v:.3e}  {'ok' if v < self.threshold else 'FAIL'}" for k, v in self.errors.items()]
        out.append(f"{len(self.errors)} parameter groups, max relative error {self.max_error:.3e}")
        return out


def model_gradcheck(config: ModelConfig, seed: int = 0, eps: float = 3e-4, per_param: int = 6) -> GradcheckReport:
    """Finite-difference check of the summed two-decoder loss against every
    named parameter, dropout off."""
    cfg = dataclasses.replace(config, mode="both", dropout=0.0, k_facts=3)
    example, vocab, kb = tiny_example(cfg)
    model = RMKModel(cfg, vocab, len(kb.relations), seed=seed)
    # The default +-0.08 embedding init makes the encoded sentences nearly
    # identical, which leaves attention gradients around 1e-8: too small for
    # a difference quotient to resolve.  Probe at a better-spread point.
    rng = np.random.default_rng(seed + 1)
    emb = model.text.embedding.weight
    emb.data = rng.uniform(-1.0, 1.0, size=emb.shape)
    batch = collate([example], cfg.max_len)

    def loss():
        return model.forward(batch, training=False, scores=False).loss

    return GradcheckReport(check_parameters(loss, model.parameters(), eps=eps, per_param=per_param, seed=seed))
