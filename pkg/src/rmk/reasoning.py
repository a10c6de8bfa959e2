"""Purification, injection and aggregation units shared by the vision-fact
and history-fact branches.

    injection:    gamma_ij = softmax_j(w_g . tanh(W_1 [q, t_i, s_j]))
                  msg_i    = sum_j gamma_ij s_j
                  out_i    = tanh(W_2 [t_i, msg_i])
    aggregation:  delta_k  = softmax_k(w_d . (q * W_3 f_k))
                  out_j    = W_v [t_j, sum_k delta_k f_k]
    purification: eta_i    = softmax_i(w_e . (q * W_7 s_i));  s~_i = eta_i s_i
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Linear, Module, Tensor, ops


@dataclass
class InjectedNodes:
    features: Tensor  # [B, n_t, d]
    gamma: np.ndarray  # [B, n_t, n_s]


@dataclass
class AggregatedFeature:
    features: Tensor  # [B, n_t, d]
    delta: np.ndarray  # [B, K]


@dataclass
class PurifiedSentences:
    features: Tensor  # [B, n, d]
    eta: np.ndarray  # [B, n]


def _full_mask(mask, shape) -> np.ndarray:
    return np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)


def _scale_rows(weights: Tensor, items: Tensor) -> Tensor:
    """weights [B, n] times items [B, n, d], row by row."""
    B, n, d = items.shape
    w = ops.broadcast_to(ops.reshape(weights, (B, n, 1)), (B, n, d))
    return ops.mul(w, items)


class CrossGraphInjection(Module):
    def __init__(self, d_h: int, rng: np.random.Generator):
        self.attn = Linear(3 * d_h, d_h, rng)
        self.attn_vector = Linear(d_h, 1, rng, bias=False)
        self.out = Linear(2 * d_h, d_h, rng)
        self.d_h = d_h

    def __call__(self, question: Tensor, targets: Tensor, sources: Tensor, source_mask=None) -> InjectedNodes:
        B, nt, d = targets.shape
        if sources.ndim != 3 or sources.shape[0] != B or sources.shape[2] != d:
            raise ValueError(f"sources {sources.shape} do not match targets {targets.shape}")
        ns = sources.shape[1]
        if ns == 0:
            raise ValueError("injection needs at least one source node")
        source_mask = _full_mask(source_mask, (B, ns))
        if not source_mask.any(axis=1).all():
            raise ValueError("injection needs at least one valid source node per instance")
        q = ops.broadcast_to(ops.reshape(question, (B, 1, 1, d)), (B, nt, ns, d))
        t = ops.broadcast_to(ops.reshape(targets, (B, nt, 1, d)), (B, nt, ns, d))
        s = ops.broadcast_to(ops.reshape(sources, (B, 1, ns, d)), (B, nt, ns, d))
        logits = self.attn_vector(ops.tanh(self.attn(ops.concat([q, t, s], axis=-1))))
        gamma = ops.softmax(ops.reshape(logits, (B, nt, ns)), axis=-1, mask=source_mask[:, None, :])
        msg = ops.matmul(gamma, sources)
        out = ops.tanh(self.out(ops.concat([targets, msg], axis=-1)))
        return InjectedNodes(out, gamma.data)


class AwareAggregator(Module):
    """Question-gated pooling of fact features, concatenated onto each target.

    With ``attend=False`` the pooling weights are uniform over valid facts.
    """

    def __init__(self, d_h: int, rng: np.random.Generator, attend: bool = True):
        self.gate = Linear(d_h, d_h, rng, bias=False)  # a bias here would shift every logit equally
        self.attn_vector = Linear(d_h, 1, rng, bias=False)
        self.out = Linear(2 * d_h, d_h, rng)
        self.attend = attend
        self.d_h = d_h

    def weights(self, question: Tensor, facts: Tensor, fact_mask=None) -> Tensor:
        B, K, d = facts.shape
        if K == 0:
            raise ValueError("aggregation needs at least one fact")
        fact_mask = _full_mask(fact_mask, (B, K))
        if not self.attend:
            w = fact_mask / np.maximum(fact_mask.sum(axis=1, keepdims=True), 1)
            return Tensor(w)
        q = ops.broadcast_to(ops.reshape(question, (B, 1, d)), (B, K, d))
        logits = self.attn_vector(ops.mul(q, self.gate(facts)))
        return ops.softmax(ops.reshape(logits, (B, K)), axis=-1, mask=fact_mask)

    def __call__(self, question: Tensor, facts: Tensor, targets: Tensor, fact_mask=None) -> AggregatedFeature:
        B, K, d = facts.shape
        nt = targets.shape[1]
        delta = self.weights(question, facts, fact_mask)
        summary = ops.matmul(ops.reshape(delta, (B, 1, K)), facts)  # [B, 1, d]
        summary = ops.broadcast_to(summary, (B, nt, d))
        out = self.out(ops.concat([targets, summary], axis=-1))
        return AggregatedFeature(out, delta.data)

    def without_facts(self, targets: Tensor) -> Tensor:
        """The same projection with an all-zero fact summary."""
        return self.out(ops.concat([targets, Tensor(np.zeros(targets.shape))], axis=-1))


class QuestionGuidedPurifier(Module):
    def __init__(self, d_h: int, rng: np.random.Generator):
        self.gate = Linear(d_h, d_h, rng, bias=False)  # a bias here would shift every logit equally
        self.attn_vector = Linear(d_h, 1, rng, bias=False)
        self.d_h = d_h

    def __call__(self, question: Tensor, sentences: Tensor, mask=None) -> PurifiedSentences:
        B, n, d = sentences.shape
        if n == 0:
            raise ValueError("purification needs at least one sentence")
        mask = _full_mask(mask, (B, n))
        q = ops.broadcast_to(ops.reshape(question, (B, 1, d)), (B, n, d))
        logits = self.attn_vector(ops.mul(q, self.gate(sentences)))
        eta = ops.softmax(ops.reshape(logits, (B, n)), axis=-1, mask=mask)
        return PurifiedSentences(_scale_rows(eta, sentences), eta.data)


@dataclass
class BranchOutput:
    features: Tensor  # aggregated per-target features [B, n_t, d]
    gamma_to_targets: np.ndarray | None = None
    gamma_to_facts: np.ndarray | None = None
    delta: np.ndarray | None = None
    eta_targets: np.ndarray | None = None
    eta_facts: np.ndarray | None = None


class HistoryFactModule(Module):
    """Sentence-level branch: history rounds and sentence facts as edge-free
    nodes, purified, cross-injected and aggregated per round."""

    def __init__(self, d_h: int, rng: np.random.Generator, aggregate_attention: bool = True):
        self.purify_history = QuestionGuidedPurifier(d_h, rng)
        self.purify_facts = QuestionGuidedPurifier(d_h, rng)
        self.inject_history = CrossGraphInjection(d_h, rng)
        self.inject_facts = CrossGraphInjection(d_h, rng)
        self.aggregate = AwareAggregator(d_h, rng, attend=aggregate_attention)

    def __call__(
        self,
        question: Tensor,
        history: Tensor,
        history_mask: np.ndarray,
        facts: Tensor | None,
        fact_mask: np.ndarray | None,
        purification: bool = True,
        injection: bool = True,
    ) -> BranchOutput:
        out = BranchOutput(features=history)
        h = history
        if purification:
            ph = self.purify_history(question, history, history_mask)
            h, out.eta_targets = ph.features, ph.eta
        if facts is None:
            out.features = self.aggregate.without_facts(h)
            return out
        f = facts
        if purification:
            pf = self.purify_facts(question, facts, fact_mask)
            f, out.eta_facts = pf.features, pf.eta
        if injection:
            ih = self.inject_history(question, h, f, fact_mask)
            jf = self.inject_facts(question, f, h, history_mask)
            h, f = ih.features, jf.features
            out.gamma_to_targets, out.gamma_to_facts = ih.gamma, jf.gamma
        agg = self.aggregate(question, f, h, fact_mask)
        out.features, out.delta = agg.features, agg.delta
        return out


def history_fact_pipeline(module: HistoryFactModule, question, history_sentences, sentence_facts, history_mask=None, fact_mask=None):
    """Run the sentence-level branch; returns per-round features H-bar."""
    B, T, _ = history_sentences.shape
    K = sentence_facts.shape[1]
    return module(
        question,
        history_sentences,
        _full_mask(history_mask, (B, T)),
        sentence_facts,
        _full_mask(fact_mask, (B, K)),
    )


def cross_graph_inject(unit: CrossGraphInjection, question, targets, sources, source_mask=None) -> InjectedNodes:
    return unit(question, targets, sources, source_mask)


def vision_aware_aggregate(unit: AwareAggregator, question, injected_facts, targets, fact_mask=None) -> AggregatedFeature:
    return unit(question, injected_facts, targets, fact_mask)


def question_guided_purify(unit: QuestionGuidedPurifier, question, sentences, mask=None) -> PurifiedSentences:
    return unit(question, sentences, mask)
