"""Fusion of question, vision-fact and history-fact features, the two
answer decoders, and candidate ranking."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import LayerNorm, Linear, Module, Tensor, ops
from .text import BOS, PAD, LSTMEncoder


@dataclass
class FusionOutput:
    joint: Tensor  # [B, d]
    attention: dict[str, np.ndarray]  # source -> [B, heads, n]


class CrossAttention(Module):
    """Multi-head attention of one query vector over a set of items."""

    def __init__(self, d_h: int, heads: int, rng: np.random.Generator):
        if d_h % heads:
            raise ValueError(f"d_h={d_h} is not divisible by heads={heads}")
        self.query = Linear(d_h, d_h, rng)
        self.key = Linear(d_h, d_h, rng, bias=False)  # a key bias adds the same q.b to every logit
        self.value = Linear(d_h, d_h, rng)
        self.heads = heads
        self.d_h = d_h

    def __call__(self, query: Tensor, items: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        B, n, d = items.shape
        h, dk = self.heads, d // self.heads
        q = ops.reshape(self.query(query), (B, h, 1, dk))
        k = ops.transpose(ops.reshape(self.key(items), (B, n, h, dk)), (0, 2, 3, 1))  # [B, h, dk, n]
        v = ops.transpose(ops.reshape(self.value(items), (B, n, h, dk)), (0, 2, 1, 3))  # [B, h, n, dk]
        logits = ops.scale(ops.matmul(q, k), 1.0 / math.sqrt(dk))  # [B, h, 1, n]
        attn = ops.softmax(logits, axis=-1, mask=np.asarray(mask, dtype=bool)[:, None, None, :])
        ctx = ops.reshape(ops.matmul(attn, v), (B, d))
        return ctx, ops.reshape(attn, (B, h, n))


class FusionBlock(Module):
    """The question attends separately over vision and history items; the
    two contexts are concatenated and projected, then residual + layer norm
    and a feed-forward sublayer."""

    def __init__(self, d_h: int, heads: int, rng: np.random.Generator, dropout: float = 0.0):
        self.vision_attn = CrossAttention(d_h, heads, rng)
        self.history_attn = CrossAttention(d_h, heads, rng)
        self.proj = Linear(2 * d_h, d_h, rng)
        self.norm1 = LayerNorm(d_h)
        self.ff_in = Linear(d_h, 2 * d_h, rng)
        self.ff_out = Linear(2 * d_h, d_h, rng)
        self.norm2 = LayerNorm(d_h)
        self.dropout = dropout

    def __call__(
        self,
        question: Tensor,
        vision: Tensor,
        vision_mask: np.ndarray,
        history: Tensor,
        history_mask: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> FusionOutput:
        if vision.shape[1] == 0 or history.shape[1] == 0:
            raise ValueError("fusion needs at least one vision and one history item")
        d = question.shape[-1]
        if vision.shape[-1] != d or history.shape[-1] != d:
            raise ValueError(f"feature sizes differ: q {question.shape}, vision {vision.shape}, history {history.shape}")
        cv, av = self.vision_attn(question, vision, vision_mask)
        ch, ah = self.history_attn(question, history, history_mask)
        x = self.norm1(ops.add(question, self.proj(ops.concat([cv, ch], axis=-1))))
        hidden = ops.dropout(ops.relu(self.ff_in(x)), self.dropout, training, rng)
        e = self.norm2(ops.add(x, self.ff_out(hidden)))
        return FusionOutput(e, {"vision": av.data, "history": ah.data})


def fuse(block: FusionBlock, question: Tensor, vision: Tensor, history: Tensor, vision_mask=None, history_mask=None) -> FusionOutput:
    B = question.shape[0]
    vm = np.ones((B, vision.shape[1]), dtype=bool) if vision_mask is None else vision_mask
    hm = np.ones((B, history.shape[1]), dtype=bool) if history_mask is None else history_mask
    return block(question, vision, vm, history, hm)


# ---------------------------------------------------------------------------
# decoders
# ---------------------------------------------------------------------------


def discriminative_scores(joint: Tensor, candidates: Tensor) -> Tensor:
    """Dot product of the joint feature [B, d] with candidate encodings [B, C, d]."""
    B, C, d = candidates.shape
    if joint.shape != (B, d):
        raise ValueError(f"joint feature {joint.shape} does not match candidates {candidates.shape}")
    s = ops.matmul(ops.reshape(joint, (B, 1, d)), ops.transpose(candidates, (0, 2, 1)))
    return ops.reshape(s, (B, C))


def npair_loss(scores: Tensor, gt_index) -> Tensor:
    """Softmax cross-entropy of candidate scores against the ground truth
    (multi-class N-pair loss), averaged over the batch."""
    gt_index = np.asarray(gt_index, dtype=np.int64)
    B, C = scores.shape
    if gt_index.shape != (B,) or gt_index.min() < 0 or gt_index.max() >= C:
        raise IndexError(f"ground-truth index out of range for {C} candidates")
    return ops.scale(ops.sum(ops.pick(ops.log_softmax(scores, axis=-1), gt_index)), -1.0 / B)


class GenerativeDecoder(Module):
    """LSTM language model whose initial hidden state is the joint feature."""

    def __init__(self, vocab_size: int, d_emb: int, d_h: int, rng: np.random.Generator):
        self.lstm = LSTMEncoder(d_emb, d_h, rng)
        self.output = Linear(d_h, vocab_size, rng)

    def token_logprobs(self, joint: Tensor, answer_ids: np.ndarray, embedding) -> tuple[Tensor, np.ndarray]:
        """Per-token log-likelihoods [S, L] of ``answer_ids`` [S, L] given
        ``joint`` [S, d]; also returns the PAD mask."""
        answer_ids = np.asarray(answer_ids, dtype=np.int64)
        S, L = answer_ids.shape
        mask = answer_ids != PAD
        if not mask.any(axis=1).all():
            raise ValueError("every candidate answer needs at least one token")
        inputs = np.concatenate([np.full((S, 1), BOS), answer_ids[:, :-1]], axis=1)
        in_mask = np.ones_like(mask)
        _, states = self.lstm.run(embedding(inputs), in_mask, h0=joint, keep_states=True)
        hs = ops.concat([ops.reshape(h, (S, 1, -1)) for h in states], axis=1)  # [S, L, d]
        logp = ops.log_softmax(self.output(hs), axis=-1)
        return ops.pick(logp, answer_ids), mask

    def sequence_logprob(self, joint: Tensor, answer_ids: np.ndarray, embedding, length_norm: bool = False) -> Tensor:
        tok, mask = self.token_logprobs(joint, answer_ids, embedding)
        total = ops.sum(ops.mul(tok, Tensor(mask.astype(np.float64))), axis=-1)
        if length_norm:
            total = ops.mul(total, Tensor(1.0 / mask.sum(axis=-1)))
        return total


def generative_scores(decoder: GenerativeDecoder, joint: Tensor, candidate_ids: np.ndarray, embedding, length_norm: bool = False) -> Tensor:
    """Log-likelihood of each candidate [B, C, L] under the decoder."""
    B, C, L = candidate_ids.shape
    d = joint.shape[-1]
    rep = ops.reshape(ops.broadcast_to(ops.reshape(joint, (B, 1, d)), (B, C, d)), (B * C, d))
    flat = decoder.sequence_logprob(rep, candidate_ids.reshape(B * C, L), embedding, length_norm)
    return ops.reshape(flat, (B, C))


def generative_loss(decoder: GenerativeDecoder, joint: Tensor, answer_ids: np.ndarray, embedding) -> Tensor:
    """Negative log-likelihood of the ground-truth answers [B, L], batch mean."""
    ll = decoder.sequence_logprob(joint, answer_ids, embedding)
    return ops.scale(ops.sum(ll), -1.0 / joint.shape[0])


def multitask_loss(disc_loss: Tensor | None, gen_loss: Tensor | None) -> Tensor:
    """Unweighted sum of whichever losses are present."""
    parts = [x for x in (disc_loss, gen_loss) if x is not None]
    if not parts:
        raise ValueError("no loss to combine")
    for p in parts:
        if not np.isfinite(p.data).all():
            raise FloatingPointError("non-finite loss component")
    total = parts[0]
    for p in parts[1:]:
        total = ops.add(total, p)
    return total


def rank_candidates(scores) -> np.ndarray:
    """1-based ranks by descending score; ties go to the lower index."""
    s = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    order = np.argsort(-s, axis=-1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(1, s.shape[-1] + 1) + np.zeros_like(order), axis=-1)
    return ranks
