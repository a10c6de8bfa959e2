"""The assembled model: instance featurisation, batching and the forward pass."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import DialogInstance, ImageFeatures
from .fusion import (
    FusionBlock,
    GenerativeDecoder,
    discriminative_scores,
    generative_loss,
    generative_scores,
    multitask_loss,
    npair_loss,
)
from .knowledge import (
    CandidateFactSet,
    FactGraphEncoder,
    FactGraphLayout,
    FactRetriever,
    FactTriple,
    HashedWordVectors,
    RelationIndex,
    fact_graph_layout,
)
from .numerics import Module, Tensor, ops
from .reasoning import AwareAggregator, BranchOutput, CrossGraphInjection, HistoryFactModule
from .text import TextEncoder, Vocabulary, pad_or_truncate, tokenize
from .vision_graph import RelationGCN, VisualGraphBuilder, default_adjacency

MODES = ("disc", "gen", "both")


@dataclass
class ModelConfig:
    d_emb: int = 300
    d_h: int = 512
    heads: int = 4
    d_v: int = 2048
    k_facts: int = 100
    max_len: int = 20
    dropout: float = 0.5
    mode: str = "both"
    share_encoders: bool = False
    freeze_embeddings: bool = False
    question_in_gcn: bool = True
    gen_length_norm: bool = False
    sentence_facts: bool = True
    graph_facts: bool = True
    purification: bool = True
    injection: bool = True
    aggregator: bool = True

    def __post_init__(self):
        for name in ("d_emb", "d_h", "heads", "d_v", "k_facts", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_h % self.heads:
            raise ValueError(f"d_h={self.d_h} must be divisible by heads={self.heads}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def as_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# featurisation
# ---------------------------------------------------------------------------


@dataclass
class Example:
    instance: DialogInstance
    question: list[int]
    history: list[list[int]]
    facts: CandidateFactSet
    fact_ids: list[list[int]]
    layout: FactGraphLayout
    entity_ids: list[list[int]]
    objects: np.ndarray
    candidates: list[list[int]]
    gt_index: int
    relevance: np.ndarray | None


@dataclass
class Batch:
    examples: list[Example]
    question: np.ndarray  # [B, L]
    history: np.ndarray  # [B, T, L]
    history_mask: np.ndarray  # [B, T]
    facts: np.ndarray  # [B, K, L]
    fact_mask: np.ndarray  # [B, K]
    entities: np.ndarray  # [B, M, L]
    entity_mask: np.ndarray  # [B, M]
    adjacency: np.ndarray  # [B, M, M]
    edge_fact: np.ndarray  # [B, M, M]
    edge_relation: np.ndarray  # [B, M, M]
    objects: np.ndarray  # [B, N, d_v]
    object_mask: np.ndarray  # [B, N]
    candidates: np.ndarray  # [B, C, L]
    gt_index: np.ndarray  # [B]

    @property
    def size(self) -> int:
        return len(self.examples)


class KnowledgeBase:
    """Triple store plus the frozen word vectors used to retrieve from it."""

    def __init__(self, triples: Sequence[FactTriple], vectors: Mapping[str, np.ndarray] | None = None):
        self.triples = list(triples)
        self.vectors = vectors if vectors is not None else HashedWordVectors()
        self.retriever = FactRetriever(self.triples, self.vectors)
        self.relations = RelationIndex(sorted({t.relation for t in self.triples}))

    def retrieve(self, caption: str, concepts: Sequence[str], k: int) -> CandidateFactSet:
        concept_tokens = [t for c in concepts for t in tokenize(c)]
        return self.retriever.retrieve(tokenize(caption), concept_tokens, k)


class Featurizer:
    def __init__(
        self,
        vocab: Vocabulary,
        kb: KnowledgeBase,
        features: Mapping[str, ImageFeatures],
        config: ModelConfig,
        max_objects: int | None = None,
    ):
        self.vocab = vocab
        self.kb = kb
        self.features = features
        self.config = config
        self.max_objects = max_objects

    def _ids(self, text: str) -> list[int]:
        ids = self.vocab.encode(text)[: self.config.max_len]
        return ids or [self.vocab.id("<unk>")]

    def __call__(self, inst: DialogInstance) -> Example:
        try:
            img = self.features[inst.image_id]
        except KeyError:
            raise KeyError(f"no visual features for image {inst.image_id!r}") from None
        if img.features.shape[1] != self.config.d_v:
            raise ValueError(f"image {inst.image_id}: feature size {img.features.shape[1]} != d_v {self.config.d_v}")
        facts = self.kb.retrieve(inst.caption, img.concepts, self.config.k_facts)
        layout = fact_graph_layout(facts.facts, self.kb.relations)
        return Example(
            instance=inst,
            question=self._ids(inst.question),
            history=[self._ids(s) for s in inst.history_sentences()],
            facts=facts,
            fact_ids=[self._ids(f.description()) for f in facts.facts],
            layout=layout,
            entity_ids=[self._ids(e) for e in layout.entities],
            objects=img.features[: self.max_objects],
            candidates=[self._ids(c) for c in inst.candidates],
            gt_index=inst.gt_index,
            relevance=None if inst.relevance is None else np.asarray(inst.relevance),
        )


def _pad_nested(seqs: Sequence[Sequence[Sequence[int]]], max_len: int) -> tuple[np.ndarray, np.ndarray]:
    n = max(len(s) for s in seqs)
    width = max(min(len(x), max_len) for s in seqs for x in s)
    out = np.zeros((len(seqs), n, width), dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for b, s in enumerate(seqs):
        for i, x in enumerate(s):
            out[b, i] = pad_or_truncate(x, max_len)[:width]
            mask[b, i] = True
    return out, mask


def collate(examples: Sequence[Example], max_len: int) -> Batch:
    if not examples:
        raise ValueError("empty batch")
    B = len(examples)
    q, _ = _pad_nested([[e.question] for e in examples], max_len)
    hist, hmask = _pad_nested([e.history for e in examples], max_len)
    facts, fmask = _pad_nested([e.fact_ids for e in examples], max_len)
    ents, emask = _pad_nested([e.entity_ids for e in examples], max_len)
    M = ents.shape[1]
    adj = np.zeros((B, M, M), dtype=bool)
    efact = np.zeros((B, M, M), dtype=np.int64)
    erel = np.zeros((B, M, M), dtype=np.int64)
    for b, e in enumerate(examples):
        m = len(e.layout.entities)
        adj[b, :m, :m] = e.layout.adjacency
        efact[b, :m, :m] = e.layout.edge_fact
        erel[b, :m, :m] = e.layout.edge_relation
    N = max(e.objects.shape[0] for e in examples)
    d_v = examples[0].objects.shape[1]
    objs = np.zeros((B, N, d_v))
    omask = np.zeros((B, N), dtype=bool)
    for b, e in enumerate(examples):
        objs[b, : e.objects.shape[0]] = e.objects
        omask[b, : e.objects.shape[0]] = True
    C = {len(e.candidates) for e in examples}
    if len(C) != 1:
        raise ValueError("all instances in a batch need the same number of candidates")
    cands, _ = _pad_nested([e.candidates for e in examples], max_len)
    return Batch(
        list(examples), q[:, 0], hist, hmask, facts, fmask, ents, emask, adj, efact, erel,
        objs, omask, cands, np.array([e.gt_index for e in examples], dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------


@dataclass
class ForwardOutput:
    joint: Tensor
    disc_scores: Tensor | None = None
    gen_scores: Tensor | None = None
    disc_loss: Tensor | None = None
    gen_loss: Tensor | None = None
    loss: Tensor | None = None
    attention: dict[str, np.ndarray | None] = field(default_factory=dict)


class VisionFactModule(Module):
    """Graph-level branch: purify both graphs, cross-inject, aggregate facts
    onto each visual node."""

    def __init__(self, d_h: int, rng: np.random.Generator, use_question: bool, aggregate_attention: bool):
        self.gcn_vision = RelationGCN(d_h, rng, use_question)
        self.gcn_facts = RelationGCN(d_h, rng, use_question)
        self.inject_vision = CrossGraphInjection(d_h, rng)
        self.inject_facts = CrossGraphInjection(d_h, rng)
        self.aggregate = AwareAggregator(d_h, rng, attend=aggregate_attention)

    def __call__(self, question, vis, fact_graph, purification=True, injection=True) -> tuple[BranchOutput, dict]:
        extra: dict[str, np.ndarray | None] = {}
        v = vis.nodes
        if purification:
            pv = self.gcn_vision(vis.nodes, vis.edges, vis.adjacency, question)
            v, extra["alpha_vision"] = pv.features, pv.alpha
        out = BranchOutput(features=v)
        if fact_graph is None:
            out.features = self.aggregate.without_facts(v)
            return out, extra
        f = fact_graph.nodes
        if purification:
            pf = self.gcn_facts(fact_graph.nodes, fact_graph.edges, fact_graph.adjacency, question)
            f, extra["alpha_facts"] = pf.features, pf.alpha
        if injection:
            iv = self.inject_vision(question, v, f, fact_graph.node_mask)
            jf = self.inject_facts(question, f, v, vis.node_mask)
            v, f = iv.features, jf.features
            out.gamma_to_targets, out.gamma_to_facts = iv.gamma, jf.gamma
        agg = self.aggregate(question, f, v, fact_graph.node_mask)
        out.features, out.delta = agg.features, agg.delta
        return out, extra


class RMKModel(Module):
    def __init__(self, config: ModelConfig, vocab: Vocabulary, n_relations: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        d = config.d_h
        self.config = config
        self.vocab = vocab
        self.text = TextEncoder(vocab, config.d_emb, d, rng, share=config.share_encoders)
        self.fact_graph = FactGraphEncoder(n_relations, d, rng)
        self.visual = VisualGraphBuilder(config.d_v, d, rng)
        self.vision_branch = VisionFactModule(d, rng, config.question_in_gcn, config.aggregator)
        self.history_branch = HistoryFactModule(d, rng, aggregate_attention=config.aggregator)
        self.fusion = FusionBlock(d, config.heads, rng, dropout=config.dropout)
        self.generator = GenerativeDecoder(len(vocab), config.d_emb, d, rng)

    def trainable_parameters(self) -> dict[str, Tensor]:
        """Parameters the optimiser updates; a frozen word-embedding table is left out."""
        params = self.parameters()
        if self.config.freeze_embeddings:
            params.pop("text.embedding.weight")
        return params

    def _drop(self, x: Tensor, training: bool, rng) -> Tensor:
        return ops.dropout(x, self.config.dropout, training, rng)

    def _encode_sets(self, ids: np.ndarray, role: str) -> Tensor:
        B, n, L = ids.shape
        flat = self.text.encode_ids(ids.reshape(B * n, L), role)
        return ops.reshape(flat, (B, n, self.config.d_h))

    def forward(self, batch: Batch, training: bool = False, rng: np.random.Generator | None = None, scores: bool = True) -> ForwardOutput:
        cfg = self.config
        d = cfg.d_h
        B = batch.size
        question = self._drop(self.text.encode_ids(batch.question, "question"), training, rng)
        history = self._drop(self._encode_sets(batch.history, "history"), training, rng)
        use_sentence = cfg.sentence_facts
        use_graph = cfg.graph_facts
        sentences = None
        if use_sentence or use_graph:
            sentences = self._drop(self._encode_sets(batch.facts, "fact"), training, rng)

        vis = self.visual(Tensor(batch.objects), None, default_adjacency(batch.object_mask), batch.object_mask)
        vis.nodes = self._drop(vis.nodes, training, rng)
        fact_graph = None
        if use_graph:
            entities = self._drop(self._encode_sets(batch.entities, "fact"), training, rng)
            fact_graph = self.fact_graph(
                entities, sentences, batch.adjacency, batch.edge_fact, batch.edge_relation, batch.entity_mask
            )
        vout, extra = self.vision_branch(question, vis, fact_graph, cfg.purification, cfg.injection)
        hout = self.history_branch(
            question,
            history,
            batch.history_mask,
            sentences if use_sentence else None,
            batch.fact_mask if use_sentence else None,
            cfg.purification,
            cfg.injection,
        )
        fused = self.fusion(question, vout.features, batch.object_mask, hout.features, batch.history_mask, training, rng)
        joint = fused.joint
        out = ForwardOutput(joint)
        out.attention = {
            "gamma_vision_from_facts": vout.gamma_to_targets,
            "gamma_facts_from_vision": vout.gamma_to_facts,
            "delta_graph": vout.delta,
            "gamma_history_from_facts": hout.gamma_to_targets,
            "gamma_facts_from_history": hout.gamma_to_facts,
            "delta_sentence": hout.delta,
            "eta_history": hout.eta_targets,
            "eta_facts": hout.eta_facts,
            "fusion_vision": fused.attention["vision"],
            "fusion_history": fused.attention["history"],
            **extra,
        }

        if cfg.mode in ("disc", "both"):
            cands = self._encode_sets(batch.candidates, "answer")
            out.disc_scores = discriminative_scores(joint, cands)
            out.disc_loss = npair_loss(out.disc_scores, batch.gt_index)
        if cfg.mode in ("gen", "both"):
            gt_ids = batch.candidates[np.arange(B), batch.gt_index]
            out.gen_loss = generative_loss(self.generator, joint, gt_ids, self.text.embedding)
            if scores:
                out.gen_scores = generative_scores(
                    self.generator, joint, batch.candidates, self.text.embedding, cfg.gen_length_norm
                )
        out.loss = multitask_loss(out.disc_loss, out.gen_loss)
        return out
