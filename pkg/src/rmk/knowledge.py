"""Commonsense triple store, fact retrieval, and the two fact structures.

Sentence-level facts are fact descriptions ("subject relation object") run
through the fact encoder.  Graph-level facts have one node per distinct
entity string and an edge between the subject and object of every
retrieved triple, with edge feature ``tanh(W_r [relation_emb, description])``.
"""
from __future__ import annotations

import logging
import re
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .numerics import Linear, Module, Tensor, ops
from .text import tokenize

log = logging.getLogger(__name__)

STOP_WORDS = frozenset(
    "a an the is are was were be of at in on to for and or with by as it its this that there".split()
)


class TripleStoreError(ValueError):
    def __init__(self, path, problems: list[tuple[int, str]]):
        self.path = str(path)
        self.problems = problems
        detail = "; ".join(f"line {n}: {msg}" for n, msg in problems[:10])
        super().__init__(f"{path}: {len(problems)} malformed line(s): {detail}")


class RetrievalWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FactTriple:
    subject: str
    relation: str
    object: str

    def __post_init__(self):
        for name in ("subject", "relation", "object"):
            if not getattr(self, name).strip():
                raise ValueError(f"fact {name} must be non-empty")

    def description(self) -> str:
        return f"{self.subject} {relation_words(self.relation)} {self.object}"


def relation_words(relation: str) -> str:
    """``AtLocation`` -> ``at location``; already-spaced names pass through."""
    spaced = re.sub(r"(?<=[a-z0-9])(?=[A-Z])", " ", relation)
    return " ".join(tokenize(spaced))


@dataclass(frozen=True)
class ScoredFact:
    fact: FactTriple
    score: float
    store_index: int


class CandidateFactSet(list):
    """Retrieved facts in descending score order."""

    @property
    def facts(self) -> list[FactTriple]:
        return [s.fact for s in self]

    @property
    def scores(self) -> list[float]:
        return [s.score for s in self]


def load_triple_store(path: str | Path, strict: bool = True) -> list[FactTriple]:
    """Read ``subject<TAB>relation<TAB>object`` lines; ``#`` starts a comment.

    Duplicates are kept.  Malformed lines raise :class:`TripleStoreError`
    listing every offending line, or are logged and skipped when
    ``strict=False``.
    """
    triples: list[FactTriple] = []
    problems: list[tuple[int, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                problems.append((lineno, f"expected 3 tab-separated fields, found {len(fields)}"))
                continue
            try:
                triples.append(FactTriple(*(f.strip() for f in fields)))
            except ValueError as exc:
                problems.append((lineno, str(exc)))
    if problems:
        if strict:
            raise TripleStoreError(path, problems)
        for lineno, msg in problems:
            log.warning("%s:%d: %s", path, lineno, msg)
    return triples


def save_triple_store(path: str | Path, triples: Sequence[FactTriple]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# subject\trelation\tobject\n")
        for t in triples:
            fh.write(f"{t.subject}\t{t.relation}\t{t.object}\n")


class HashedWordVectors(Mapping[str, np.ndarray]):
    """Fixed pseudo-random unit vectors keyed by the token's CRC32.

    Stands in for frozen pretrained word vectors during retrieval: every
    token gets the same vector in every run and process.
    """

    def __init__(self, dim: int = 300, salt: int = 0, overrides: Mapping[str, np.ndarray] | None = None):
        self.dim = dim
        self.salt = salt
        self._cache: dict[str, np.ndarray] = {}
        self._overrides = dict(overrides or {})

    def __getitem__(self, token: str) -> np.ndarray:
        if token in self._overrides:
            return self._overrides[token]
        vec = self._cache.get(token)
        if vec is None:
            seed = zlib.crc32(token.encode("utf-8")) ^ (self.salt * 0x9E3779B1 & 0xFFFFFFFF)
            vec = np.random.default_rng(seed).standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            self._cache[token] = vec
        return vec

    def __contains__(self, token) -> bool:
        return isinstance(token, str) and bool(token)

    def __iter__(self):
        return iter(self._cache)

    def __len__(self) -> int:
        return len(self._cache)


def load_word_vectors(path: str | Path) -> dict[str, np.ndarray]:
    """word2vec text format: ``token v1 ... vd`` per line, optional header."""
    out: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            vec = np.array(parts[1:], dtype=np.float64)
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {vec.size}")
            out[parts[0]] = vec
    return out


def content_words(tokens: Sequence[str]) -> list[str]:
    return [t for t in tokens if t not in STOP_WORDS]


def _unit_rows(words: Sequence[str], vectors: Mapping[str, np.ndarray]) -> np.ndarray:
    rows = [np.asarray(vectors[w], dtype=np.float64) for w in words if w in vectors]
    if not rows:
        return np.zeros((0, 0))
    mat = np.stack(rows)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)


def score_fact(
    fact: FactTriple,
    caption_tokens: Sequence[str],
    concept_tokens: Sequence[str],
    vectors: Mapping[str, np.ndarray],
) -> float:
    """Mean over fact words of the best cosine similarity to any query word.

    Query words are the caption plus the detected visual concepts; stop
    words are ignored on both sides.  Returns 0 with a
    :class:`RetrievalWarning` when nothing resolves.
    """
    fact_words = content_words(tokenize(fact.description()))
    query = content_words(list(caption_tokens) + list(concept_tokens))
    F = _unit_rows(fact_words, vectors)
    Q = _unit_rows(query, vectors)
    if F.size == 0 or Q.size == 0:
        warnings.warn(f"no resolvable words for fact {fact}", RetrievalWarning, stacklevel=2)
        return 0.0
    return float((F @ Q.T).max(axis=1).mean())


class FactRetriever:
    """Scores a whole store against a caption/concept query in one shot."""

    def __init__(self, store: Sequence[FactTriple], vectors: Mapping[str, np.ndarray]):
        if not store:
            raise ValueError("triple store is empty")
        self.store = list(store)
        self.vectors = vectors
        vocab: dict[str, int] = {}
        fact_word_ids = []
        for f in self.store:
            ids = []
            for w in content_words(tokenize(f.description())):
                if w in vectors:
                    ids.append(vocab.setdefault(w, len(vocab)))
            fact_word_ids.append(ids)
        self._words = list(vocab)
        self._fact_word_ids = fact_word_ids
        # flattened layout for a vectorised per-fact mean
        self._counts = np.array([len(ids) for ids in fact_word_ids])
        self._has_words = self._counts > 0
        self._flat = np.array([i for ids in fact_word_ids for i in ids], dtype=np.int64)
        self._starts = np.concatenate([[0], np.cumsum(self._counts[self._has_words])[:-1]]).astype(np.int64)
        self._unit = _unit_rows(self._words, vectors) if self._words else np.zeros((0, 1))

    def scores(self, caption_tokens: Sequence[str], concept_tokens: Sequence[str]) -> np.ndarray:
        query = content_words(list(caption_tokens) + list(concept_tokens))
        Q = _unit_rows(query, self.vectors)
        out = np.zeros(len(self.store))
        if Q.size == 0 or not self._words:
            warnings.warn("no resolvable query words", RetrievalWarning, stacklevel=2)
            return out
        best = (self._unit @ Q.T).max(axis=1)
        sums = np.add.reduceat(best[self._flat], self._starts)
        out[self._has_words] = sums / self._counts[self._has_words]
        return out

    def retrieve(self, caption_tokens: Sequence[str], concept_tokens: Sequence[str], k: int = 100) -> CandidateFactSet:
        if k <= 0:
            raise ValueError("k must be positive")
        s = self.scores(caption_tokens, concept_tokens)
        order = np.argsort(-s, kind="stable")[:k]
        return CandidateFactSet(ScoredFact(self.store[i], float(s[i]), int(i)) for i in order)


def retrieve_candidates(
    store: Sequence[FactTriple],
    caption: str | Sequence[str],
    concepts: Sequence[str],
    k: int = 100,
    vectors: Mapping[str, np.ndarray] | None = None,
) -> CandidateFactSet:
    """Top-``k`` facts by :func:`score_fact`; ties keep store order."""
    caption_tokens = tokenize(caption) if isinstance(caption, str) else list(caption)
    concept_tokens = [t for c in concepts for t in tokenize(c)]
    return FactRetriever(store, vectors if vectors is not None else HashedWordVectors()).retrieve(caption_tokens, concept_tokens, k)


# ---------------------------------------------------------------------------
# fact structures
# ---------------------------------------------------------------------------


@dataclass
class FactGraphLayout:
    """Index structure of the fact graph for one candidate set.

    ``edge_fact[i, j]`` is the candidate index whose triple connects entity
    i and j (the best-scoring one when several do); ``edge_relation`` holds
    its relation id.  Both are meaningful only where ``adjacency`` is true.
    """

    entities: list[str]
    adjacency: np.ndarray
    edge_fact: np.ndarray
    edge_relation: np.ndarray
    fact_entities: list[tuple[int, int]] = field(default_factory=list)


class RelationIndex:
    """Relation string -> id; id 0 is reserved for 'no edge'."""

    def __init__(self, relations: Sequence[str] = ()):
        self.names = ["<none>"]
        self._ids: dict[str, int] = {}
        for r in relations:
            self.add(r)

    def add(self, relation: str) -> int:
        if relation not in self._ids:
            self._ids[relation] = len(self.names)
            self.names.append(relation)
        return self._ids[relation]

    def id(self, relation: str) -> int:
        return self._ids.get(relation, 0)

    def __len__(self) -> int:
        return len(self.names)


def fact_graph_layout(facts: Sequence[FactTriple], relations: RelationIndex) -> FactGraphLayout:
    if not facts:
        raise ValueError("candidate fact set is empty")
    ent_ids: dict[str, int] = {}
    pairs = []
    for f in facts:
        s = ent_ids.setdefault(f.subject, len(ent_ids))
        o = ent_ids.setdefault(f.object, len(ent_ids))
        pairs.append((s, o))
    M = len(ent_ids)
    adjacency = np.zeros((M, M), dtype=bool)
    edge_fact = np.zeros((M, M), dtype=np.int64)
    edge_rel = np.zeros((M, M), dtype=np.int64)
    for k, (s, o) in enumerate(pairs):
        if s == o or adjacency[s, o]:
            continue
        for i, j in ((s, o), (o, s)):
            adjacency[i, j] = True
            edge_fact[i, j] = k
            edge_rel[i, j] = relations.id(facts[k].relation)
    return FactGraphLayout(list(ent_ids), adjacency, edge_fact, edge_rel, pairs)


@dataclass
class SentenceFactSet:
    features: Tensor  # [B, K, d_h]
    mask: np.ndarray  # [B, K]


@dataclass
class FactGraph:
    nodes: Tensor  # [B, M, d_h]
    edges: Tensor  # [B, M, M, d_h]
    adjacency: np.ndarray  # [B, M, M]
    node_mask: np.ndarray  # [B, M]


class FactGraphEncoder(Module):
    """Learned relation embeddings and the edge projection ``W_r``."""

    def __init__(self, n_relations: int, d_h: int, rng: np.random.Generator):
        self.relation_embedding = Tensor(rng.uniform(-0.08, 0.08, (n_relations, d_h)), requires_grad=True)
        self.edge = Linear(2 * d_h, d_h, rng)
        self.d_h = d_h

    def __call__(
        self,
        entity_features: Tensor,
        sentence_features: Tensor,
        adjacency: np.ndarray,
        edge_fact: np.ndarray,
        edge_relation: np.ndarray,
        node_mask: np.ndarray,
    ) -> FactGraph:
        B, M = adjacency.shape[:2]
        K = sentence_features.shape[1]
        d = self.d_h
        rel = ops.embedding(self.relation_embedding, edge_relation)
        flat = ops.reshape(sentence_features, (B * K, d))
        rows = edge_fact + (np.arange(B) * K)[:, None, None]
        desc = ops.embedding(flat, rows)
        edges = ops.tanh(self.edge(ops.concat([rel, desc], axis=-1)))
        keep = np.repeat(adjacency[..., None].astype(np.float64), d, axis=-1)
        edges = ops.mul(edges, Tensor(keep))
        return FactGraph(entity_features, edges, adjacency, node_mask)


def build_sentence_facts(cands: CandidateFactSet, text, max_len: int = 20) -> SentenceFactSet:
    """Encode candidate fact descriptions, preserving candidate order."""
    if not cands:
        raise ValueError("candidate fact set is empty")
    feats = text.encode_texts([s.fact.description() for s in cands], "fact", max_len)
    return SentenceFactSet(ops.reshape(feats, (1,) + feats.shape), np.ones((1, len(cands)), dtype=bool))


def build_fact_graph(
    cands: CandidateFactSet,
    text,
    encoder: FactGraphEncoder,
    relations: RelationIndex,
    max_len: int = 20,
) -> tuple[FactGraph, FactGraphLayout]:
    """Single-instance fact graph; the model uses the batched path directly."""
    facts = cands.facts
    layout = fact_graph_layout(facts, relations)
    sent = build_sentence_facts(cands, text, max_len)
    nodes = text.encode_texts(layout.entities, "fact", max_len)
    nodes = ops.reshape(nodes, (1,) + nodes.shape)
    graph = encoder(
        nodes,
        sent.features,
        layout.adjacency[None],
        layout.edge_fact[None],
        layout.edge_relation[None],
        np.ones((1, len(layout.entities)), dtype=bool),
    )
    return graph, layout
