"""Visual graph construction and relation-aware GCN purification.

All tensors carry a leading batch axis B.  One purification layer:

    a_ij  = w . tanh(W_a [q, e_i, e_j, r_ij])        (neighbours j only)
    alpha = masked softmax_j(a_ij)
    m_i   = sum_j alpha_ij tanh(W_m [e_j, r_ij])
    e~_i  = tanh(W_u [e_i, m_i])

A node without neighbours receives m_i = 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Linear, Module, Tensor, ops


@dataclass
class VisualGraph:
    nodes: Tensor  # [B, N, d_h]
    edges: Tensor  # [B, N, N, d_h]
    adjacency: np.ndarray  # [B, N, N] bool, diagonal false
    node_mask: np.ndarray  # [B, N]


@dataclass
class PurifiedNodes:
    features: Tensor  # [B, n, d_h]
    alpha: np.ndarray  # [B, n, n] neighbour attention


def pair_features(nodes: Tensor) -> tuple[Tensor, Tensor]:
    """Broadcast [B, n, d] node features to ([B,n,n,d] as e_i, [B,n,n,d] as e_j)."""
    B, n, d = nodes.shape
    ei = ops.broadcast_to(ops.reshape(nodes, (B, n, 1, d)), (B, n, n, d))
    ej = ops.broadcast_to(ops.reshape(nodes, (B, 1, n, d)), (B, n, n, d))
    return ei, ej


def default_adjacency(node_mask: np.ndarray) -> np.ndarray:
    node_mask = np.asarray(node_mask, dtype=bool)
    n = node_mask.shape[-1]
    adj = node_mask[..., :, None] & node_mask[..., None, :]
    return adj & ~np.eye(n, dtype=bool)


class VisualGraphBuilder(Module):
    """Projects detector features to d_h and supplies relation edges.

    Given relation features they are projected (``tanh`` of a linear map);
    otherwise edges are learned from node pairs, ``tanh(W_e [e_i, e_j])``.
    """

    def __init__(self, d_v: int, d_h: int, rng: np.random.Generator, d_r: int | None = None):
        self.node_proj = Linear(d_v, d_h, rng)
        self.edge_from_nodes = Linear(2 * d_h, d_h, rng)
        self.edge_from_relations = Linear(d_r, d_h, rng) if d_r else None
        self.d_h = d_h

    def __call__(
        self,
        object_features: Tensor,
        relation_features: Tensor | None = None,
        adjacency: np.ndarray | None = None,
        node_mask: np.ndarray | None = None,
    ) -> VisualGraph:
        if object_features.ndim != 3:
            raise ValueError(f"object features must be [B, N, d_v], got {object_features.shape}")
        B, N, _ = object_features.shape
        if node_mask is None:
            node_mask = np.ones((B, N), dtype=bool)
        if node_mask.shape != (B, N):
            raise ValueError(f"node mask shape {node_mask.shape} inconsistent with N={N}")
        if adjacency is None:
            adjacency = default_adjacency(node_mask)
        adjacency = np.asarray(adjacency, dtype=bool)
        if adjacency.shape != (B, N, N):
            raise ValueError(f"adjacency shape {adjacency.shape} inconsistent with N={N}")
        adjacency = adjacency & ~np.eye(N, dtype=bool)
        nodes = self.node_proj(object_features)
        if relation_features is not None:
            if relation_features.shape[:3] != (B, N, N):
                raise ValueError(f"relation features {relation_features.shape} inconsistent with N={N}")
            if self.edge_from_relations is None:
                raise ValueError("builder was created without a relation feature size")
            edges = ops.tanh(self.edge_from_relations(relation_features))
        else:
            ei, ej = pair_features(nodes)
            edges = ops.tanh(self.edge_from_nodes(ops.concat([ei, ej], axis=-1)))
        keep = np.repeat(adjacency[..., None].astype(np.float64), self.d_h, axis=-1)
        return VisualGraph(nodes, ops.mul(edges, Tensor(keep)), adjacency, node_mask)


class RelationGCN(Module):
    def __init__(self, d_h: int, rng: np.random.Generator, use_question: bool = True):
        self.attn = Linear(4 * d_h, d_h, rng)
        self.attn_vector = Linear(d_h, 1, rng, bias=False)
        self.message = Linear(2 * d_h, d_h, rng)
        self.update = Linear(2 * d_h, d_h, rng)
        self.use_question = use_question
        self.d_h = d_h

    def __call__(self, nodes: Tensor, edges: Tensor, adjacency: np.ndarray, question: Tensor) -> PurifiedNodes:
        B, n, d = nodes.shape
        if edges.shape != (B, n, n, d) or adjacency.shape != (B, n, n):
            raise ValueError(f"edges {edges.shape} / adjacency {adjacency.shape} do not match nodes {nodes.shape}")
        if question.shape != (B, d):
            raise ValueError(f"question must be [B, {d}], got {question.shape}")
        ei, ej = pair_features(nodes)
        q = ops.broadcast_to(ops.reshape(question, (B, 1, 1, d)), (B, n, n, d))
        if not self.use_question:
            q = Tensor(np.zeros((B, n, n, d)))
        logits = self.attn_vector(ops.tanh(self.attn(ops.concat([q, ei, ej, edges], axis=-1))))
        alpha = ops.softmax(ops.reshape(logits, (B, n, n)), axis=-1, mask=adjacency)
        msgs = ops.tanh(self.message(ops.concat([ej, edges], axis=-1)))  # [B, n, n, d]
        m = ops.matmul(ops.reshape(alpha, (B * n, 1, n)), ops.reshape(msgs, (B * n, n, d)))
        m = ops.reshape(m, (B, n, d))
        out = ops.tanh(self.update(ops.concat([nodes, m], axis=-1)))
        return PurifiedNodes(out, alpha.data)


def construct_visual_graph(builder: VisualGraphBuilder, object_features, relation_features=None, mask=None) -> VisualGraph:
    """Unbatched convenience wrapper: [N, d_v] features -> graph with B = 1."""
    feats = object_features if isinstance(object_features, Tensor) else Tensor(object_features)
    if feats.ndim == 2:
        feats = ops.reshape(feats, (1,) + feats.shape)
    rel = None
    if relation_features is not None:
        rel = relation_features if isinstance(relation_features, Tensor) else Tensor(relation_features)
        if rel.ndim == 3:
            rel = ops.reshape(rel, (1,) + rel.shape)
    adj = None if mask is None else np.asarray(mask, dtype=bool).reshape((1,) + np.shape(mask)[-2:])
    return builder(feats, rel, adj)


def gcn_purify(gcn: RelationGCN, nodes: Tensor, edges: Tensor, mask: np.ndarray, question: Tensor) -> PurifiedNodes:
    return gcn(nodes, edges, np.asarray(mask, dtype=bool), question)
