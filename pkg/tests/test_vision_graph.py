import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import linear, softmax
from rmk.numerics import Tensor, backward, ops
from rmk.vision_graph import RelationGCN, VisualGraphBuilder, construct_visual_graph, default_adjacency, gcn_purify


def _set_small(module, rng, scale=0.3):
    for p in module.parameters().values():
        p.data = rng.uniform(-scale, scale, p.shape)


def gcn_oracle(gcn, nodes, edges, adjacency, q):
    """Per-node, per-edge loop over the attention, message and update maps."""
    Wa, ba = gcn.attn.weight.data, gcn.attn.bias.data
    w = gcn.attn_vector.weight.data
    Wm, bm = gcn.message.weight.data, gcn.message.bias.data
    Wu, bu = gcn.update.weight.data, gcn.update.bias.data
    n, d = nodes.shape
    out = np.zeros((n, d))
    alphas = np.zeros((n, n))
    for i in range(n):
        nbrs = [j for j in range(n) if adjacency[i, j]]
        m = np.zeros(d)
        if nbrs:
            logits = []
            for j in nbrs:
                hidden = np.tanh(linear(np.concatenate([q, nodes[i], nodes[j], edges[i, j]]), Wa, ba))
                logits.append(float(linear(hidden, w)[0]))
            a = softmax(logits)
            for aj, j in zip(a, nbrs):
                alphas[i, j] = aj
                m = m + aj * np.tanh(linear(np.concatenate([nodes[j], edges[i, j]]), Wm, bm))
        out[i] = np.tanh(linear(np.concatenate([nodes[i], m]), Wu, bu))
    return out, alphas


def _random_graph(n, d, rng, adjacency=None):
    nodes = rng.standard_normal((n, d))
    edges = rng.standard_normal((n, n, d))
    if adjacency is None:
        adjacency = ~np.eye(n, dtype=bool)
    edges = edges * adjacency[..., None]
    return nodes, edges, adjacency


def _run(gcn, nodes, edges, adjacency, q):
    return gcn(Tensor(nodes[None]), Tensor(edges[None]), adjacency[None], Tensor(q[None]))


def test_three_node_gcn_matches_oracle():
    rng = np.random.default_rng(0)
    d = 3
    gcn = RelationGCN(d, rng)
    _set_small(gcn, rng)
    adjacency = np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]], dtype=bool)
    nodes, edges, adjacency = _random_graph(3, d, rng, adjacency)
    q = rng.standard_normal(d)
    got = _run(gcn, nodes, edges, adjacency, q)
    want, alphas = gcn_oracle(gcn, nodes, edges, adjacency, q)
    np.testing.assert_allclose(got.features.data[0], want, atol=1e-10, rtol=0)
    np.testing.assert_allclose(got.alpha[0], alphas, atol=1e-10, rtol=0)


def test_single_neighbour_gets_all_attention():
    rng = np.random.default_rng(1)
    gcn = RelationGCN(4, rng)
    adjacency = np.array([[0, 1], [1, 0]], dtype=bool)
    nodes, edges, adjacency = _random_graph(2, 4, rng, adjacency)
    got = _run(gcn, nodes, edges, adjacency, rng.standard_normal(4))
    np.testing.assert_allclose(got.alpha[0], [[0, 1], [1, 0]], atol=1e-15)


def test_identical_neighbours_split_evenly():
    rng = np.random.default_rng(2)
    gcn = RelationGCN(3, rng)
    nodes = rng.standard_normal((3, 3))
    nodes[2] = nodes[1]
    edges = np.zeros((3, 3, 3))
    edges[0, 1] = edges[0, 2] = rng.standard_normal(3)
    adjacency = np.array([[0, 1, 1], [0, 0, 0], [0, 0, 0]], dtype=bool)
    got = _run(gcn, nodes, edges, adjacency, rng.standard_normal(3))
    np.testing.assert_allclose(got.alpha[0, 0], [0, 0.5, 0.5], atol=1e-15)


def test_isolated_node_depends_only_on_itself():
    rng = np.random.default_rng(3)
    d = 3
    gcn = RelationGCN(d, rng)
    adjacency = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=bool)
    nodes, edges, adjacency = _random_graph(3, d, rng, adjacency)
    a = _run(gcn, nodes, edges, adjacency, rng.standard_normal(d)).features.data[0, 2]
    nodes2 = nodes.copy()
    nodes2[:2] += 5.0
    b = _run(gcn, nodes2, edges, adjacency, rng.standard_normal(d)).features.data[0, 2]
    np.testing.assert_array_equal(a, b)
    expected = np.tanh(linear(np.concatenate([nodes[2], np.zeros(d)]), gcn.update.weight.data, gcn.update.bias.data))
    np.testing.assert_allclose(a, expected, atol=1e-12)


def test_empty_mask_degenerates_to_self_transform():
    rng = np.random.default_rng(4)
    builder = VisualGraphBuilder(5, 3, rng)
    graph = construct_visual_graph(builder, rng.standard_normal((3, 5)), mask=np.zeros((3, 3), dtype=bool))
    np.testing.assert_array_equal(graph.edges.data, 0.0)
    gcn = RelationGCN(3, rng)
    out = gcn_purify(gcn, graph.nodes, graph.edges, graph.adjacency, Tensor(rng.standard_normal((1, 3))))
    assert np.all(np.isfinite(out.features.data))
    np.testing.assert_array_equal(out.alpha, 0.0)


def test_graph_sizes():
    rng = np.random.default_rng(5)
    builder = VisualGraphBuilder(4, 3, rng)
    one = construct_visual_graph(builder, rng.standard_normal((1, 4)))
    assert not one.adjacency.any()
    three = construct_visual_graph(builder, rng.standard_normal((3, 4)))
    assert three.adjacency.sum() == 6
    populated = np.abs(three.edges.data[0]).sum(axis=-1) > 0
    np.testing.assert_array_equal(populated, three.adjacency[0])


def test_learned_edges_from_node_pairs():
    rng = np.random.default_rng(6)
    builder = VisualGraphBuilder(4, 3, rng)
    feats = rng.standard_normal((2, 4))
    graph = construct_visual_graph(builder, feats)
    e = linear(feats[0], builder.node_proj.weight.data, builder.node_proj.bias.data)
    f = linear(feats[1], builder.node_proj.weight.data, builder.node_proj.bias.data)
    want = np.tanh(linear(np.concatenate([e, f]), builder.edge_from_nodes.weight.data, builder.edge_from_nodes.bias.data))
    np.testing.assert_allclose(graph.edges.data[0, 0, 1], want, atol=1e-12)


def test_provided_relation_features():
    rng = np.random.default_rng(7)
    builder = VisualGraphBuilder(4, 3, rng, d_r=2)
    graph = construct_visual_graph(builder, rng.standard_normal((2, 4)), rng.standard_normal((2, 2, 2)))
    assert graph.edges.shape == (1, 2, 2, 3)
    with pytest.raises(ValueError):
        construct_visual_graph(builder, rng.standard_normal((2, 4)), rng.standard_normal((3, 3, 2)))


def test_shape_errors():
    rng = np.random.default_rng(8)
    gcn = RelationGCN(3, rng)
    nodes, edges, adjacency = _random_graph(2, 3, rng)
    with pytest.raises(ValueError):
        gcn(Tensor(nodes[None]), Tensor(edges[None, :, :1]), adjacency[None], Tensor(np.zeros((1, 3))))
    with pytest.raises(ValueError):
        gcn(Tensor(nodes[None]), Tensor(edges[None]), adjacency[None], Tensor(np.zeros((1, 2))))


def test_question_flag_removes_question_dependence():
    rng = np.random.default_rng(9)
    gcn = RelationGCN(3, rng, use_question=False)
    nodes, edges, adjacency = _random_graph(3, 3, rng)
    a = _run(gcn, nodes, edges, adjacency, rng.standard_normal(3)).features.data
    b = _run(gcn, nodes, edges, adjacency, rng.standard_normal(3)).features.data
    np.testing.assert_array_equal(a, b)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**16))
def test_alpha_rows_normalised_and_permutation_equivariant(n, seed):
    rng = np.random.default_rng(seed)
    d = 3
    gcn = RelationGCN(d, np.random.default_rng(0))
    adjacency = rng.random((n, n)) < 0.6
    np.fill_diagonal(adjacency, False)
    nodes, edges, adjacency = _random_graph(n, d, rng, adjacency)
    q = rng.standard_normal(d)
    out = _run(gcn, nodes, edges, adjacency, q)
    sums = out.alpha[0].sum(axis=1)
    has = adjacency.any(axis=1)
    np.testing.assert_allclose(sums[has], 1.0, atol=1e-6)
    np.testing.assert_array_equal(out.alpha[0][~adjacency], 0.0)
    assert np.all(np.isfinite(out.features.data))

    perm = rng.permutation(n)
    p_out = _run(gcn, nodes[perm], edges[perm][:, perm], adjacency[perm][:, perm], q)
    np.testing.assert_allclose(p_out.features.data[0], out.features.data[0][perm], atol=1e-9)


def test_default_adjacency_respects_node_mask():
    adj = default_adjacency(np.array([[True, True, False]]))
    np.testing.assert_array_equal(adj[0], [[0, 1, 0], [1, 0, 0], [0, 0, 0]])


def test_gradients_reach_gcn_parameters():
    rng = np.random.default_rng(10)
    gcn = RelationGCN(3, rng)
    nodes, edges, adjacency = _random_graph(3, 3, rng)
    out = _run(gcn, nodes, edges, adjacency, rng.standard_normal(3))
    params = gcn.parameters()
    backward(ops.sum(out.features), list(params.values()))
    for name, p in params.items():
        assert np.abs(p.grad).sum() > 0, name
