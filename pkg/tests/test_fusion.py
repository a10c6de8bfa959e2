import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import linear, sigmoid, softmax
from rmk.fusion import (
    CrossAttention,
    FusionBlock,
    GenerativeDecoder,
    discriminative_scores,
    fuse,
    generative_loss,
    generative_scores,
    multitask_loss,
    npair_loss,
    rank_candidates,
)
from rmk.numerics import Tensor, backward, ops
from rmk.text import BOS, EmbeddingTable


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64))


# -- attention and fusion ---------------------------------------------------


def test_single_head_attention_matches_unrolled_oracle():
    rng = np.random.default_rng(0)
    att = CrossAttention(2, 1, rng)
    q, items = rng.standard_normal(2), rng.standard_normal((2, 2))
    ctx, attn = att(T(q[None]), T(items[None]), np.ones((1, 2), dtype=bool))
    qq = linear(q, att.query.weight.data, att.query.bias.data)
    keys = [linear(x, att.key.weight.data) for x in items]
    vals = [linear(x, att.value.weight.data, att.value.bias.data) for x in items]
    a = softmax([float(qq @ k) / math.sqrt(2) for k in keys])
    want = a[0] * vals[0] + a[1] * vals[1]
    np.testing.assert_allclose(attn.data[0, 0], a, atol=1e-12)
    np.testing.assert_allclose(ctx.data[0], want, atol=1e-12)


def test_heads_split_features():
    rng = np.random.default_rng(1)
    att = CrossAttention(4, 2, rng)
    q, items = rng.standard_normal(4), rng.standard_normal((3, 4))
    ctx, attn = att(T(q[None]), T(items[None]), np.ones((1, 3), dtype=bool))
    assert attn.shape == (1, 2, 3)
    qq = linear(q, att.query.weight.data, att.query.bias.data)
    keys = np.array([linear(x, att.key.weight.data) for x in items])
    vals = np.array([linear(x, att.value.weight.data, att.value.bias.data) for x in items])
    for h in range(2):
        sl = slice(2 * h, 2 * h + 2)
        a = softmax([float(qq[sl] @ k[sl]) / math.sqrt(2) for k in keys])
        np.testing.assert_allclose(ctx.data[0, sl], np.array(a) @ vals[:, sl], atol=1e-12)


def test_singleton_sources_get_full_attention():
    rng = np.random.default_rng(2)
    block = FusionBlock(4, 2, rng)
    out = fuse(block, T(rng.standard_normal((1, 4))), T(rng.standard_normal((1, 1, 4))), T(rng.standard_normal((1, 1, 4))))
    np.testing.assert_array_equal(out.attention["vision"], np.ones((1, 2, 1)))
    np.testing.assert_array_equal(out.attention["history"], np.ones((1, 2, 1)))
    assert out.joint.shape == (1, 4)


def test_fusion_block_matches_manual_composition():
    rng = np.random.default_rng(3)
    block = FusionBlock(4, 2, rng)
    q = rng.standard_normal((1, 4))
    v, h = rng.standard_normal((1, 3, 4)), rng.standard_normal((1, 2, 4))
    out = fuse(block, T(q), T(v), T(h))
    cv, _ = block.vision_attn(T(q), T(v), np.ones((1, 3), dtype=bool))
    ch, _ = block.history_attn(T(q), T(h), np.ones((1, 2), dtype=bool))

    def ln(x):
        mu = x.mean()
        return (x - mu) / np.sqrt(((x - mu) ** 2).mean() + 1e-5)

    x = ln(q[0] + linear(np.concatenate([cv.data[0], ch.data[0]]), block.proj.weight.data, block.proj.bias.data))
    hid = np.maximum(linear(x, block.ff_in.weight.data, block.ff_in.bias.data), 0)
    want = ln(x + linear(hid, block.ff_out.weight.data, block.ff_out.bias.data))
    np.testing.assert_allclose(out.joint.data[0], want, atol=1e-10)


def test_fusion_invariant_to_item_order():
    rng = np.random.default_rng(4)
    block = FusionBlock(4, 2, rng)
    q, v, h = rng.standard_normal((1, 4)), rng.standard_normal((1, 5, 4)), rng.standard_normal((1, 3, 4))
    a = fuse(block, T(q), T(v), T(h)).joint.data
    b = fuse(block, T(q), T(v[:, ::-1]), T(h[:, [2, 0, 1]])).joint.data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_masked_items_do_not_matter():
    rng = np.random.default_rng(5)
    block = FusionBlock(4, 2, rng)
    q, v, h = rng.standard_normal((1, 4)), rng.standard_normal((1, 3, 4)), rng.standard_normal((1, 2, 4))
    vm = np.array([[True, True, False]])
    a = fuse(block, T(q), T(v), T(h), vision_mask=vm)
    v2 = v.copy()
    v2[0, 2] = 100.0
    b = fuse(block, T(q), T(v2), T(h), vision_mask=vm)
    np.testing.assert_array_equal(a.joint.data, b.joint.data)
    np.testing.assert_array_equal(a.attention["vision"][..., 2], 0.0)


def test_fusion_errors():
    rng = np.random.default_rng(6)
    with pytest.raises(ValueError):
        CrossAttention(5, 2, rng)
    block = FusionBlock(4, 2, rng)
    with pytest.raises(ValueError):
        fuse(block, T(np.zeros((1, 4))), T(np.zeros((1, 0, 4))), T(np.zeros((1, 1, 4))))
    with pytest.raises(ValueError):
        fuse(block, T(np.zeros((1, 4))), T(np.zeros((1, 2, 3))), T(np.zeros((1, 1, 4))))


# -- discriminative decoder -------------------------------------------------


def test_orthonormal_candidates_closed_form_loss():
    cands = np.eye(100)[None]
    joint = cands[:, 37]
    scores = discriminative_scores(T(joint), T(cands))
    expected_scores = np.zeros(100)
    expected_scores[37] = 1.0
    np.testing.assert_array_equal(scores.data[0], expected_scores)
    loss = npair_loss(scores, [37])
    assert loss.data == pytest.approx(-math.log(math.e / (math.e + 99)), abs=1e-12)


def test_identical_candidates_give_log_n_loss():
    cands = np.tile(np.random.default_rng(7).standard_normal(6), (1, 100, 1))
    scores = discriminative_scores(T(np.ones((1, 6))), T(cands))
    assert npair_loss(scores, [3]).data == pytest.approx(math.log(100), abs=1e-12)


def test_npair_loss_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(8)
    s = Tensor(rng.standard_normal((2, 5)), requires_grad=True)
    backward(npair_loss(s, [1, 4]), [s])
    p = np.exp(s.data) / np.exp(s.data).sum(axis=1, keepdims=True)
    onehot = np.zeros((2, 5))
    onehot[0, 1] = onehot[1, 4] = 1
    np.testing.assert_allclose(s.grad, (p - onehot) / 2, atol=1e-14)


def test_npair_loss_rejects_bad_index():
    with pytest.raises(IndexError):
        npair_loss(T(np.zeros((1, 3))), [3])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**16))
def test_candidate_permutation_permutes_scores(C, seed):
    rng = np.random.default_rng(seed)
    joint, cands = rng.standard_normal((1, 4)), rng.standard_normal((1, C, 4))
    perm = rng.permutation(C)
    a = discriminative_scores(T(joint), T(cands)).data[0]
    b = discriminative_scores(T(joint), T(cands[:, perm])).data[0]
    np.testing.assert_array_equal(a[perm], b)


# -- generative decoder -----------------------------------------------------


def _decoder(V=10, d_emb=3, d_h=4, seed=0):
    rng = np.random.default_rng(seed)
    return GenerativeDecoder(V, d_emb, d_h, rng), EmbeddingTable(V, d_emb, rng)


def test_uniform_output_scores_length_times_log_inverse_v():
    dec, emb = _decoder()
    dec.output.weight.data[:] = 0.0
    dec.output.bias.data[:] = 0.0
    cands = np.array([[[3, 4, 0], [5, 0, 0], [6, 7, 8]]])
    scores = generative_scores(dec, T(np.random.default_rng(1).standard_normal((1, 4))), cands, emb)
    np.testing.assert_allclose(scores.data[0], [2 * math.log(0.1), math.log(0.1), 3 * math.log(0.1)], atol=1e-12)


def test_two_token_answer_matches_manual_product():
    dec, emb = _decoder(seed=2)
    rng = np.random.default_rng(3)
    for p in dec.parameters().values():
        p.data = rng.uniform(-0.5, 0.5, p.shape)
    joint = rng.standard_normal(4)
    answer = [7, 4]
    W_x, W_h, b = dec.lstm.w_x.data, dec.lstm.w_h.data, dec.lstm.b.data
    h, c = joint.copy(), np.zeros(4)
    total = 0.0
    for prev, tok in zip([BOS] + answer[:-1], answer):
        z = emb.weight.data[prev] @ W_x + h @ W_h + b
        i, f, g, o = sigmoid(z[:4]), sigmoid(z[4:8]), np.tanh(z[8:12]), sigmoid(z[12:])
        c = f * c + i * g
        h = o * np.tanh(c)
        probs = softmax(list(linear(h, dec.output.weight.data, dec.output.bias.data)))
        total += math.log(probs[tok])
    got = dec.sequence_logprob(T(joint[None]), np.array([answer]), emb)
    assert got.data[0] == pytest.approx(total, abs=1e-12)
    assert generative_loss(dec, T(joint[None]), np.array([answer]), emb).data == pytest.approx(-total, abs=1e-12)


def test_trailing_padding_does_not_change_score():
    dec, emb = _decoder(seed=4)
    joint = T(np.random.default_rng(5).standard_normal((1, 4)))
    a = dec.sequence_logprob(joint, np.array([[3, 4]]), emb).data
    b = dec.sequence_logprob(joint, np.array([[3, 4, 0, 0]]), emb).data
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_length_normalisation_divides_by_tokens():
    dec, emb = _decoder(seed=6)
    joint = T(np.random.default_rng(7).standard_normal((1, 4)))
    raw = dec.sequence_logprob(joint, np.array([[3, 4, 5]]), emb).data
    normed = dec.sequence_logprob(joint, np.array([[3, 4, 5]]), emb, length_norm=True).data
    np.testing.assert_allclose(normed, raw / 3, atol=1e-14)


def test_empty_candidate_rejected():
    dec, emb = _decoder()
    with pytest.raises(ValueError):
        dec.sequence_logprob(T(np.zeros((1, 4))), np.array([[0, 0]]), emb)


# -- multitask loss and ranking ---------------------------------------------


def test_multitask_sum():
    assert multitask_loss(T(0.0), T(0.0)).data == 0.0
    assert multitask_loss(T(math.log(100)), T(0.0)).data == pytest.approx(math.log(100))
    assert multitask_loss(T(2.0), None).data == 2.0
    with pytest.raises(ValueError):
        multitask_loss(None, None)
    with pytest.raises(FloatingPointError):
        multitask_loss(T(np.nan), T(1.0))


def test_multitask_gradient_is_sum_of_branch_gradients():
    rng = np.random.default_rng(8)
    x = Tensor(rng.standard_normal(5), requires_grad=True)

    def a():
        return ops.sum(ops.tanh(x))

    def b():
        return ops.sum(ops.mul(x, x))

    grads = []
    for f in (a, b, lambda: multitask_loss(a(), b())):
        x.zero_grad()
        backward(f(), [x])
        grads.append(x.grad.copy())
    np.testing.assert_allclose(grads[2], grads[0] + grads[1], atol=1e-14)
    # and against central differences of the combined loss
    eps = 1e-6
    num = np.zeros(5)
    for i in range(5):
        old = x.data[i]
        x.data[i] = old + eps
        up = multitask_loss(a(), b()).data
        x.data[i] = old - eps
        down = multitask_loss(a(), b()).data
        x.data[i] = old
        num[i] = (up - down) / (2 * eps)
    np.testing.assert_allclose(grads[2], num, rtol=1e-6)


def test_rank_examples():
    np.testing.assert_array_equal(rank_candidates([3, 1, 2]), [1, 3, 2])
    np.testing.assert_array_equal(rank_candidates([0.5] * 6), [1, 2, 3, 4, 5, 6])
    with pytest.raises(ValueError):
        rank_candidates([1.0, np.nan])


def test_rank_matches_sort_oracle():
    rng = np.random.default_rng(9)
    for _ in range(20):
        s = np.round(rng.standard_normal(100), 1)  # rounding forces ties
        order = sorted(range(100), key=lambda i: (-s[i], i))
        want = [0] * 100
        for r, i in enumerate(order, 1):
            want[i] = r
        np.testing.assert_array_equal(rank_candidates(s), want)


def test_rank_batched():
    s = np.array([[3.0, 1.0, 2.0], [0.0, 5.0, 5.0]])
    np.testing.assert_array_equal(rank_candidates(s), [[1, 3, 2], [3, 1, 2]])
