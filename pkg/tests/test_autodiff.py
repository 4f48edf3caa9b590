import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpcspell import autodiff as ad
from dpcspell.autodiff import Tensor
from dpcspell.transformer import multi_head_attention

from oracles import central_difference, max_relative_error

R = np.random.default_rng(0)


def leaf(*shape):
    return Tensor(R.normal(size=shape), requires_grad=True)


def gradcheck(build, leaves, tol=1e-6):
    """``build`` returns a scalar Tensor from the current leaf data."""
    for t in leaves:
        t.grad = None
    build().backward()
    for t in leaves:
        num = central_difference(lambda: float(build().data), t.data)
        assert max_relative_error(t.grad, num) < tol


def test_add_mul_broadcast():
    a, b = leaf(3, 4), leaf(4)
    gradcheck(lambda: ad.sum_all(ad.mul(ad.add(a, b), a)), [a, b])


def test_scale_relu_reshape_permute():
    a = leaf(2, 3, 4)
    w = Tensor(R.normal(size=(4, 3, 2)))
    gradcheck(lambda: ad.sum_all(ad.mul(ad.relu(ad.permute(ad.reshape(ad.scale(a, 1.7), (3, 2, 4)), (2, 0, 1))), w)),
              [a])


def test_matmul_variants():
    a, b, w = leaf(2, 3, 4), leaf(2, 4, 5), leaf(4, 6)
    gradcheck(lambda: ad.sum_all(ad.mul(ad.matmul(a, b), ad.matmul(a, b))), [a, b])
    gradcheck(lambda: ad.sum_all(ad.relu(ad.matmul(a, w))), [a, w])


def test_linear_transpose_concat():
    x, w, b = leaf(2, 3, 4), leaf(4, 5), leaf(5)
    y = leaf(2, 3, 2)
    gradcheck(lambda: ad.sum_all(ad.mul(ad.concat_last_dim([ad.linear(x, w, b), y]),
                                        ad.concat_last_dim([ad.linear(x, w, b), y]))), [x, w, b, y])
    gradcheck(lambda: ad.sum_all(ad.mul(ad.transpose_last_two(x), ad.transpose_last_two(x))), [x])


def test_embedding_repeated_ids():
    table = leaf(6, 3)
    ids = np.array([[1, 1, 4], [0, 1, 5]])
    gradcheck(lambda: ad.sum_all(ad.mul(ad.embedding_lookup(table, ids), ad.embedding_lookup(table, ids))), [table])


def test_layer_norm():
    x, g, b = leaf(2, 3, 5), leaf(5), leaf(5)
    w = Tensor(R.normal(size=(2, 3, 5)))
    gradcheck(lambda: ad.sum_all(ad.mul(ad.layer_norm(x, g, b), w)), [x, g, b])


def test_softmax_masked():
    x = leaf(2, 4)
    mask = np.array([[True, False, True, True], [False, False, False, False]])
    w = Tensor(R.normal(size=(2, 4)))
    p = ad.softmax(x, mask)
    assert np.allclose(p.data[0].sum(), 1.0) and p.data[0, 1] == 0.0
    assert np.all(p.data[1] == 0.0)
    gradcheck(lambda: ad.sum_all(ad.mul(ad.softmax(x, mask), w)), [x])


def test_cross_entropy_hand_value():
    logits = Tensor(np.log(np.array([[0.5, 0.25, 0.25], [0.1, 0.8, 0.1]])), requires_grad=True)
    loss = ad.cross_entropy(logits, np.array([0, 1]))
    assert loss.data == pytest.approx(-(np.log(0.5) + np.log(0.8)) / 2)
    x = leaf(2, 3, 5)
    t = np.array([[1, 0, 4], [0, 0, 2]])
    gradcheck(lambda: ad.cross_entropy(x, t, ignore_id=0), [x])
    with pytest.raises(ValueError):
        ad.cross_entropy(x, np.zeros((2, 3), dtype=int), ignore_id=0)
    with pytest.raises(ad.ShapeError):
        ad.cross_entropy(x, np.zeros((2, 2), dtype=int))


def test_dropout_scaling_and_eval_identity():
    a = Tensor(np.ones((200, 200)), requires_grad=True)
    out = ad.dropout(a, 0.25, np.random.default_rng(1))
    kept = out.data != 0
    assert np.allclose(out.data[kept], 1 / 0.75)
    assert abs(kept.mean() - 0.75) < 0.01
    assert ad.dropout(a, 0.25, None, train=False) is a
    with pytest.raises(ValueError):
        ad.dropout(a, 0.25, None)


def test_backward_rules():
    a = leaf(3)
    y = ad.sum_all(ad.mul(a, a))
    y.backward()
    with pytest.raises(ad.GraphError):
        y.backward()
    with pytest.raises(ad.GraphError):
        ad.mul(a, a).backward()
    with pytest.raises(ad.GraphError):
        Tensor(1.0).backward()


def test_gradients_accumulate_on_leaves():
    a = leaf(3)
    ad.sum_all(a).backward()
    ad.sum_all(a).backward()
    assert np.allclose(a.grad, 2.0)


def test_no_grad_records_nothing():
    a = leaf(3)
    with ad.no_grad():
        y = ad.sum_all(ad.mul(a, a))
    with pytest.raises(ad.GraphError):
        y.backward()


def test_shape_errors():
    with pytest.raises(ad.ShapeError):
        ad.add(leaf(2, 3), leaf(4))
    with pytest.raises(ad.ShapeError):
        ad.matmul(leaf(2, 3), leaf(4, 2))


def test_clip_grad_norm():
    a, b = leaf(2), leaf(2)
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([0.0, 4.0])
    assert ad.clip_grad_norm([a, b], 1.0) == pytest.approx(0.2)
    assert np.allclose(a.grad, [0.6, 0.0]) and np.allclose(b.grad, [0.0, 0.8])
    assert ad.clip_grad_norm([a, b], 5.0) == 1.0


def test_adam_first_steps_hand_computed():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = ad.Adam([p], lr=0.1)
    p.grad = np.array([0.5, -1.0])
    opt.step()
    # the first bias-corrected step is lr * sign(g), up to eps
    assert np.allclose(p.data, [0.9, -1.9], atol=1e-7)
    p.grad = np.array([0.5, 3.0])
    opt.step()
    m = 0.9 * 0.1 * np.array([0.5, -1.0]) + 0.1 * np.array([0.5, 3.0])
    v = 0.999 * 0.001 * np.array([0.25, 1.0]) + 0.001 * np.array([0.25, 9.0])
    expect = np.array([0.9, -1.9]) - 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    assert np.allclose(p.data, expect)


def test_adam_rejects_nan():
    p = leaf(2)
    opt = ad.Adam([p])
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(ad.DivergenceError):
        opt.step()


def composite_case(seed):
    """Random attention + residual layernorm + feed-forward + cross-entropy graph in float64."""
    rng = np.random.default_rng(seed)
    B, T = int(rng.integers(1, 3)), int(rng.integers(2, 5))
    heads = int(rng.integers(1, 3))
    H = heads * int(rng.integers(2, 5)) if heads > 1 else int(rng.integers(4, 9))
    P, V = int(rng.integers(3, 7)), int(rng.integers(3, 6))

    def p(*shape):
        return Tensor(rng.normal(scale=0.5, size=shape), requires_grad=True)

    x = p(B, T, H)
    weights = {f"{k}{n}": (p(H, H) if k == "w" else p(H)) for n in "qkvo" for k in "wb"}
    ln_g, ln_b = p(H), p(H)
    w1, b1, w2, b2 = p(H, P), p(P), p(P, H), p(H)
    wout = p(H, V)
    targets = rng.integers(0, V, size=(B, T))
    targets[0, -1] = 0  # one ignored position
    causal = np.tril(np.ones((T, T), dtype=bool))[None, None]

    def build():
        a, _ = multi_head_attention(x, x, weights, heads, mask=causal)
        h = ad.layer_norm(ad.add(x, a), ln_g, ln_b)
        f = ad.linear(ad.relu(ad.linear(h, w1, b1)), w2, b2)
        h = ad.layer_norm(ad.add(h, f), ln_g, ln_b)
        return ad.cross_entropy(ad.matmul(h, wout), targets, ignore_id=0)

    leaves = [x, *weights.values(), ln_g, ln_b, w1, b1, w2, b2, wout]
    return build, leaves


def composite_max_error(seed):
    build, leaves = composite_case(seed)
    build().backward()
    worst = 0.0
    for t in leaves:
        num = central_difference(lambda: float(build().data), t.data)
        worst = max(worst, max_relative_error(t.grad, num))
    return worst


@pytest.mark.parametrize("seed", range(3))
def test_composite_graph(seed):
    assert composite_max_error(seed) <= 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5))
def test_sum_gradient_is_ones(r, c):
    a = Tensor(np.zeros((r, c)), requires_grad=True)
    ad.sum_all(a).backward()
    assert np.array_equal(a.grad, np.ones((r, c)))
