"""Finite-difference verification of every tape primitive."""

import numpy as np
import pytest

from pointadapt import autodiff as ad


def fd_check(build, arrays, eps=1e-6, rtol=1e-4, atol=1e-8):
    """Assert tape gradients of build(params...) match central differences."""
    params = {f"p{i}": ad.parameter(a) for i, a in enumerate(arrays)}

    def loss():
        return build(*params.values())

    report = ad.check_gradients(loss, params, eps=eps, rtol=rtol, atol=atol)
    for name, excess in report.items():
        assert excess <= 0.0, f"{name}: gradient mismatch (excess {excess:.3e})"


@pytest.fixture
def rng():
    return np.random.default_rng(20240831)


def test_add_sub_mul_div_broadcast(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4,))
    fd_check(lambda x, y: ad.sum_(ad.mul(ad.add(x, y), ad.sub(x, 0.5))), [a, b])
    c = rng.normal(size=(3, 1)) + 2.0
    fd_check(lambda x, y: ad.sum_(ad.div(x, y)), [a, c])


def test_power_exp_log_sqrt_tanh(rng):
    x = rng.uniform(0.5, 2.0, size=(5,))
    fd_check(lambda t: ad.sum_(ad.power(t, 3.0)), [x])
    fd_check(lambda t: ad.sum_(ad.exp(t)), [x])
    fd_check(lambda t: ad.sum_(ad.log(t)), [x])
    fd_check(lambda t: ad.sum_(ad.sqrt(t)), [x])
    fd_check(lambda t: ad.sum_(ad.tanh(t)), [x])


def test_erf_sigmoid_gelu(rng):
    x = rng.normal(size=(6,))
    fd_check(lambda t: ad.sum_(ad.erf(t)), [x])
    fd_check(lambda t: ad.sum_(ad.sigmoid(t)), [x])
    fd_check(lambda t: ad.sum_(ad.gelu(t)), [x])


def test_clip_gradient_mask(rng):
    x = np.array([-2.0, -0.5, 0.3, 0.9, 2.5])
    p = ad.parameter(x)
    out = ad.sum_(ad.clip(p, -1.0, 1.0))
    out.backward()
    assert np.array_equal(p.grad, np.array([0.0, 1.0, 1.0, 1.0, 0.0]))


def test_grad_reverse_scales_and_negates(rng):
    x = rng.normal(size=(4,))
    p = ad.parameter(x)
    out = ad.sum_(ad.mul(ad.grad_reverse(p, 0.7), 2.0))
    out.backward()
    np.testing.assert_allclose(p.grad, -0.7 * 2.0 * np.ones(4), rtol=0, atol=0)
    assert np.array_equal(ad.grad_reverse(p, 0.7).value, x)

    p2 = ad.parameter(x)
    ad.sum_(ad.grad_reverse(p2, 0.0)).backward()
    assert np.all(p2.grad == 0.0)


def test_matmul_batched(rng):
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 5))
    fd_check(lambda x, y: ad.sum_(ad.power(ad.matmul(x, y), 2.0)), [a, b])
    c = rng.normal(size=(2, 5, 3))
    fd_check(lambda x, y: ad.sum_(ad.matmul(y, x)), [a, c])


def test_reshape_transpose_getitem(rng):
    a = rng.normal(size=(2, 3, 4))
    fd_check(lambda x: ad.sum_(ad.reshape(x, (6, 4))), [a])
    fd_check(lambda x: ad.sum_(ad.mul(ad.transpose(x, (2, 0, 1)), 1.5)), [a])
    fd_check(lambda x: ad.sum_(x[:, 1, 1:3]), [a])
    fd_check(lambda x: ad.sum_(ad.power(x[0], 2.0)), [a])


def test_concat_stack(rng):
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(2, 2))
    fd_check(lambda x, y: ad.sum_(ad.power(ad.concat([x, y], axis=1), 2.0)), [a, b])
    c = rng.normal(size=(2, 3))
    fd_check(lambda x, y: ad.sum_(ad.mul(ad.stack([x, y], axis=1), 2.0)), [a, c])


def test_take_rows_and_pairs(rng):
    a = rng.normal(size=(5, 3))
    idx = np.array([0, 2, 2, 4])
    fd_check(lambda x: ad.sum_(ad.power(ad.take_rows(x, idx), 2.0)), [a])

    b = rng.normal(size=(2, 4, 3))
    pair_idx = np.array([[[0, 1], [2, 2]], [[3, 0], [1, 1]]])
    fd_check(lambda x: ad.sum_(ad.power(ad.take_pairs(x, pair_idx), 2.0)), [b])


def test_reductions(rng):
    a = rng.normal(size=(3, 4, 2))
    fd_check(lambda x: ad.sum_(ad.power(ad.sum_(x, axis=1), 2.0)), [a])
    fd_check(lambda x: ad.sum_(ad.power(ad.mean_(x, axis=(0, 2)), 2.0)), [a])
    fd_check(lambda x: ad.mean_(x), [a])
    fd_check(lambda x: ad.sum_(ad.max_(x, axis=2)), [a])
    fd_check(lambda x: ad.sum_(ad.min_(x, axis=1, keepdims=True)), [a])
    fd_check(lambda x: ad.max_(x), [a])


def test_max_ties_route_to_first():
    x = np.array([[1.0, 3.0, 3.0], [2.0, 2.0, 0.0]])
    p = ad.parameter(x)
    ad.sum_(ad.max_(p, axis=1)).backward()
    assert np.array_equal(p.grad, np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]))


def test_softmax_rows_and_gradient(rng):
    a = rng.normal(size=(4, 6)) * 3.0
    s = ad.softmax(ad.as_tensor(a), axis=-1)
    np.testing.assert_allclose(s.value.sum(axis=-1), np.ones(4), atol=1e-12)
    fd_check(lambda x: ad.sum_(ad.power(ad.softmax(x, axis=-1), 2.0)), [a])


def test_parameter_reuse_accumulates(rng):
    a = rng.normal(size=(3,))
    p = ad.parameter(a)
    out = ad.sum_(ad.add(ad.mul(p, 2.0), ad.mul(p, 3.0)))
    out.backward()
    np.testing.assert_allclose(p.grad, np.full(3, 5.0))


def test_no_grad_builds_no_graph(rng):
    p = ad.parameter(rng.normal(size=(3,)))
    with ad.no_grad():
        out = ad.sum_(ad.mul(p, 2.0))
    assert not out.tracked
    out2 = ad.sum_(ad.mul(p.detach(), 2.0))
    assert not out2.tracked


def test_constant_branches_are_pruned(rng):
    p = ad.parameter(rng.normal(size=(3,)))
    c = ad.as_tensor(rng.normal(size=(3,)))
    out = ad.sum_(ad.mul(p, c))
    assert len(out._pulls) == 1
    out.backward()
    assert c.grad is None


def test_backward_requires_scalar(rng):
    p = ad.parameter(rng.normal(size=(3,)))
    with pytest.raises(ValueError):
        ad.mul(p, 2.0).backward()


def test_composite_attention_like_graph(rng):
    # a miniature attention + mlp graph touching most primitives at once
    q = rng.normal(size=(2, 3, 4))
    k = rng.normal(size=(2, 3, 4))
    v = rng.normal(size=(2, 3, 4))
    w = rng.normal(size=(4, 4))

    def build(qt, kt, vt, wt):
        scores = ad.div(ad.matmul(qt, ad.swap_last(kt)), 2.0)
        attn = ad.softmax(scores, axis=-1)
        mixed = ad.matmul(attn, vt)
        out = ad.gelu(ad.matmul(mixed, wt))
        return ad.mean_(ad.power(out, 2.0))

    fd_check(build, [q, k, v, w])
