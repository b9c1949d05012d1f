import numpy as np
import numpy.testing as npt
import pytest

from fuseqa import autodiff as ad
from fuseqa.autodiff import (
    NumericError, ShapeError, Tensor, add, attention_core, concat_last,
    cross_entropy, dropout, gather_rows, layer_norm, matmul, mean_axis, mse,
    mul, no_grad, relu, scale, sigmoid, softmax_rows, stack_rows, sub,
    sum_all, transpose,
)


def finite_diff(f, x, h=1e-6):
    """Central-difference gradient of scalar f at ndarray x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def test_softmax_uniform_scores():
    y = softmax_rows(Tensor([0.0, 0.0, 0.0, 0.0]))
    npt.assert_allclose(y.data, [0.25, 0.25, 0.25, 0.25], atol=1e-15)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = Tensor(rng.normal(size=(rng.integers(1, 7), rng.integers(1, 9))) * 10)
        y = softmax_rows(x)
        npt.assert_allclose(y.data.sum(axis=1), 1.0, atol=1e-9)
        assert (y.data >= 0).all()


def test_layernorm_constant_row_is_zero():
    y = layer_norm(Tensor([[3.0, 3.0, 3.0, 3.0]]))
    npt.assert_allclose(y.data, 0.0, atol=1e-12)


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    eye = Tensor(np.eye(2))
    npt.assert_array_equal(matmul(a, eye).data, a.data)


def test_matmul_shape_mismatch_raises():
    with pytest.raises(ShapeError) as e:
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    assert "matmul" in str(e.value)
    assert "(2, 3)" in str(e.value) and "(4, 2)" in str(e.value)


def test_sum_grad_is_ones():
    w = Tensor(np.random.default_rng(1).normal(size=(3, 5)), requires_grad=True)
    sum_all(w).backward()
    npt.assert_array_equal(w.grad, np.ones((3, 5)))


def test_mse_self_is_zero_with_zero_grad():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    loss = mse(x, Tensor(x.data.copy()))
    assert loss.item() == 0.0
    loss.backward()
    npt.assert_array_equal(x.grad, np.zeros((2, 3)))


def test_cross_entropy_uniform_is_ln4_grad_is_softmax_minus_onehot():
    for label in range(4):
        logits = Tensor(np.zeros(4), requires_grad=True)
        loss = cross_entropy(logits, label)
        npt.assert_allclose(loss.item(), np.log(4.0), atol=1e-12)
        loss.backward()
        expect = np.full(4, 0.25)
        expect[label] -= 1.0
        npt.assert_allclose(logits.grad, expect, atol=1e-12)


def test_gradient_accumulation_additive():
    rng = np.random.default_rng(2)
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    x = Tensor(rng.normal(size=(3,)))

    def s1():
        return sum_all(relu(matmul(w, x)))

    def s2():
        return mse(matmul(w, x), Tensor(np.ones(4)))

    add(s1(), s2()).backward()
    joint = w.grad.copy()
    w.zero_grad()
    s1().backward()
    g1 = w.grad.copy()
    w.zero_grad()
    s2().backward()
    g2 = w.grad.copy()
    npt.assert_allclose(joint, g1 + g2, atol=1e-12)


def test_backward_requires_scalar():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        relu(w).backward()


def test_no_grad_blocks_recording():
    w = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = relu(w)
    assert not y.requires_grad and y._parents == ()


def test_nonfinite_output_raises():
    big = Tensor(np.array([1e308]), requires_grad=True)
    with pytest.raises(NumericError):
        add(big, big)


@pytest.mark.parametrize("op_name", [
    "add_bcast", "sub", "mul_bcast", "scale", "matmul22", "matmul12",
    "matmul21", "dot", "transpose", "relu", "sigmoid", "softmax2d",
    "softmax1d", "layernorm", "mean0", "mean1", "concat", "stack",
    "gather", "mse", "ce", "attn",
])
def test_primitive_gradients_match_finite_differences(op_name):
    rng = np.random.default_rng(hash(op_name) % 2**32)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 5))
    v4 = rng.normal(size=4)
    v3 = rng.normal(size=3)
    tgt = rng.normal(size=(3, 4))

    builders = {
        "add_bcast": (a, lambda t: sum_all(sigmoid(add(t, Tensor(v4))))),
        "sub": (a, lambda t: sum_all(sigmoid(sub(t, Tensor(tgt))))),
        "mul_bcast": (a, lambda t: sum_all(sigmoid(mul(t, Tensor(v4))))),
        "scale": (a, lambda t: sum_all(sigmoid(scale(t, -1.7)))),
        "matmul22": (a, lambda t: sum_all(sigmoid(matmul(t, Tensor(b))))),
        "matmul12": (v4, lambda t: sum_all(sigmoid(matmul(t, Tensor(b))))),
        "matmul21": (a, lambda t: sum_all(sigmoid(matmul(t, Tensor(v4))))),
        "dot": (v4, lambda t: sigmoid(matmul(t, Tensor(b[:, 0].copy())))),
        "transpose": (a, lambda t: sum_all(sigmoid(transpose(t)))),
        "relu": (a + 0.05, lambda t: sum_all(relu(t))),
        "sigmoid": (a, lambda t: sum_all(sigmoid(t))),
        "softmax2d": (a, lambda t: mse(softmax_rows(t), Tensor(tgt))),
        "softmax1d": (v4, lambda t: mse(softmax_rows(t), Tensor(b[0].copy()[:4]))),
        "layernorm": (a, lambda t: mse(layer_norm(t), Tensor(tgt))),
        "mean0": (a, lambda t: sum_all(sigmoid(mean_axis(t, 0)))),
        "mean1": (a, lambda t: sum_all(sigmoid(mean_axis(t, 1)))),
        "concat": (a, lambda t: sum_all(sigmoid(concat_last([t, scale(t, 2.0)])))),
        "stack": (v4, lambda t: sum_all(sigmoid(stack_rows([t, scale(t, 0.5)])))),
        "mse": (a, lambda t: mse(t, Tensor(tgt))),
        "ce": (v4, lambda t: cross_entropy(t, 2)),
        "gather": (a, lambda t: sum_all(sigmoid(gather_rows(t, np.array([0, 2, 2]))))),
        "attn": (
            rng.normal(size=(3, 4)),
            lambda t: mse(attention_core(t, scale(t, 0.8), scale(t, -1.2), 2)[0], Tensor(tgt)),
        ),
    }
    x, build = builders[op_name]
    t = Tensor(x, requires_grad=True)
    build(t).backward()
    analytic = t.grad.copy()

    with no_grad():
        fd = finite_diff(lambda: build(t).item(), t.data)
    npt.assert_allclose(analytic, fd, rtol=1e-5, atol=1e-7)


def test_attention_core_grads_flow_to_all_three_streams():
    rng = np.random.default_rng(7)
    q = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    k = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    v = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    out, w = attention_core(q, k, v, 2)
    assert out.shape == (3, 4) and w.shape == (2, 3, 5)
    npt.assert_allclose(w.sum(axis=2), 1.0, atol=1e-9)
    tgt = Tensor(rng.normal(size=(3, 4)))
    mse(out, tgt).backward()
    for t in (q, k, v):
        analytic = t.grad.copy()
        with no_grad():
            fd = finite_diff(lambda: mse(attention_core(q, k, v, 2)[0], tgt).item(), t.data)
        npt.assert_allclose(analytic, fd, rtol=1e-5, atol=1e-7)


def test_dropout_eval_identity_and_train_scaling():
    x = Tensor(np.ones((4, 8)), requires_grad=True)
    assert dropout(x, 0.5, training=False) is x
    assert dropout(x, 0.0, training=True) is x
    rng = np.random.default_rng(3)
    y = dropout(x, 0.5, rng=rng, training=True)
    kept = y.data != 0
    npt.assert_allclose(y.data[kept], 2.0)
    sum_all(y).backward()
    npt.assert_allclose(x.grad[kept], 2.0)
    npt.assert_allclose(x.grad[~kept], 0.0)


def test_gather_rows_lookup_and_oov():
    table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    out = gather_rows(table, np.array([1, 1, 3]))
    npt.assert_array_equal(out.data[0], table.data[1])
    npt.assert_array_equal(out.data[1], table.data[1])
    with pytest.raises(ShapeError):
        gather_rows(table, np.array([4]))
