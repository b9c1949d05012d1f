"""Dense float64 tensors with tape-based reverse-mode gradients.

Ops record a backward closure on the forward pass; `Tensor.backward()`
replays them in reverse topological order. The op set is small and fixed:
matmul, add/sub, elementwise multiply, scalar scale, row softmax, layer
norm, relu, sigmoid, mean over an axis, sum, concat along the last axis,
row stacking, transpose, embedding row gather, dropout, fused per-head
attention, MSE and cross-entropy reductions.

Every op validates operand shapes and (unless FUSEQA_FINITE_CHECKS=0)
checks its output for non-finite values.
"""

import os
from contextlib import contextmanager

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


class NumericError(ArithmeticError):
    """An op produced a non-finite value."""

    def __init__(self, op):
        self.op = op
        super().__init__(f"{op}: non-finite value in output")


FINITE_CHECKS = os.environ.get("FUSEQA_FINITE_CHECKS", "1") != "0"

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / frozen teachers)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 ndarray plus gradient metadata and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.data.shape)
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, cut from the graph."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Propagate dSelf into every reachable requires_grad tensor."""
        if self.data.size != 1:
            raise ShapeError("backward", self.data.shape)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
    else:
        t.grad += g


def _make(op, data, parents, backward):
    data = np.asarray(data, dtype=np.float64)
    if FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericError(op)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum a broadcasted gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -----------------------------------------------------------------------------
# primitives
# -----------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.data.shape, b.data.shape) from None

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make("add", data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.data.shape, b.data.shape) from None

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make("sub", data, (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.data.shape, b.data.shape) from None

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make("mul", data, (a, b), backward)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)

    def backward(g):
        _accum(a, g * s)

    return _make("scale", a.data * s, (a,), backward)


def matmul(a, b) -> Tensor:
    """Matrix/vector product for 2-D and 1-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2) or ad.shape[-1] != bd.shape[0]:
        raise ShapeError("matmul", ad.shape, bd.shape)
    data = ad @ bd

    def backward(g):
        if ad.ndim == 2 and bd.ndim == 2:
            _accum(a, g @ bd.T)
            _accum(b, ad.T @ g)
        elif ad.ndim == 1 and bd.ndim == 2:
            _accum(a, bd @ g)
            _accum(b, np.outer(ad, g))
        elif ad.ndim == 2 and bd.ndim == 1:
            _accum(a, np.outer(g, bd))
            _accum(b, ad.T @ g)
        else:
            _accum(a, g * bd)
            _accum(b, g * ad)

    return _make("matmul", data, (a, b), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.data.shape)

    def backward(g):
        _accum(a, g.T)

    return _make("transpose", a.data.T.copy(), (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        _accum(a, g * (a.data > 0))

    return _make("relu", data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        _accum(a, g * data * (1.0 - data))

    return _make("sigmoid", data, (a,), backward)


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis of a 1-D or 2-D tensor."""
    a = as_tensor(a)
    if a.data.ndim not in (1, 2):
        raise ShapeError("softmax_rows", a.data.shape)
    x2 = a.data.reshape(1, -1) if a.data.ndim == 1 else a.data
    y2 = kernels.softmax_rows_fwd(np.ascontiguousarray(x2))
    data = y2[0] if a.data.ndim == 1 else y2

    def backward(g):
        g2 = g.reshape(1, -1) if g.ndim == 1 else g
        dx = kernels.softmax_rows_bwd(np.ascontiguousarray(g2), y2)
        _accum(a, dx.reshape(a.data.shape))

    return _make("softmax_rows", data, (a,), backward)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize each row of the last axis to zero mean / unit variance.

    Unit gain, zero bias; compose `mul`/`add` on the output for affine forms.
    """
    a = as_tensor(a)
    if a.data.ndim not in (1, 2):
        raise ShapeError("layer_norm", a.data.shape)
    x2 = a.data.reshape(1, -1) if a.data.ndim == 1 else a.data
    y2, inv_std = kernels.layernorm_fwd(np.ascontiguousarray(x2), eps)
    data = y2[0] if a.data.ndim == 1 else y2

    def backward(g):
        g2 = g.reshape(1, -1) if g.ndim == 1 else g
        dx = kernels.layernorm_bwd(np.ascontiguousarray(g2), y2, inv_std)
        _accum(a, dx.reshape(a.data.shape))

    return _make("layer_norm", data, (a,), backward)


def mean_axis(a, axis: int) -> Tensor:
    a = as_tensor(a)
    if axis >= a.data.ndim:
        raise ShapeError("mean_axis", a.data.shape)
    n = a.data.shape[axis]
    data = a.data.mean(axis=axis)

    def backward(g):
        _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape) / n)

    return _make("mean_axis", data, (a,), backward)


def sum_all(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, np.full(a.data.shape, float(g)))

    return _make("sum_all", a.data.sum(), (a,), backward)


def concat_last(parts) -> Tensor:
    """Concatenate along the last axis."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_last", ())
    lead = parts[0].data.shape[:-1]
    if any(p.data.shape[:-1] != lead for p in parts):
        raise ShapeError("concat_last", *[p.data.shape for p in parts])
    widths = [p.data.shape[-1] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=-1)

    def backward(g):
        off = 0
        for p, w in zip(parts, widths):
            _accum(p, g[..., off:off + w])
            off += w

    return _make("concat_last", data, tuple(parts), backward)


def stack_rows(parts) -> Tensor:
    """Stack 1-D vectors (or scalars) into a matrix (or vector)."""
    parts = [as_tensor(p) for p in parts]
    if not parts or any(p.data.shape != parts[0].data.shape for p in parts):
        raise ShapeError("stack_rows", *[p.data.shape for p in parts])
    data = np.stack([p.data for p in parts], axis=0)

    def backward(g):
        for i, p in enumerate(parts):
            _accum(p, g[i])

    return _make("stack_rows", data, tuple(parts), backward)


def gather_rows(table, ids) -> Tensor:
    """Row lookup: out[i] = table[ids[i]]. Backward scatter-adds."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)
    if table.data.ndim != 2 or ids.ndim != 1:
        raise ShapeError("gather_rows", table.data.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError("gather_rows", table.data.shape, (int(ids.min()), int(ids.max())))
    data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            dt = np.zeros_like(table.data)
            np.add.at(dt, ids, g)
            _accum(table, dt)

    return _make("gather_rows", data, (table,), backward)


def dropout(a, rate: float, rng=None, training: bool = False) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout: rng required in training mode")
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)

    def backward(g):
        _accum(a, g * mask)

    return _make("dropout", a.data * mask, (a,), backward)


def attention_core(qp, kp, vp, n_heads: int):
    """Per-head scaled dot-product attention on already-projected streams.

    qp (l, d), kp/vp (k, d) with d divisible by n_heads. Returns the (l, d)
    output tensor and the detached (n_heads, l, k) weight array.
    """
    qp, kp, vp = as_tensor(qp), as_tensor(kp), as_tensor(vp)
    l_ok = qp.data.ndim == 2 and kp.data.ndim == 2 and vp.data.ndim == 2
    if not l_ok or qp.data.shape[1] != kp.data.shape[1] or kp.data.shape != vp.data.shape:
        raise ShapeError("attention_core", qp.data.shape, kp.data.shape, vp.data.shape)
    d = qp.data.shape[1]
    if d % n_heads != 0:
        raise ShapeError("attention_core", (d,), (n_heads,))
    q, k, v = (np.ascontiguousarray(t.data) for t in (qp, kp, vp))
    out, w = kernels.attn_core_fwd(q, k, v, n_heads)

    def backward(g):
        dq, dk, dv = kernels.attn_core_bwd(np.ascontiguousarray(g), q, k, v, w)
        _accum(qp, dq)
        _accum(kp, dk)
        _accum(vp, dv)

    return _make("attention_core", out, (qp, kp, vp), backward), w


def mse(a, b) -> Tensor:
    """Mean squared error over all elements."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError("mse", a.data.shape, b.data.shape)
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        d = (2.0 / n) * float(g) * diff
        _accum(a, d)
        _accum(b, -d)

    return _make("mse", np.mean(diff * diff), (a, b), backward)


def cross_entropy(logits, label: int) -> Tensor:
    """Softmax cross-entropy of a 1-D logit vector against a class index."""
    logits = as_tensor(logits)
    x = logits.data
    if x.ndim != 1:
        raise ShapeError("cross_entropy", x.shape)
    if not 0 <= label < x.shape[0]:
        raise ShapeError("cross_entropy", x.shape, (label,))
    z = x - x.max()
    lse = np.log(np.exp(z).sum())
    probs = np.exp(z - lse)

    def backward(g):
        d = probs.copy()
        d[label] -= 1.0
        _accum(logits, float(g) * d)

    return _make("cross_entropy", lse - z[label], (logits,), backward)


def backward_pass(loss: Tensor, params=None):
    """Backward from a scalar loss; zero-fill grads the loss never reached.

    `params` is an optional ParamTree whose non-frozen tensors get zero
    gradients when unreachable from the loss.
    """
    loss.backward()
    if params is not None:
        for path, t in params.items():
            if t.grad is None and not params.is_frozen(path):
                t.grad = np.zeros_like(t.data)
