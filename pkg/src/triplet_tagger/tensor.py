"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a C-contiguous float64 ndarray plus an optional gradient
buffer. Every differentiable operation records an ``OpRecord`` on its output;
``backward`` traces the records reachable from a scalar loss into a ``Tape``
(topologically ordered, each record visited exactly once) and sweeps it in
reverse, accumulating gradients additively across fan-out.

Design points:
  * float64 everywhere; any NaN/Inf in an op output or gradient raises
    NumericError immediately instead of propagating.
  * reductions use a fixed order (the compiled backend accumulates strictly
    left-to-right; the NumPy fallback uses NumPy's fixed pairwise order), so
    re-running an op sequence on identical inputs is bit-identical.
  * no global graph state: records hang off the tensors themselves, so
    independent graphs on separate threads never share anything. The
    ``no_grad`` switch is a ContextVar, which is per-thread/per-context.
"""

from __future__ import annotations

import contextlib
import contextvars
import math

import numpy as np

from . import backend
from .errors import ContractError, DataError, DimensionError, NumericError

_GRAD_ENABLED = contextvars.ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad():
    """Disable op recording inside the block (inference/fd-evaluation mode)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled():
    return _GRAD_ENABLED.get()


def _check_finite(arr, what):
    if not backend.kernels.all_finite(arr):
        raise NumericError(f"non-finite values in {what}")


class OpRecord:
    """One recorded operation: inputs, output, and its vector-Jacobian rule."""

    __slots__ = ("name", "inputs", "output", "vjp")

    def __init__(self, name, inputs, output, vjp):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tensor:
    """Shape + float64 values + gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "op")

    def __init__(self, data, requires_grad=False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        _check_finite(arr, "tensor constructor input")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.op = None

    @classmethod
    def _from_op(cls, arr, op_name, inputs, vjp):
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        _check_finite(arr, f"output of {op_name}")
        out = cls.__new__(cls)
        out.data = arr
        out.grad = None
        if grad_enabled() and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out.op = OpRecord(op_name, inputs, out, vjp)
        else:
            out.requires_grad = False
            out.op = None
        return out

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        """A view of the same values with no graph attached."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out.op = None
        return out

    def zero_grad(self):
        if self.requires_grad:
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            else:
                self.grad[...] = 0.0

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_scalar(self, p)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def swapaxes(self, ax1, ax2):
        return swapaxes(self, ax1, ax2)

    def backward(self):
        backward(self)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad


# -- tape and backward sweep ------------------------------------------------


class Tape:
    """Topologically ordered op records reachable from one output tensor.

    Every input of records[k] is either produced by some records[j<k] or is
    a leaf; the backward sweep walks the list once, in reverse.
    """

    __slots__ = ("records",)

    def __init__(self, records):
        self.records = records

    @classmethod
    def trace(cls, root):
        records = []
        seen = set()
        stack = [(root, False)]
        while stack:
            tensor, expanded = stack.pop()
            if tensor.op is None or id(tensor) in seen:
                continue
            if expanded:
                seen.add(id(tensor))
                records.append(tensor.op)
            else:
                stack.append((tensor, True))
                for parent in tensor.op.inputs:
                    if parent.op is not None and id(parent) not in seen:
                        stack.append((parent, False))
        return cls(records)

    def backward(self, root, seed=None):
        seed = seed if seed is not None else np.ones_like(root.data)
        if root.op is None:
            if root.requires_grad:
                if root.grad is None:
                    root.grad = np.zeros_like(root.data)
                root.grad += seed
            return
        grads = {id(root): seed}
        visited = set()
        for record in reversed(self.records):
            if id(record) in visited:
                raise ContractError("tape record visited twice")
            visited.add(id(record))
            gy = grads.pop(id(record.output), None)
            if gy is None:
                continue
            input_grads = record.vjp(gy)
            for tensor, g in zip(record.inputs, input_grads):
                if g is None or not tensor.requires_grad:
                    continue
                if not backend.kernels.all_finite(g):
                    raise NumericError(f"non-finite gradient from {record.name}")
                if tensor.op is None:
                    if tensor.grad is None:
                        tensor.grad = np.zeros_like(tensor.data)
                    tensor.grad += g
                else:
                    key = id(tensor)
                    if key in grads:
                        grads[key] = grads[key] + g
                    else:
                        grads[key] = g


def backward(loss):
    """Populate .grad of every requires_grad leaf with d(loss)/d(leaf)."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    Tape.trace(loss).backward(loss)


# -- elementwise and structural ops -----------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def vjp(gy):
        return _unbroadcast(gy, a.shape), _unbroadcast(gy, b.shape)

    return Tensor._from_op(out, "add", (a, b), vjp)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def vjp(gy):
        return _unbroadcast(gy, a.shape), _unbroadcast(-gy, b.shape)

    return Tensor._from_op(out, "sub", (a, b), vjp)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def vjp(gy):
        return (
            _unbroadcast(gy * b.data, a.shape),
            _unbroadcast(gy * a.data, b.shape),
        )

    return Tensor._from_op(out, "mul", (a, b), vjp)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data

    def vjp(gy):
        return (
            _unbroadcast(gy / b.data, a.shape),
            _unbroadcast(-gy * a.data / (b.data * b.data), b.shape),
        )

    return Tensor._from_op(out, "div", (a, b), vjp)


def neg(a):
    a = _as_tensor(a)
    return Tensor._from_op(-a.data, "neg", (a,), lambda gy: (-gy,))


def pow_scalar(a, p):
    """Elementwise a**p for a constant exponent p."""
    a = _as_tensor(a)
    p = float(p)
    out = a.data**p

    def vjp(gy):
        return (gy * p * a.data ** (p - 1.0),)

    return Tensor._from_op(out, "pow_scalar", (a,), vjp)


def matmul(a, b):
    """Matrix product; stacked (batched) when both operands have ndim > 2."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(gy):
        ga = np.matmul(gy, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), gy)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op(out, "matmul", (a, b), vjp)


def reshape(a, shape):
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def vjp(gy):
        return (gy.reshape(a.shape),)

    return Tensor._from_op(out, "reshape", (a,), vjp)


def swapaxes(a, ax1, ax2):
    a = _as_tensor(a)
    out = a.data.swapaxes(ax1, ax2)

    def vjp(gy):
        return (gy.swapaxes(ax1, ax2),)

    return Tensor._from_op(out, "swapaxes", (a,), vjp)


def tensor_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(gy):
        g = gy
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.ascontiguousarray(np.broadcast_to(g, a.shape)),)

    return Tensor._from_op(np.asarray(out), "sum", (a,), vjp)


def tensor_mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    denom = a.data.size if axis is None else a.shape[axis]

    def vjp(gy):
        g = gy
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.ascontiguousarray(np.broadcast_to(g, a.shape)) / denom,)

    return Tensor._from_op(np.asarray(out), "mean", (a,), vjp)


# -- neural-net ops backed by the kernel layer --------------------------------


def _rows2d(arr):
    return np.ascontiguousarray(arr.reshape(-1, arr.shape[-1]))


def softmax_rows(x):
    """Softmax over the last axis; each row sums to 1, max-subtracted."""
    x = _as_tensor(x)
    y2 = backend.kernels.softmax_fwd(_rows2d(x.data))
    y = y2.reshape(x.shape)

    def vjp(gy):
        gx = backend.kernels.softmax_bwd(y2, _rows2d(gy))
        return (gx.reshape(x.shape),)

    return Tensor._from_op(y, "softmax_rows", (x,), vjp)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Per-row (last-axis) normalization followed by an affine map."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if eps <= 0:
        raise ContractError("layer_norm eps must be > 0")
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise DimensionError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} "
            f"do not match last axis of {x.shape}"
        )
    y2, xhat, inv_std = backend.kernels.layernorm_fwd(
        _rows2d(x.data), gamma.data, beta.data, float(eps)
    )

    def vjp(gy):
        gx, dgamma, dbeta = backend.kernels.layernorm_bwd(
            _rows2d(gy), xhat, inv_std, gamma.data
        )
        return gx.reshape(x.shape), dgamma, dbeta

    return Tensor._from_op(y2.reshape(x.shape), "layer_norm", (x, gamma, beta), vjp)


def gelu(x):
    """Exact (erf-based) GELU."""
    x = _as_tensor(x)
    y = backend.kernels.gelu_fwd(x.data)

    def vjp(gy):
        return (backend.kernels.gelu_bwd(x.data, gy),)

    return Tensor._from_op(y, "gelu", (x,), vjp)


def softplus(x):
    """log(1 + e^x), computed without overflow."""
    x = _as_tensor(x)
    y = np.logaddexp(0.0, x.data)

    def vjp(gy):
        # sigmoid(x), stable on both tails
        s = np.exp(-np.logaddexp(0.0, -x.data))
        return (gy * s,)

    return Tensor._from_op(y, "softplus", (x,), vjp)


def dropout(x, rate=0.0, rng=None):
    """Inverted dropout; rate 0 (the default) is an exact identity."""
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return Tensor._from_op(x.data.copy(), "dropout", (x,), lambda gy: (gy,))
    if rng is None:
        raise ContractError("dropout with rate > 0 needs an explicit rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def vjp(gy):
        return (gy * mask,)

    return Tensor._from_op(x.data * mask, "dropout", (x,), vjp)


def embedding(table, ids):
    """Gather rows of `table` ([vocab, d]) by an integer id array."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise DimensionError(f"embedding table must be 2-d, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError("embedding ids out of range")
    flat = np.ascontiguousarray(ids.reshape(-1).astype(np.int64))
    out = table.data[flat].reshape(ids.shape + (table.shape[1],))

    def vjp(gy):
        gtable = np.zeros_like(table.data)
        backend.kernels.embedding_bwd(
            gtable, flat, _rows2d(np.ascontiguousarray(gy))
        )
        return (gtable,)

    return Tensor._from_op(out, "embedding", (table,), vjp)


def masked_mean(x, mask):
    """Mean of x[b, s, :] over positions with mask[b, s] == 1."""
    x = _as_tensor(x)
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    if x.ndim != 3 or mask.shape != x.shape[:2]:
        raise DimensionError(
            f"masked_mean needs x[b,s,d] and mask[b,s], got {x.shape}/{mask.shape}"
        )
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        raise ContractError("masked_mean: a row has no unmasked positions")
    out = backend.kernels.masked_mean_fwd(x.data, mask, counts)

    def vjp(gy):
        return (backend.kernels.masked_mean_bwd(np.ascontiguousarray(gy), mask, counts),)

    return Tensor._from_op(out, "masked_mean", (x,), vjp)


def cross_entropy(logits, gold, mask):
    """Mean over mask==1 tokens of -log softmax(logits)[gold].

    `logits` is [..., K]; `gold` and `mask` share the leading shape.
    """
    logits = _as_tensor(logits)
    gold = np.asarray(gold)
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    if gold.shape != logits.shape[:-1] or mask.shape != gold.shape:
        raise DimensionError(
            f"cross_entropy shapes disagree: logits {logits.shape}, "
            f"gold {gold.shape}, mask {mask.shape}"
        )
    k = logits.shape[-1]
    gold_flat = np.ascontiguousarray(gold.reshape(-1).astype(np.int64))
    mask_flat = np.ascontiguousarray(mask.reshape(-1))
    active = mask_flat > 0
    if active.any() and (gold_flat[active].min() < 0 or gold_flat[active].max() >= k):
        raise DataError(f"gold tag id out of range [0, {k}) at an unmasked position")
    count = mask_flat.sum()
    if count == 0:
        raise ContractError("cross_entropy: no unmasked tokens")
    gold_safe = np.where((gold_flat >= 0) & (gold_flat < k), gold_flat, 0)
    nll_sum, probs = backend.kernels.cross_entropy_fwd(
        _rows2d(logits.data), gold_safe, mask_flat
    )

    def vjp(gy):
        scale = float(gy) / count
        gx = backend.kernels.cross_entropy_bwd(probs, gold_safe, mask_flat, scale)
        return (gx.reshape(logits.shape),)

    return Tensor._from_op(
        np.asarray(nll_sum / count), "cross_entropy", (logits,), vjp
    )


# -- finite-difference gradient verification ---------------------------------


def grad_check(f, inputs, h=1e-5, sample=None, rng=None):
    """Compare backward() gradients of scalar-valued `f` to central differences.

    Returns max over all components of |analytic - numeric| / max(1, |numeric|).
    With `sample=n`, only n randomly chosen components per input are probed
    (a cheaper spot check); the default probes every component.
    """
    if not 0.0 < h <= 1e-2:
        raise ContractError(f"grad_check step h must be in (0, 1e-2], got {h}")
    inputs = list(inputs)
    checked = [t for t in inputs if t.requires_grad]
    if not checked:
        raise ContractError("grad_check needs at least one requires_grad input")
    for t in checked:
        t.zero_grad()
    out = f(*inputs)
    if out.data.size != 1:
        raise ContractError("grad_check target must produce a scalar")
    backward(out)
    analytic = [t.grad.copy() for t in checked]

    def value():
        with no_grad():
            v = f(*inputs)
        return float(v.data.reshape(()))

    if sample is not None and rng is None:
        rng = np.random.default_rng(0)

    worst = 0.0
    for t, a in zip(checked, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        if sample is None or sample >= flat.size:
            indices = range(flat.size)
        else:
            indices = sorted(rng.choice(flat.size, size=sample, replace=False))
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = value()
            flat[i] = orig - h
            f_minus = value()
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericError("non-finite value during finite differencing")
            numeric = (f_plus - f_minus) / (2.0 * h)
            rel = abs(aflat[i] - numeric) / max(1.0, abs(numeric))
            if rel > worst:
                worst = rel
    return worst
