"""Finite-difference verification of every differentiable op.

Each op gets 100 randomized scalar-valued probes; the three end-to-end
checks run once over every parameter component of a 2-layer/16-dim model.
``corrupt_backward`` deliberately mis-scales one backward kernel so the
detection path itself can be tested.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import backend
from . import model as M
from . import objectives as O
from . import tensor as tt
from .errors import DataError
from .tensor import Tensor, grad_check

_VERIFY_STREAM = 0xF1D0

TOLERANCE = 1e-4


def _rng(seed, op_index, point):
    return np.random.default_rng(np.random.SeedSequence([_VERIFY_STREAM, seed, op_index, point]))


def _t(rng, *shape, lo=-2.0, hi=2.0, grad=True):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=grad)


def _probe_add(rng, point):
    a, b = _t(rng, 3, 4), (_t(rng, 4) if point % 3 == 0 else _t(rng, 3, 4))
    w = _t(rng, 3, 4, grad=False)
    return lambda a, b: ((a + b) * w).sum(), [a, b]


def _probe_sub(rng, point):
    a, b = _t(rng, 3, 4), (_t(rng, 3, 1) if point % 3 == 0 else _t(rng, 3, 4))
    w = _t(rng, 3, 4, grad=False)
    return lambda a, b: ((a - b) * w).sum(), [a, b]


def _probe_mul(rng, point):
    a, b = _t(rng, 2, 5), _t(rng, 2, 5)
    w = _t(rng, 2, 5, grad=False)
    return lambda a, b: ((a * b) * w).sum(), [a, b]


def _probe_div(rng, point):
    a = _t(rng, 2, 4)
    sign = np.where(rng.random((2, 4)) < 0.5, -1.0, 1.0)
    b = Tensor(sign * rng.uniform(0.5, 2.5, (2, 4)), requires_grad=True)
    w = _t(rng, 2, 4, grad=False)
    return lambda a, b: ((a / b) * w).sum(), [a, b]


def _probe_neg(rng, point):
    a = _t(rng, 3, 3)
    w = _t(rng, 3, 3, grad=False)
    return lambda a: ((-a) * w).sum(), [a]


def _probe_pow_scalar(rng, point):
    p = (2.0, 3.0, 0.5, -1.0)[point % 4]
    a = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    w = _t(rng, 3, 4, grad=False)
    return lambda a: ((a**p) * w).sum(), [a]


def _probe_matmul(rng, point):
    w = _t(rng, 2, 3, 2, grad=False)
    if point % 3 == 0:
        a, b = _t(rng, 2, 3, 4), _t(rng, 2, 4, 2)
    elif point % 3 == 1:
        a, b = _t(rng, 2, 3, 4), _t(rng, 4, 2)
    else:
        a, b = _t(rng, 3, 4), _t(rng, 4, 2)
        w = _t(rng, 3, 2, grad=False)
    return lambda a, b: ((a @ b) * w).sum(), [a, b]


def _probe_reshape(rng, point):
    a = _t(rng, 3, 4)
    w = _t(rng, 2, 6, grad=False)
    return lambda a: (a.reshape(2, 6) * w).sum(), [a]


def _probe_swapaxes(rng, point):
    a = _t(rng, 2, 3, 4)
    w = _t(rng, 4, 3, 2, grad=False)
    return lambda a: (a.swapaxes(0, 2) * w).sum(), [a]


def _probe_sum(rng, point):
    a = _t(rng, 3, 4)
    axis = (None, 0, 1)[point % 3]
    if axis is None:
        return lambda a: a.sum() * 1.5, [a]
    w_shape = (4,) if axis == 0 else (3,)
    w = _t(rng, *w_shape, grad=False)
    return lambda a: (a.sum(axis=axis) * w).sum(), [a]


def _probe_mean(rng, point):
    a = _t(rng, 3, 4)
    axis = (None, 0, 1)[point % 3]
    if axis is None:
        return lambda a: a.mean() * 2.0, [a]
    w_shape = (4,) if axis == 0 else (3,)
    w = _t(rng, *w_shape, grad=False)
    return lambda a: (a.mean(axis=axis) * w).sum(), [a]


def _probe_softmax_rows(rng, point):
    a = _t(rng, 3, 5, lo=-4, hi=4)
    w = _t(rng, 3, 5, grad=False)
    return lambda a: (tt.softmax_rows(a) * w).sum(), [a]


def _probe_layer_norm(rng, point):
    x, gamma, beta = _t(rng, 3, 6), _t(rng, 6), _t(rng, 6)
    w = _t(rng, 3, 6, grad=False)
    return lambda x, g, b: (tt.layer_norm(x, g, b) * w).sum(), [x, gamma, beta]


def _probe_gelu(rng, point):
    a = _t(rng, 3, 4, lo=-3, hi=3)
    w = _t(rng, 3, 4, grad=False)
    return lambda a: (tt.gelu(a) * w).sum(), [a]


def _probe_softplus(rng, point):
    a = _t(rng, 3, 4, lo=-6, hi=6)
    w = _t(rng, 3, 4, grad=False)
    return lambda a: (tt.softplus(a) * w).sum(), [a]


def _probe_dropout(rng, point):
    a = _t(rng, 3, 4)
    w = _t(rng, 3, 4, grad=False)
    return lambda a: (tt.dropout(a) * w).sum(), [a]


def _probe_embedding(rng, point):
    table = _t(rng, 7, 4)
    ids = rng.integers(0, 7, size=(2, 3))
    w = _t(rng, 2, 3, 4, grad=False)
    return lambda t: (tt.embedding(t, ids) * w).sum(), [table]


def _probe_masked_mean(rng, point):
    x = _t(rng, 2, 4, 3)
    mask = (rng.random((2, 4)) < 0.6).astype(float)
    mask[:, 0] = 1.0
    w = _t(rng, 2, 3, grad=False)
    return lambda x: (tt.masked_mean(x, mask) * w).sum(), [x]


def _probe_cross_entropy(rng, point):
    logits = _t(rng, 2, 3, 4, lo=-3, hi=3)
    gold = rng.integers(0, 4, size=(2, 3))
    mask = (rng.random((2, 3)) < 0.7).astype(float)
    mask[:, 0] = 1.0
    return lambda l: tt.cross_entropy(l, gold, mask), [logits]


def _probe_cosine_similarity(rng, point):
    a, b = _t(rng, 8), _t(rng, 8)
    return lambda a, b: O.cosine_similarity(a, b), [a, b]


def _probe_triplet_loss(rng, point):
    t, dp, dn = _t(rng, 8), _t(rng, 8), _t(rng, 8)
    return lambda t, dp, dn: O.triplet_loss(t, dp, dn)[0], [t, dp, dn]


def _probe_ner_loss(rng, point):
    logits = _t(rng, 1, 4, 5, lo=-3, hi=3)
    gold = rng.integers(0, 5, size=(1, 4))
    mask = np.ones((1, 4))
    return lambda l: O.ner_loss(l, gold, mask), [logits]


def _probe_multitask_loss(rng, point):
    a, b = _t(rng, 4), _t(rng, 4)
    lam = float(rng.uniform(0.0, 2.0))
    return lambda a, b: O.multitask_loss((a**2).sum(), (b**2).sum(), lam), [a, b]


_OP_PROBES = [
    ("add", _probe_add),
    ("sub", _probe_sub),
    ("mul", _probe_mul),
    ("div", _probe_div),
    ("neg", _probe_neg),
    ("pow_scalar", _probe_pow_scalar),
    ("matmul", _probe_matmul),
    ("reshape", _probe_reshape),
    ("swapaxes", _probe_swapaxes),
    ("sum", _probe_sum),
    ("mean", _probe_mean),
    ("softmax_rows", _probe_softmax_rows),
    ("layer_norm", _probe_layer_norm),
    ("gelu", _probe_gelu),
    ("softplus", _probe_softplus),
    ("dropout", _probe_dropout),
    ("embedding", _probe_embedding),
    ("masked_mean", _probe_masked_mean),
    ("cross_entropy", _probe_cross_entropy),
    ("cosine_similarity", _probe_cosine_similarity),
    ("triplet_loss", _probe_triplet_loss),
    ("ner_loss", _probe_ner_loss),
    ("multitask_loss", _probe_multitask_loss),
]


def _tiny_model(seed):
    cfg = M.EncoderConfig(
        vocab_size=20, max_len=8, d_model=16, n_heads=4, n_layers=2, d_ff=32, n_tags=5
    )
    params = M.init_params(cfg, seed)
    rng = np.random.default_rng(np.random.SeedSequence([_VERIFY_STREAM, seed, 999]))
    title = M.TokenBatch(rng.integers(2, 20, size=(1, 5)), np.ones((1, 5)))
    pos = M.TokenBatch(rng.integers(2, 20, size=(1, 7)), np.ones((1, 7)))
    neg = M.TokenBatch(rng.integers(2, 20, size=(1, 6)), np.ones((1, 6)))
    gold = rng.integers(1, 5, size=(1, 5))
    return params, title, pos, neg, gold


def _end_to_end_checks(seed):
    params, title, pos, neg, gold = _tiny_model(seed)
    inputs = list(params.tensors.values())

    def triplet_path(*_):
        t = M.pool_sentence(M.encode(params, title), title.mask)
        p = M.pool_sentence(M.encode(params, pos), pos.mask)
        n = M.pool_sentence(M.encode(params, neg), neg.mask)
        return O.triplet_loss_batch(t, p, n)[0]

    def ner_path(*_):
        logits = M.tag_logits(params, M.encode(params, title))
        return O.ner_loss(logits, gold, title.mask)

    def multitask_path(*_):
        return O.multitask_loss(ner_path(), triplet_path(), 1.0)

    return [
        ("encode_pool_triplet", triplet_path, inputs),
        ("encode_tag_ner", ner_path, inputs),
        ("multitask_end_to_end", multitask_path, inputs),
    ]


@contextlib.contextmanager
def corrupt_backward(op_name):
    """Deliberately mis-scale one backward kernel (test hook)."""
    if op_name is None:
        yield
        return
    if op_name != "gelu":
        raise DataError(f"corruptible backward rules: 'gelu'; got {op_name!r}")
    real = backend.kernels

    class _Corrupted:
        def __getattr__(self, name):
            if name == "gelu_bwd":
                return lambda x, gy: real.gelu_bwd(x, gy) * 1.02
            return getattr(real, name)

        NAME = real.NAME + "+corrupt"

    backend.kernels = _Corrupted()
    try:
        yield
    finally:
        backend.kernels = real


def gradcheck_suite(points=100, seed=0, corrupt=None, h=1e-5, sample=None):
    """Run every op probe; returns [(op_name, max_rel_error)], ops listed once.

    `sample` limits the end-to-end checks to that many random components per
    parameter tensor; None (the default) checks every component.
    """
    results = []
    with corrupt_backward(corrupt):
        for op_index, (name, probe) in enumerate(_OP_PROBES):
            worst = 0.0
            for point in range(points):
                f, inputs = probe(_rng(seed, op_index, point), point)
                worst = max(worst, grad_check(f, inputs, h=h))
            results.append((name, worst))
        rng = np.random.default_rng(np.random.SeedSequence([_VERIFY_STREAM, seed, 1000]))
        for name, f, inputs in _end_to_end_checks(seed):
            results.append((name, grad_check(f, inputs, h=h, sample=sample, rng=rng)))
    return results
