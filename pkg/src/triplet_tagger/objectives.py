"""Loss functions: cosine scores, the title/description triplet loss, the
token-tagging cross entropy, and their weighted combination.

The triplet loss contrasts one title embedding against its own description
(positive) and a randomly drawn other description (negative):

    c_p = cosine(title, pos_desc)
    c_n = cosine(title, neg_desc)
    d   = c_p - c_n
    loss = -log(sigmoid(d)) = softplus(-d)

which is the pairwise log-sigmoid ranking loss; minimizing it maximizes d.
``sigmoid_score`` exposes sigmoid(d) itself for monitoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import DimensionError, NumericError
from .tensor import Tensor

COSINE_EPS = 1e-8


@dataclass(frozen=True)
class TripletScores:
    """Cosine scores for one (title, positive, negative) triple."""

    c_p: float
    c_n: float
    d_i: float


@dataclass(frozen=True)
class TripletBatchScores:
    """Per-anchor cosine scores for a batch of triples."""

    c_p: np.ndarray
    c_n: np.ndarray
    d_i: np.ndarray

    def mean_sigmoid(self):
        return float(np.mean([sigmoid_score(d) for d in self.d_i]))


def cosine_similarity(a, b):
    """dot(a, b) / (|a| |b| + 1e-8), differentiable.

    Accepts single vectors [d] (returns a 0-d tensor) or row batches [n, d]
    (returns [n]).
    """
    a, b = tt._as_tensor(a), tt._as_tensor(b)
    if a.shape != b.shape or a.ndim not in (1, 2):
        raise DimensionError(f"cosine needs equal-shape vectors, got {a.shape}/{b.shape}")
    axis = a.ndim - 1
    dot = (a * b).sum(axis=axis)
    norm_a = (a * a).sum(axis=axis) ** 0.5
    norm_b = (b * b).sum(axis=axis) ** 0.5
    return dot / (norm_a * norm_b + COSINE_EPS)


def sigmoid_score(d_i):
    """The logistic link sigma(d_i), for reporting; not part of the loss graph."""
    d_i = float(d_i)
    if not math.isfinite(d_i):
        raise NumericError("sigmoid_score on a non-finite value")
    if d_i >= 0:
        return 1.0 / (1.0 + math.exp(-d_i))
    e = math.exp(d_i)
    return e / (1.0 + e)


def triplet_loss(t_i, d_p, d_n):
    """-log sigmoid(cosine(t_i, d_p) - cosine(t_i, d_n)) for single vectors.

    Returns (loss tensor, TripletScores). Strictly decreasing in d_i and
    always positive.
    """
    c_p = cosine_similarity(t_i, d_p)
    c_n = cosine_similarity(t_i, d_n)
    d = c_p - c_n
    loss = tt.softplus(-d)
    scores = TripletScores(c_p=c_p.item(), c_n=c_n.item(), d_i=d.item())
    return loss, scores


def triplet_loss_batch(titles, pos, neg):
    """Mean triplet loss over row-aligned [n, d] embedding batches."""
    c_p = cosine_similarity(titles, pos)
    c_n = cosine_similarity(titles, neg)
    d = c_p - c_n
    loss = tt.softplus(-d).mean()
    scores = TripletBatchScores(
        c_p=c_p.data.copy(), c_n=c_n.data.copy(), d_i=d.data.copy()
    )
    return loss, scores


def ner_loss(logits, gold, mask):
    """Mean over unmasked tokens of -log softmax(logits)[gold]."""
    return tt.cross_entropy(logits, gold, mask)


def multitask_loss(l_ner, l_triplet, lam):
    """l_ner + lam * l_triplet. Works on floats or loss tensors."""
    lam = float(lam)
    if lam < 0 or not math.isfinite(lam):
        raise NumericError(f"mixing weight must be finite and >= 0, got {lam}")
    if isinstance(l_ner, Tensor) or isinstance(l_triplet, Tensor):
        return tt._as_tensor(l_ner) + lam * tt._as_tensor(l_triplet)
    if not (math.isfinite(l_ner) and math.isfinite(l_triplet)):
        raise NumericError("non-finite loss term")
    return l_ner + lam * l_triplet
