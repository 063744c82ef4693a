"""NumPy implementations of the hot kernels.

This is the fallback backend: every function here has a signature-identical
twin in ``_kernels_cy`` (the compiled extension). Arrays are C-contiguous
float64 throughout; index arrays are int64. Forward kernels return fresh
arrays; ``adam_update`` and ``embedding_bwd`` mutate in place.
"""

import numpy as np
from scipy.special import erf

NAME = "python"

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def all_finite(x):
    return bool(np.isfinite(x).all())


def softmax_fwd(x):
    """Row softmax of a 2-d array, max-subtracted for stability."""
    shifted = x - x.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def softmax_bwd(y, gy):
    inner = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - inner)


def layernorm_fwd(x, gamma, beta, eps):
    """Normalize each row to zero mean / unit variance, then affine.

    Returns (y, xhat, inv_std); the latter two are reused by the backward.
    """
    mu = x.mean(axis=1, keepdims=True)
    centered = x - mu
    var = np.mean(centered * centered, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return xhat * gamma + beta, xhat, inv_std.reshape(-1)


def layernorm_bwd(gy, xhat, inv_std, gamma):
    n = xhat.shape[1]
    dgamma = (gy * xhat).sum(axis=0)
    dbeta = gy.sum(axis=0)
    gxhat = gy * gamma
    mean_g = gxhat.sum(axis=1, keepdims=True) / n
    mean_gx = (gxhat * xhat).sum(axis=1, keepdims=True) / n
    gx = inv_std[:, None] * (gxhat - mean_g - xhat * mean_gx)
    return gx, dgamma, dbeta


def gelu_fwd(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(x, gy):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return gy * (cdf + x * pdf)


def cross_entropy_fwd(logits, gold, mask):
    """Masked token-level NLL over a [n_tokens, n_classes] logit block.

    Returns (sum of -log p[gold] over mask==1 tokens, softmax probabilities).
    """
    probs = softmax_fwd(logits)
    picked = probs[np.arange(logits.shape[0]), gold]
    picked = np.where(mask > 0.0, picked, 1.0)
    with np.errstate(divide="ignore"):
        nll = -(np.log(picked) * mask).sum()
    return float(nll), probs

def cross_entropy_bwd(probs, gold, mask, scale):
    gx = probs * (mask * scale)[:, None]
    gx[np.arange(probs.shape[0]), gold] -= mask * scale
    return gx


def masked_mean_fwd(x, mask, counts):
    return np.einsum("bsd,bs->bd", x, mask) / counts[:, None]


def masked_mean_bwd(gy, mask, counts):
    return gy[:, None, :] * (mask / counts[:, None])[:, :, None]


def embedding_bwd(gtable, ids, gy):
    # np.add.at is unbuffered: repeated ids accumulate, in index order.
    np.add.at(gtable, ids, gy)


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam step, applied in place."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
