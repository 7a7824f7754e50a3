"""NumPy implementations of the hot forward kernels.

Used when the compiled ``_core`` extension is unavailable, or when
``ENVTRICASCADE_PURE=1`` is set. Both backends take float64 C-contiguous
arrays and must agree to within rounding.
"""

import numpy as np

VAR_EPS = 1e-9


def layer_fuse(X, w):
    """Softmax over layers of ``X @ w`` and the alpha-weighted layer sum.

    X: (B, L, T, D), w: (D,). Returns alpha (B, L, T) and H (B, T, D).
    """
    scores = X @ w
    scores -= scores.max(axis=1, keepdims=True)
    alpha = np.exp(scores)
    alpha /= alpha.sum(axis=1, keepdims=True)
    H = np.einsum("blt,bltd->btd", alpha, X)
    return alpha, H


def attentive_stats(seq, w, b):
    """Attention over time followed by weighted mean / std.

    seq: (B, T, H). Returns a (B, T), mu (B, H), sd (B, H), var (B, H).
    ``var`` is the unfloored second moment minus mu**2.
    """
    e = seq @ w + b
    e -= e.max(axis=1, keepdims=True)
    a = np.exp(e)
    a /= a.sum(axis=1, keepdims=True)
    mu = np.einsum("bt,bth->bh", a, seq)
    m2 = np.einsum("bt,bth->bh", a, seq * seq)
    var = m2 - mu * mu
    sd = np.sqrt(np.maximum(var, 0.0) + VAR_EPS)
    return a, mu, sd, var
