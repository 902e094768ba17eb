"""Numpy implementations of the hot kernels.

This module is the import-time fallback for ``bcaf._kernels`` (the
compiled Cython core). Both backends expose the same functions with the
same semantics: float32 in/out, float64 accumulation, masked entries
written as exact zeros. Shapes are pre-flattened to 2-d by the caller.
"""

from __future__ import annotations

import numpy as np

IS_COMPILED = False

_NEG_BIG = -1e9


def softmax_rows_fwd(x, mask, out):
    """Row softmax of ``x`` [R, n]; ``mask`` is uint8 [R, n] or None.

    Masked entries receive an additive -1e9 before the row-max shift and
    are zeroed exactly in the output. Rows must have >= 1 unmasked entry
    (validated by the caller).
    """
    z = x.astype(np.float64)
    if mask is not None:
        z = np.where(mask != 0, z, z + _NEG_BIG)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    if mask is not None:
        e[mask == 0] = 0.0
    e /= e.sum(axis=1, keepdims=True)
    out[...] = e.astype(np.float32)


def softmax_rows_bwd(y, gy, mask, gx):
    """gx = y * (gy - sum(gy * y)) per row; masked entries get zero."""
    y64 = y.astype(np.float64)
    g64 = gy.astype(np.float64)
    s = (y64 * g64).sum(axis=1, keepdims=True)
    g = y64 * (g64 - s)
    if mask is not None:
        g[mask == 0] = 0.0
    gx[...] = g.astype(np.float32)


def layer_norm_fwd(x, gain, bias, eps, out, mean, rstd):
    """Normalize each row of ``x`` [R, n] to mean 0 / var 1, then affine.

    Saves per-row mean and reciprocal std for the backward pass.
    """
    x64 = x.astype(np.float64)
    mu = x64.mean(axis=1)
    var = x64.var(axis=1)
    r = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mu[:, None]) * r[:, None]
    out[...] = (xhat * gain.astype(np.float64) + bias.astype(np.float64)).astype(
        np.float32
    )
    mean[...] = mu.astype(np.float32)
    rstd[...] = r.astype(np.float32)


def layer_norm_bwd(x, gain, mean, rstd, gout, gx, ggain, gbias):
    """Gradient of layer_norm_fwd w.r.t. input, gain and bias.

    ggain/gbias are accumulated (+=) so a caller can fold several row
    blocks into one parameter gradient.
    """
    x64 = x.astype(np.float64)
    g64 = gout.astype(np.float64)
    mu = mean.astype(np.float64)[:, None]
    r = rstd.astype(np.float64)[:, None]
    xhat = (x64 - mu) * r
    gxhat = g64 * gain.astype(np.float64)
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx[...] = (r * (gxhat - m1 - xhat * m2)).astype(np.float32)
    ggain += (g64 * xhat).sum(axis=0).astype(np.float32)
    gbias += g64.sum(axis=0).astype(np.float32)


def relu_fwd(x, out):
    np.maximum(x, 0.0, out=out)


def relu_bwd(x, gout, gx):
    gx[...] = np.where(x > 0.0, gout, np.float32(0.0))


def cross_entropy_fwd(logits, labels, out_loss, out_softmax):
    """Per-row -log softmax(logits)[label]; softmax saved for backward."""
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    denom = e.sum(axis=1, keepdims=True)
    p = e / denom
    rows = np.arange(logits.shape[0])
    out_loss[...] = (np.log(denom[:, 0]) - z[rows, labels]).astype(np.float32)
    out_softmax[...] = p.astype(np.float32)


def cross_entropy_bwd(softmax, labels, gout, gx):
    """gx = (softmax - onehot(label)) * gout per row."""
    g = softmax.astype(np.float64) * gout.astype(np.float64)[:, None]
    rows = np.arange(softmax.shape[0])
    g[rows, labels] -= gout.astype(np.float64)
    gx[...] = g.astype(np.float32)


def adam_step_kernel(p, g, m, v, t, lr, beta1, beta2, eps, l2, decoupled):
    """Fused Adam update, in place on flat float32 views.

    Coupled L2 adds l2*p to the gradient before the moment update;
    decoupled subtracts lr*l2*p from the parameter afterwards.
    """
    g64 = g.astype(np.float64)
    p64 = p.astype(np.float64)
    if l2 != 0.0 and not decoupled:
        g64 = g64 + l2 * p64
    m64 = beta1 * m.astype(np.float64) + (1.0 - beta1) * g64
    v64 = beta2 * v.astype(np.float64) + (1.0 - beta2) * g64 * g64
    mhat = m64 / (1.0 - beta1**t)
    vhat = v64 / (1.0 - beta2**t)
    p64 = p64 - lr * mhat / (np.sqrt(vhat) + eps)
    if l2 != 0.0 and decoupled:
        p64 = p64 - lr * l2 * p.astype(np.float64)
    m[...] = m64.astype(np.float32)
    v[...] = v64.astype(np.float32)
    p[...] = p64.astype(np.float32)
