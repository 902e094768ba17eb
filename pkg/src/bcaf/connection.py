"""Interactive connection network.

Per-modality encoder/decoder stacks over utterance feature rows, plus
the connection loss that ties reconstruction quality to cross-modal
alignment of both the latent and the reconstructed spaces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from bcaf.errors import ConfigError
from bcaf.rng import RngState
from bcaf.tensor import (
    Tensor,
    add,
    clamp,
    dropout,
    frobenius_sq,
    linear,
    matmul,
    relu,
    scale,
    sub,
    transpose_last2,
)


@dataclass
class ConnectionOutput:
    """Latents and reconstructions for the mask-true utterances [N, *]."""

    e_a: Tensor
    e_l: Tensor
    d_a: Tensor
    d_l: Tensor


def encoder_widths(d_model: int, d_latent: int) -> list[int]:
    """Gently decreasing 3-stage widths (e.g. 1024 -> 768 -> 640 -> 512)."""
    h1 = max(d_latent, int(round(0.75 * d_model)))
    h2 = max(d_latent, int(round(0.625 * d_model)))
    return [d_model, h1, h2, d_latent]


def encode(
    h_m: Tensor,
    view: Dict[str, Tensor],
    dropout_p: float = 0.0,
    training: bool = False,
    rng: Optional[RngState] = None,
) -> Tensor:
    """Three affine+ReLU stages; dropout after the two hidden stages."""
    x = h_m
    for i in range(3):
        x = relu(linear(x, view[f"enc{i}.w"], view[f"enc{i}.b"]))
        if i < 2:
            x = dropout(x, dropout_p, training, rng)
    return x


def decode(
    e_m: Tensor,
    view: Dict[str, Tensor],
    dropout_p: float = 0.0,
    training: bool = False,
    rng: Optional[RngState] = None,
    final_relu: bool = False,
) -> Tensor:
    """Mirror of encode; final stage is linear so signed features are
    reconstructible (ReLU there is available behind ``final_relu``)."""
    x = e_m
    for i in range(3):
        x = linear(x, view[f"dec{i}.w"], view[f"dec{i}.b"])
        if i < 2:
            x = relu(x)
            x = dropout(x, dropout_p, training, rng)
        elif final_relu:
            x = relu(x)
    return x


def connection_loss(
    h_a: Tensor,
    h_l: Tensor,
    out: ConnectionOutput,
    mu: float,
    normalized: bool = True,
    clip: float = 0.0,
) -> Tensor:
    """Reconstruction error plus identity-targeted cross-Gram alignment.

    loss = |H_a - d_a|_F^2 + |H_l - d_l|_F^2
           + mu * (|I - e_a^T e_l|_F^2 - |I - d_a^T d_l|_F^2)

    With ``normalized`` each squared norm is divided by its element
    count, keeping the scale independent of the feature dims. ``clip``
    > 0 bounds the loss from below at -clip (the subtracted Gram term is
    unbounded in isolation).
    """
    if mu < 0:
        raise ConfigError(f"connection loss mu must be >= 0, got {mu}")
    n, d_model = h_a.shape
    d_latent = out.e_a.shape[-1]

    def norm_term(t: Tensor, count: int) -> Tensor:
        f = frobenius_sq(t)
        return scale(f, 1.0 / count) if normalized else f

    rec_a = norm_term(sub(h_a, out.d_a), n * d_model)
    rec_l = norm_term(sub(h_l, out.d_l), n * d_model)
    loss = add(rec_a, rec_l)
    if mu != 0.0:
        eye_e = Tensor(np.eye(d_latent, dtype=np.float32))
        eye_d = Tensor(np.eye(d_model, dtype=np.float32))
        gram_e = matmul(transpose_last2(out.e_a), out.e_l)
        gram_d = matmul(transpose_last2(out.d_a), out.d_l)
        align_e = norm_term(sub(eye_e, gram_e), d_latent * d_latent)
        align_d = norm_term(sub(eye_d, gram_d), d_model * d_model)
        loss = add(loss, scale(sub(align_e, align_d), mu))
    if clip > 0.0:
        loss = clamp(loss, lo=-clip)
    return loss
