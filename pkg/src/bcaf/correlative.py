"""Correlative attention network.

Joint dual-softmax attention over both modalities, per-utterance
cosine correlation of latent unimodal vectors against the projected
joint representation, correlation-scaled unimodal halves, and the final
feature concatenation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from bcaf.tensor import (
    Tensor,
    add,
    clamp,
    concat_last_axis,
    cosine_similarity,
    linear,
    matmul,
    mul,
    reshape,
    scale,
    softmax_rows,
    sub,
    transpose_last2,
)

LAMBDA_RANGE = 2.0


@dataclass
class CorrelativeOutput:
    """Joint representation and its correlation-derived by-products.

    All padded to [B, T, *] with zeros at masked slots; ``fused`` is the
    concatenation fed to the fused classification head.
    """

    h_star: Tensor  # [B, T, d_model]
    h_b: Tensor  # [B, T, d_latent]
    cor_a: Tensor  # [B, T]
    cor_l: Tensor  # [B, T]
    h_star_a: Tensor  # [B, T, d_latent]
    h_star_l: Tensor  # [B, T, d_latent]
    fused: Tensor  # [B, T, 2*d_model + 2*d_latent]


def _zero_masked(x: Tensor, mask: np.ndarray) -> Tensor:
    return mul(x, Tensor(mask[..., None].astype(np.float32)))


def joint_attention(
    h_s_a: Tensor,
    h_s_l: Tensor,
    mask: np.ndarray,
    view: Dict[str, Tensor],
    symmetric: bool = False,
    return_weights: bool = False,
) -> Tensor | Tuple[Tensor, np.ndarray]:
    """Dual-softmax joint attention.

    Intra-modal scores of both modalities are summed under one softmax;
    a learnable scalar (clamped to [-2, 2]) subtracts the cross-modal
    softmax. Values are the mean of the two modality value projections.
    With ``symmetric`` the two cross directions are averaged instead of
    using only the audio-query/text-key direction.
    """
    d = h_s_a.shape[-1]
    inv_sqrt = 1.0 / math.sqrt(d)
    q_a = matmul(h_s_a, view["wq_a"])
    k_a = matmul(h_s_a, view["wk_a"])
    v_a = matmul(h_s_a, view["wv_a"])
    q_l = matmul(h_s_l, view["wq_l"])
    k_l = matmul(h_s_l, view["wk_l"])
    v_l = matmul(h_s_l, view["wv_l"])

    key_mask = mask[:, None, :]  # [B, 1, T] broadcast over query rows
    intra = scale(
        add(matmul(q_a, transpose_last2(k_a)), matmul(q_l, transpose_last2(k_l))),
        inv_sqrt,
    )
    w_intra = softmax_rows(intra, key_mask)
    cross = softmax_rows(scale(matmul(q_a, transpose_last2(k_l)), inv_sqrt), key_mask)
    if symmetric:
        mirror = softmax_rows(
            scale(matmul(q_l, transpose_last2(k_a)), inv_sqrt), key_mask
        )
        cross = scale(add(cross, mirror), 0.5)
    lam = clamp(view["lam"], -LAMBDA_RANGE, LAMBDA_RANGE)
    weights = sub(w_intra, mul(lam, cross))
    v_joint = scale(add(v_a, v_l), 0.5)
    h_star = _zero_masked(matmul(weights, v_joint), mask)
    if return_weights:
        return h_star, weights.data.copy()
    return h_star


def correlation_coefficients(
    e_a: Tensor,
    e_l: Tensor,
    h_star_packed: Tensor,
    view: Dict[str, Tensor],
) -> Tuple[Tensor, Tensor, Tensor]:
    """Project the joint representation to the latent width and measure
    per-utterance cosine similarity against each modality latent."""
    h_b = linear(h_star_packed, view["hb.w"], view["hb.b"])
    cor_a = cosine_similarity(e_a, h_b)
    cor_l = cosine_similarity(e_l, h_b)
    return h_b, cor_a, cor_l


def correlative_scale(
    h_s_a_packed: Tensor,
    h_s_l_packed: Tensor,
    cor_a: Tensor,
    cor_l: Tensor,
    view: Dict[str, Tensor],
) -> Tuple[Tensor, Tensor]:
    """Halve each self-attention representation with a learned affine,
    then weight every utterance by its correlation coefficient."""
    n = cor_a.shape[0]
    proj_a = linear(h_s_a_packed, view["proj_a.w"], view["proj_a.b"])
    proj_l = linear(h_s_l_packed, view["proj_l.w"], view["proj_l.b"])
    h_star_a = mul(proj_a, reshape(cor_a, (n, 1)))
    h_star_l = mul(proj_l, reshape(cor_l, (n, 1)))
    return h_star_a, h_star_l


def aggregate(
    h_c_a: Tensor, h_c_l: Tensor, h_star_a: Tensor, h_star_l: Tensor
) -> Tensor:
    """Concatenate cross representations and scaled halves; width is
    2*d_model + 2*d_latent (3072 at the default 1024/512)."""
    return concat_last_axis([h_c_a, h_c_l, h_star_a, h_star_l])
