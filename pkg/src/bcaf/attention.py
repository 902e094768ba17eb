"""Bimodal attention network.

Stacked per-modality self-attention and bidirectional cross-attention
towers over the utterances of each conversation, with reduced variants:
self-only, cross-only, and a joint dual-softmax formulation. Masked
(padded) utterance slots are excluded as keys and zeroed as outputs, so
a padded batch computes exactly what the unpadded conversations would.
"""

from __future__ import annotations

import math
from typing import Dict, Optional, Tuple

import numpy as np

from bcaf.config import TrainConfig
from bcaf.correlative import joint_attention
from bcaf.errors import ConfigError
from bcaf.rng import RngState
from bcaf.tensor import (
    Tensor,
    add,
    dropout,
    layer_norm,
    linear,
    matmul,
    mul,
    permute,
    relu,
    reshape,
    scale,
    softmax_rows,
    transpose_last2,
)


def _zero_masked(x: Tensor, mask: np.ndarray) -> Tensor:
    return mul(x, Tensor(mask[..., None].astype(np.float32)))


def scaled_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: np.ndarray,
    num_heads: int = 1,
    return_weights: bool = False,
):
    """softmax(Q K^T / sqrt(d_k)) V over the utterance axis.

    ``mask`` [B, T] hides padded keys; query rows are left to the caller
    (blocks zero their masked outputs). With ``num_heads`` > 1 the model
    width is split into heads and d_k shrinks accordingly.
    """
    b, t, d = q.shape
    if num_heads == 1:
        scores = scale(matmul(q, transpose_last2(k)), 1.0 / math.sqrt(d))
        weights = softmax_rows(scores, mask[:, None, :])
        ctx = matmul(weights, v)
        return (ctx, weights.data.copy()) if return_weights else (ctx, None)
    dk = d // num_heads

    def split(x: Tensor) -> Tensor:  # [B, T, d] -> [B, h, T, dk]
        return permute(reshape(x, (b, t, num_heads, dk)), (0, 2, 1, 3))

    qh, kh, vh = split(q), split(k), split(v)
    scores = scale(matmul(qh, transpose_last2(kh)), 1.0 / math.sqrt(dk))
    weights = softmax_rows(scores, mask[:, None, None, :])
    ctx = reshape(permute(matmul(weights, vh), (0, 2, 1, 3)), (b, t, d))
    return (ctx, weights.data.copy()) if return_weights else (ctx, None)


def _feed_forward(x: Tensor, view: Dict[str, Tensor]) -> Tensor:
    return linear(relu(linear(x, view["ff1.w"], view["ff1.b"])), view["ff2.w"], view["ff2.b"])


def _residual_block(
    x: Tensor,
    attended: Tensor,
    mask: np.ndarray,
    view: Dict[str, Tensor],
    cfg: TrainConfig,
    training: bool,
    rng: Optional[RngState],
) -> Tensor:
    """LayerNorm(x + attention), then LayerNorm(. + FeedForward(.))."""
    attended = dropout(attended, cfg.dropout, training, rng)
    h = layer_norm(add(x, attended), view["ln1.g"], view["ln1.b"])
    ff = dropout(_feed_forward(h, view), cfg.dropout, training, rng)
    out = layer_norm(add(h, ff), view["ln2.g"], view["ln2.b"])
    return _zero_masked(out, mask)


def self_attention_block(
    h_m: Tensor,
    mask: np.ndarray,
    view: Dict[str, Tensor],
    cfg: TrainConfig,
    training: bool = False,
    rng: Optional[RngState] = None,
) -> Tensor:
    """Intra-modal attention: queries, keys and values from one modality."""
    q = matmul(h_m, view["wq"])
    k = matmul(h_m, view["wk"])
    v = matmul(h_m, view["wv"])
    ctx, _ = scaled_attention(q, k, v, mask, cfg.num_heads)
    return _residual_block(h_m, ctx, mask, view, cfg, training, rng)


def cross_attention_block(
    h_a: Tensor,
    h_l: Tensor,
    mask: np.ndarray,
    view_a: Dict[str, Tensor],
    view_l: Dict[str, Tensor],
    cfg: TrainConfig,
    training: bool = False,
    rng: Optional[RngState] = None,
) -> Tuple[Tensor, Tensor]:
    """Inter-modal attention, both directions with distinct parameters.

    The audio output attends with text-derived queries over audio
    keys/values, and symmetrically for the text output.
    """
    q_l = matmul(h_l, view_a["wq"])
    k_a = matmul(h_a, view_a["wk"])
    v_a = matmul(h_a, view_a["wv"])
    ctx_a, _ = scaled_attention(q_l, k_a, v_a, mask, cfg.num_heads)
    out_a = _residual_block(h_a, ctx_a, mask, view_a, cfg, training, rng)

    q_a = matmul(h_a, view_l["wq"])
    k_l = matmul(h_l, view_l["wk"])
    v_l = matmul(h_l, view_l["wv"])
    ctx_l, _ = scaled_attention(q_a, k_l, v_l, mask, cfg.num_heads)
    out_l = _residual_block(h_l, ctx_l, mask, view_l, cfg, training, rng)
    return out_a, out_l


def sinusoidal_encoding(t: int, d: int) -> np.ndarray:
    """Standard sine/cosine position table [T, d]."""
    pos = np.arange(t, dtype=np.float64)[:, None]
    idx = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / d)
    pe = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(np.float32)


def _jan_layer(
    x_a: Tensor,
    x_l: Tensor,
    mask: np.ndarray,
    joint_view: Dict[str, Tensor],
    view_a: Dict[str, Tensor],
    view_l: Dict[str, Tensor],
    cfg: TrainConfig,
    training: bool,
    rng: Optional[RngState],
) -> Tuple[Tensor, Tensor]:
    ctx = joint_attention(x_a, x_l, mask, joint_view, symmetric=cfg.symmetric_joint)
    out_a = _residual_block(x_a, ctx, mask, view_a, cfg, training, rng)
    out_l = _residual_block(x_l, ctx, mask, view_l, cfg, training, rng)
    return out_a, out_l


def ban_forward(
    h_a: Tensor,
    h_l: Tensor,
    mask: np.ndarray,
    cfg: TrainConfig,
    params,
    training: bool = False,
    rng: Optional[RngState] = None,
    enable_self: Optional[bool] = None,
    enable_cross: Optional[bool] = None,
) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
    """Run the configured attention variant; returns (hs_a, hs_l, hc_a, hc_l).

    The self and cross towers evolve independently, each layer consuming
    the previous layer's output of its own tower. The reduced variants
    drop one tower and mirror the remaining one; ``enable_self`` /
    ``enable_cross`` override the variant's wiring for equivalence
    checks. The JAN variant runs joint dual-softmax layers whose output
    serves as both tower results.
    """
    variant = cfg.variant
    if variant not in ("BAN", "JAN", "BAN-SA", "BAN-CA"):
        raise ConfigError(f"unknown attention variant {variant!r}")

    if cfg.positional == "sinusoidal":
        pe = Tensor(sinusoidal_encoding(h_a.shape[1], h_a.shape[2])[None])
        h_a = _zero_masked(add(h_a, pe), mask)
        h_l = _zero_masked(add(h_l, pe), mask)

    if variant == "JAN":
        x_a, x_l = h_a, h_l
        for i in range(cfg.num_layers):
            x_a, x_l = _jan_layer(
                x_a,
                x_l,
                mask,
                params.view(f"attn.layer{i}.joint"),
                params.view(f"attn.layer{i}.jan_a"),
                params.view(f"attn.layer{i}.jan_l"),
                cfg,
                training,
                rng,
            )
        return x_a, x_l, x_a, x_l

    use_self = enable_self if enable_self is not None else variant != "BAN-CA"
    use_cross = enable_cross if enable_cross is not None else variant != "BAN-SA"

    s_a, s_l = h_a, h_l
    if use_self:
        for i in range(cfg.num_layers):
            s_a = self_attention_block(
                s_a, mask, params.view(f"attn.layer{i}.self_a"), cfg, training, rng
            )
            s_l = self_attention_block(
                s_l, mask, params.view(f"attn.layer{i}.self_l"), cfg, training, rng
            )

    c_a, c_l = h_a, h_l
    if use_cross:
        for i in range(cfg.num_layers):
            c_a, c_l = cross_attention_block(
                c_a,
                c_l,
                mask,
                params.view(f"attn.layer{i}.cross_a"),
                params.view(f"attn.layer{i}.cross_l"),
                cfg,
                training,
                rng,
            )

    if not use_cross:
        c_a, c_l = s_a, s_l
    if not use_self:
        s_a, s_l = c_a, c_l
    return s_a, s_l, c_a, c_l
