"""Full model assembly: parameters, forward pass, and the objective.

The padded [B, T, *] batch flows through the attention towers, while
the connection network, correlation, heads and losses operate on the
packed mask-true utterance rows, so padded slots can never leak into a
loss. Ablated components are replaced by the minimal shape-preserving
bypass: no connection net -> learned affine latents and a zero
connection loss; no attention -> identity towers; no correlative net ->
the fused head reads the concatenated cross representations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from bcaf.attention import ban_forward
from bcaf.config import TrainConfig
from bcaf.connection import (
    ConnectionOutput,
    connection_loss,
    decode,
    encode,
    encoder_widths,
)
from bcaf.correlative import (
    CorrelativeOutput,
    aggregate,
    correlation_coefficients,
    correlative_scale,
    joint_attention,
)
from bcaf.dataio import Batch
from bcaf.errors import ConfigError
from bcaf.params import ParamSet
from bcaf.rng import RngState
from bcaf.tensor import (
    Tensor,
    add,
    concat_last_axis,
    cross_entropy,
    linear,
    mean_vector,
    pack_rows,
    scale,
    scatter_rows,
)


@dataclass
class ForwardResult:
    logits_audio: Tensor  # [B, T, C], zeros at masked slots
    logits_text: Tensor
    logits_fused: Tensor
    connection_loss: Tensor  # scalar
    connection: Optional[ConnectionOutput]
    correlative: Optional[CorrelativeOutput]
    flat_index: np.ndarray


# -- parameter construction -----------------------------------------------------


def _glorot(rng: RngState, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform((fan_in, fan_out), -limit, limit)


def _add_affine(ps: ParamSet, rng: RngState, name: str, d_in: int, d_out: int):
    ps.add(f"{name}.w", _glorot(rng, d_in, d_out))
    ps.add(f"{name}.b", np.zeros(d_out, dtype=np.float32))


def _add_block(ps: ParamSet, rng: RngState, prefix: str, d: int, d_ff: int):
    for w in ("wq", "wk", "wv"):
        ps.add(f"{prefix}.{w}", _glorot(rng, d, d))
    _add_ffn_lns(ps, rng, prefix, d, d_ff)


def _add_ffn_lns(ps: ParamSet, rng: RngState, prefix: str, d: int, d_ff: int):
    for ln in ("ln1", "ln2"):
        ps.add(f"{prefix}.{ln}.g", np.ones(d, dtype=np.float32))
        ps.add(f"{prefix}.{ln}.b", np.zeros(d, dtype=np.float32))
    _add_affine(ps, rng, f"{prefix}.ff1", d, d_ff)
    _add_affine(ps, rng, f"{prefix}.ff2", d_ff, d)


def _add_joint(ps: ParamSet, rng: RngState, prefix: str, d: int):
    for m in ("a", "l"):
        for w in ("wq", "wk", "wv"):
            ps.add(f"{prefix}.{w}_{m}", _glorot(rng, d, d))
    ps.add(f"{prefix}.lam", np.zeros(1, dtype=np.float32))


def init_params(cfg: TrainConfig, num_classes: int, rng: RngState) -> ParamSet:
    """Allocate every trainable tensor the configured model needs."""
    if num_classes < 2:
        raise ConfigError(f"need >= 2 classes, got {num_classes}")
    d = cfg.d_model
    lat = cfg.latent_dim
    ps = ParamSet()

    if "icn" not in cfg.ablations:
        widths = encoder_widths(d, lat)
        for m in ("audio", "text"):
            for i in range(3):
                _add_affine(ps, rng, f"icn.{m}.enc{i}", widths[i], widths[i + 1])
            for i in range(3):
                _add_affine(ps, rng, f"icn.{m}.dec{i}", widths[3 - i], widths[2 - i])
    elif "can" not in cfg.ablations:
        # correlation still needs per-modality latents
        for m in ("audio", "text"):
            _add_affine(ps, rng, f"icn_bypass.{m}", d, lat)

    if "ban" not in cfg.ablations:
        for i in range(cfg.num_layers):
            if cfg.variant == "JAN":
                _add_joint(ps, rng, f"attn.layer{i}.joint", d)
                _add_ffn_lns(ps, rng, f"attn.layer{i}.jan_a", d, cfg.ff_dim)
                _add_ffn_lns(ps, rng, f"attn.layer{i}.jan_l", d, cfg.ff_dim)
                continue
            if cfg.variant != "BAN-CA":
                _add_block(ps, rng, f"attn.layer{i}.self_a", d, cfg.ff_dim)
                _add_block(ps, rng, f"attn.layer{i}.self_l", d, cfg.ff_dim)
            if cfg.variant != "BAN-SA":
                _add_block(ps, rng, f"attn.layer{i}.cross_a", d, cfg.ff_dim)
                _add_block(ps, rng, f"attn.layer{i}.cross_l", d, cfg.ff_dim)

    if "can" not in cfg.ablations:
        _add_joint(ps, rng, "can.joint", d)
        _add_affine(ps, rng, "can.hb", d, lat)
        _add_affine(ps, rng, "can.proj_a", d, lat)
        _add_affine(ps, rng, "can.proj_l", d, lat)
        fused_width = 2 * d + 2 * lat
    else:
        fused_width = 2 * d

    _add_affine(ps, rng, "head.audio", d, num_classes)
    _add_affine(ps, rng, "head.text", d, num_classes)
    _add_affine(ps, rng, "head.fused", fused_width, num_classes)
    return ps


def num_classes_of(params: ParamSet) -> int:
    return params["head.audio.w"].shape[1]


def fused_width_of(cfg: TrainConfig) -> int:
    if "can" in cfg.ablations:
        return 2 * cfg.d_model
    return 2 * cfg.d_model + 2 * cfg.latent_dim


# -- forward ---------------------------------------------------------------------


def forward(
    batch: Batch,
    params: ParamSet,
    cfg: TrainConfig,
    training: bool = False,
    rng: Optional[RngState] = None,
) -> ForwardResult:
    """Run the three networks in parallel and apply the three heads."""
    if batch.audio.shape[-1] != cfg.d_model:
        raise ConfigError(
            f"batch feature dim {batch.audio.shape[-1]} != config d_model {cfg.d_model}"
        )
    mask = batch.mask
    b, t = mask.shape
    flat = batch.flat_index()
    h_a = Tensor(batch.audio)
    h_l = Tensor(batch.text)
    h_a_p = pack_rows(h_a, flat)
    h_l_p = pack_rows(h_l, flat)

    # connection network (or its bypass)
    conn: Optional[ConnectionOutput] = None
    e_a = e_l = None
    if "icn" not in cfg.ablations:
        va, vl = params.view("icn.audio"), params.view("icn.text")
        e_a = encode(h_a_p, va, cfg.dropout, training, rng)
        e_l = encode(h_l_p, vl, cfg.dropout, training, rng)
        d_a = decode(e_a, va, cfg.dropout, training, rng, cfg.decoder_final_relu)
        d_l = decode(e_l, vl, cfg.dropout, training, rng, cfg.decoder_final_relu)
        conn = ConnectionOutput(e_a, e_l, d_a, d_l)
        l_c = connection_loss(
            h_a_p,
            h_l_p,
            conn,
            cfg.mu,
            cfg.connection_normalized,
            cfg.connection_loss_clip,
        )
    else:
        l_c = Tensor(np.float32(0.0))
        if "can" not in cfg.ablations:
            e_a = linear(h_a_p, params["icn_bypass.audio.w"], params["icn_bypass.audio.b"])
            e_l = linear(h_l_p, params["icn_bypass.text.w"], params["icn_bypass.text.b"])

    # attention towers (or identity bypass)
    if "ban" not in cfg.ablations:
        hs_a, hs_l, hc_a, hc_l = ban_forward(
            h_a, h_l, mask, cfg, params, training, rng
        )
    else:
        hs_a, hs_l, hc_a, hc_l = h_a, h_l, h_a, h_l

    hs_a_p = pack_rows(hs_a, flat)
    hs_l_p = pack_rows(hs_l, flat)
    hc_a_p = pack_rows(hc_a, flat)
    hc_l_p = pack_rows(hc_l, flat)

    # correlative network (or plain cross concatenation)
    corr: Optional[CorrelativeOutput] = None
    if "can" not in cfg.ablations:
        h_star = joint_attention(
            hs_a, hs_l, mask, params.view("can.joint"), cfg.symmetric_joint
        )
        h_star_p = pack_rows(h_star, flat)
        h_b, cor_a, cor_l = correlation_coefficients(
            e_a, e_l, h_star_p, params.view("can")
        )
        hstar_a, hstar_l = correlative_scale(
            hs_a_p, hs_l_p, cor_a, cor_l, params.view("can")
        )
        fused_p = aggregate(hc_a_p, hc_l_p, hstar_a, hstar_l)
        corr = CorrelativeOutput(
            h_star=h_star,
            h_b=scatter_rows(h_b, flat, (b, t)),
            cor_a=scatter_rows(cor_a, flat, (b, t)),
            cor_l=scatter_rows(cor_l, flat, (b, t)),
            h_star_a=scatter_rows(hstar_a, flat, (b, t)),
            h_star_l=scatter_rows(hstar_l, flat, (b, t)),
            fused=scatter_rows(fused_p, flat, (b, t)),
        )
    else:
        fused_p = concat_last_axis([hc_a_p, hc_l_p])

    logits_a_p = linear(hs_a_p, params["head.audio.w"], params["head.audio.b"])
    logits_l_p = linear(hs_l_p, params["head.text.w"], params["head.text.b"])
    logits_m_p = linear(fused_p, params["head.fused.w"], params["head.fused.b"])

    return ForwardResult(
        logits_audio=scatter_rows(logits_a_p, flat, (b, t)),
        logits_text=scatter_rows(logits_l_p, flat, (b, t)),
        logits_fused=scatter_rows(logits_m_p, flat, (b, t)),
        connection_loss=l_c,
        connection=conn,
        correlative=corr,
        flat_index=flat,
    )


# -- objective -------------------------------------------------------------------


def head_losses(
    logits_audio: Tensor,
    logits_text: Tensor,
    logits_fused: Tensor,
    labels: np.ndarray,
    mask: np.ndarray,
) -> Tuple[Tensor, Tensor, Tensor]:
    """Mask-averaged cross entropy of each head over valid utterances."""
    flat = np.flatnonzero(mask.reshape(-1))
    y = labels.reshape(-1)[flat]
    l_a = mean_vector(cross_entropy(pack_rows(logits_audio, flat), y))
    l_l = mean_vector(cross_entropy(pack_rows(logits_text, flat), y))
    l_m = mean_vector(cross_entropy(pack_rows(logits_fused, flat), y))
    return l_a, l_l, l_m


def total_loss(
    logits_audio: Tensor,
    logits_text: Tensor,
    logits_fused: Tensor,
    labels: np.ndarray,
    mask: np.ndarray,
    l_c: Tensor,
    alpha: float,
    beta: float,
) -> Tensor:
    """alpha * connection + beta * (audio + text) + fused."""
    if alpha < 0 or beta < 0:
        raise ConfigError(f"loss weights must be >= 0, got alpha={alpha}, beta={beta}")
    l_a, l_l, l_m = head_losses(logits_audio, logits_text, logits_fused, labels, mask)
    return add(add(scale(l_c, alpha), scale(add(l_a, l_l), beta)), l_m)


def predict(result: ForwardResult, mask: np.ndarray, combine: bool = False) -> np.ndarray:
    """Predicted class id per mask-true utterance (packed order).

    Defaults to the fused head's argmax; ``combine`` averages the three
    heads' softmax distributions first.
    """
    flat = np.flatnonzero(mask.reshape(-1))
    fused = result.logits_fused.data.reshape(-1, result.logits_fused.shape[-1])[flat]
    if not combine:
        return fused.argmax(axis=1)

    def soft(t: Tensor) -> np.ndarray:
        z = t.data.reshape(-1, t.shape[-1])[flat].astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    avg = (
        soft(result.logits_audio) + soft(result.logits_text) + soft(result.logits_fused)
    ) / 3.0
    return avg.argmax(axis=1)
