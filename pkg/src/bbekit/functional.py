"""Composite neural ops for the encoder stack.

Each public op validates its shapes, composes autodiff primitives, and
checks the result for non-finite values (the operation-level hygiene
contract).  Padding masks are boolean arrays with True marking valid
frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, InputError, NumericalError

# Additive pre-softmax penalty for masked keys.  exp(x - MASK_NEG) underflows
# to exactly 0.0 for any |x| within the hygiene bound, so masked frames have
# bit-exactly zero attention weight.
MASK_NEG = 1e30


def _check_finite(name: str, out: Tensor) -> Tensor:
    if not np.isfinite(out.data).all():
        raise NumericalError(f"{name} produced non-finite values")
    return out


def linear_forward(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """y[..., j] = sum_i x[..., i] * weight[i, j] + bias[j]."""
    if weight.ndim != 2:
        raise DimensionError(f"weight must be 2-d, got {weight.shape}")
    d_in, d_out = weight.shape
    if x.ndim < 1 or x.shape[-1] != d_in:
        raise DimensionError(f"linear input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (d_out,):
        raise DimensionError(f"bias shape {bias.shape} != ({d_out},)")
    lead = x.shape[:-1]
    flat = ad.reshape(x, (-1, d_in))
    y = ad.add(ad.matmul(flat, weight), bias)
    return _check_finite("linear", ad.reshape(y, lead + (d_out,)))


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float) -> Tensor:
    """Per last-axis slice: (x - mean) / sqrt(var + eps) * gain + shift."""
    if eps <= 0.0:
        raise ConfigError(f"layer_norm eps must be > 0, got {eps}")
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise DimensionError("layer_norm over an empty axis")
    if gain.shape != (d,) or shift.shape != (d,):
        raise DimensionError(f"gain/shift must have shape ({d},)")
    mu = ad.tmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = ad.tmean(ad.mul(centered, centered), axis=-1, keepdims=True)
    rstd = (var + eps) ** -0.5  # population variance
    return _check_finite("layer_norm", centered * rstd * gain + shift)


def key_padding_bias(pad_mask: np.ndarray | None) -> np.ndarray | None:
    """Additive bias row excluding padded keys from attention softmax."""
    if pad_mask is None:
        return None
    mask = np.asarray(pad_mask, dtype=bool)
    return np.where(mask, 0.0, -MASK_NEG)


def multi_head_attention(x: Tensor, wq: Tensor, bq: Tensor, wk: Tensor, bk: Tensor,
                         wv: Tensor, bv: Tensor, wo: Tensor, bo: Tensor,
                         heads: int, pad_mask: np.ndarray | None = None) -> Tensor:
    """Bidirectional scaled dot-product attention over [T, d] frames."""
    if x.ndim != 2:
        raise DimensionError(f"attention expects [T, d], got {x.shape}")
    n_frames, d = x.shape
    if heads < 1 or d % heads != 0:
        raise ConfigError(f"model width {d} not divisible by {heads} heads")
    d_head = d // heads

    q = linear_forward(x, wq, bq)
    k = linear_forward(x, wk, bk)
    v = linear_forward(x, wv, bv)

    def split(t: Tensor) -> Tensor:  # [T, d] -> [heads, T, d_head]
        return ad.transpose(ad.reshape(t, (n_frames, heads, d_head)), (1, 0, 2))

    q, k, v = split(q), split(k), split(v)
    scores = ad.matmul(q, ad.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(d_head))
    bias = key_padding_bias(pad_mask)
    if bias is not None:
        if bias.shape != (n_frames,):
            raise DimensionError(f"pad_mask length {bias.shape} != {n_frames} frames")
        bias = bias[None, None, :]
    weights = ad.softmax_last(scores, additive_mask=bias)
    mixed = ad.matmul(weights, v)  # [heads, T, d_head]
    merged = ad.reshape(ad.transpose(mixed, (1, 0, 2)), (n_frames, d))
    return _check_finite("attention", linear_forward(merged, wo, bo))


@dataclass
class BlockParams:
    """Parameter bundle for one encoder block (plus the optional copy-output
    projection present on expanded blocks)."""

    ln1_gain: Tensor
    ln1_shift: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_gain: Tensor
    ln2_shift: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    zll_weight: Tensor | None = None
    zll_bias: Tensor | None = None


LN_EPS = 1e-5


def encoder_block_forward(x: Tensor, p: BlockParams, heads: int,
                          pad_mask: np.ndarray | None = None) -> Tensor:
    """Pre-norm block: u = x + Attn(LN1(x)); y = u + FFN(LN2(u))."""
    attended = multi_head_attention(layer_norm(x, p.ln1_gain, p.ln1_shift, LN_EPS),
                                    p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo,
                                    heads, pad_mask)
    u = x + attended
    hidden = ad.gelu(linear_forward(layer_norm(u, p.ln2_gain, p.ln2_shift, LN_EPS),
                                    p.w1, p.b1))
    return u + linear_forward(hidden, p.w2, p.b2)


def expanded_block_forward(x: Tensor, p: BlockParams, heads: int,
                           pad_mask: np.ndarray | None = None) -> Tensor:
    """Copied block wrapped in a skip connection through its output
    projection: y = x + proj(block(x)).  With the projection still at its
    zero initialization this is bit-exactly the identity."""
    if p.zll_weight is None or p.zll_bias is None:
        raise ConfigError("expanded block is missing its output projection")
    inner = encoder_block_forward(x, p, heads, pad_mask)
    return x + linear_forward(inner, p.zll_weight, p.zll_bias)


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Scalar -log softmax(logits)[label]; gradient is softmax - one_hot."""
    return _check_finite("cross_entropy", ad.cross_entropy_with_logits(logits, label))


def masked_mean_pool(x: Tensor, pad_mask: np.ndarray | None = None) -> Tensor:
    """Mean over valid frames of [T, d]; padded rows contribute nothing."""
    if x.ndim != 2:
        raise DimensionError(f"pooling expects [T, d], got {x.shape}")
    if pad_mask is None:
        return ad.tmean(x, axis=0)
    mask = np.asarray(pad_mask, dtype=bool)
    if mask.shape != (x.shape[0],):
        raise DimensionError(f"pad_mask shape {mask.shape} != ({x.shape[0]},)")
    count = int(mask.sum())
    if count == 0:
        raise InputError("all frames masked out")
    weights = mask.astype(np.float64)[:, None]
    return ad.tsum(ad.mul(x, weights), axis=0) * (1.0 / count)
