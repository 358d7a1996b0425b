"""Attention, feed-forward and transformer-block building blocks.

Blocks are plain functions over a parameter mapping with fixed keys; the
``init_*`` helpers create those mappings. Linear weights are stored as
[in, out] and applied as ``x @ w + b``.
"""
from __future__ import annotations

import math
from typing import Callable, Mapping, Optional

import numpy as np

from ..errors import ConfigError, ShapeError
from . import functional as F
from .rng import Rng
from .tensor import Tensor, default_dtype

Params = Mapping[str, Tensor]


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(arr.astype(default_dtype()), requires_grad=True)


def init_linear(rng: Rng, d_in: int, d_out: int, prefix: str = "") -> dict[str, Tensor]:
    bound = 1.0 / math.sqrt(d_in)
    return {
        f"{prefix}w": _param(rng.uniform(-bound, bound, (d_in, d_out))),
        f"{prefix}b": _param(np.zeros(d_out)),
    }


def init_norm(d: int, prefix: str = "") -> dict[str, Tensor]:
    return {f"{prefix}gamma": _param(np.ones(d)), f"{prefix}beta": _param(np.zeros(d))}


def init_conv(rng: Rng, c_in: int, c_out: int, k: int, prefix: str = "") -> dict[str, Tensor]:
    bound = 1.0 / math.sqrt(c_in * k * k)
    return {
        f"{prefix}w": _param(rng.uniform(-bound, bound, (c_out, c_in, k, k))),
        f"{prefix}b": _param(np.zeros(c_out)),
    }


def init_attention(rng: Rng, d: int) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    for name, child in zip("qkvo", rng.spawn(4)):
        lin = init_linear(child, d, d)
        p[f"w_{name}"] = lin["w"]
        p[f"b_{name}"] = lin["b"]
    return p


def init_ffn(rng: Rng, d: int, d_hidden: int) -> dict[str, Tensor]:
    r1, r2 = rng.spawn(2)
    return {**init_linear(r1, d, d_hidden, "fc1."), **init_linear(r2, d_hidden, d, "fc2.")}


def init_block(rng: Rng, d: int, d_hidden: int) -> dict[str, Tensor]:
    ra, rf = rng.spawn(2)
    p = {f"attn.{k}": v for k, v in init_attention(ra, d).items()}
    p.update({f"ffn.{k}": v for k, v in init_ffn(rf, d, d_hidden).items()})
    p.update(init_norm(d, "norm1."))
    p.update(init_norm(d, "norm2."))
    return p


def sub(params: Params, prefix: str) -> dict[str, Tensor]:
    """Entries of ``params`` under ``prefix.`` with the prefix stripped."""
    pre = prefix + "."
    return {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = F.reshape(x, tuple(lead) + (n, heads, d // heads))
    return F.swapaxes(x, -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    x = F.swapaxes(x, -2, -3)
    *lead, n, h, dh = x.shape
    return F.reshape(x, tuple(lead) + (n, h * dh))


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    heads: int,
    params: Params,
    weights_out: Optional[list] = None,
) -> Tensor:
    """Scaled dot-product attention over ``heads`` heads, with output projection.

    ``q`` is [..., n_q, d]; ``k`` and ``v`` are [..., n_k, d]. When
    ``weights_out`` is a list, the attention probabilities
    ([..., heads, n_q, n_k]) are appended to it.
    """
    d = q.shape[-1]
    if heads <= 0 or d % heads:
        raise ConfigError(f"attention: model width {d} is not divisible by {heads} heads")
    if k.shape[-1] != d or v.shape[-1] != d or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: incompatible q/k/v shapes {q.shape}, {k.shape}, {v.shape}")
    qh = _split_heads(F.linear(q, params["w_q"], params["b_q"]), heads)
    kh = _split_heads(F.linear(k, params["w_k"], params["b_k"]), heads)
    vh = _split_heads(F.linear(v, params["w_v"], params["b_v"]), heads)
    scale = 1.0 / math.sqrt(d // heads)
    scores = F.mul(F.matmul(qh, F.swapaxes(kh, -1, -2)), scale)
    attn = F.softmax(scores, axis=-1)
    if weights_out is not None:
        weights_out.append(attn.data)
    out = _merge_heads(F.matmul(attn, vh))
    return F.linear(out, params["w_o"], params["b_o"])


def ffn(x: Tensor, params: Params, activation: Callable[[Tensor], Tensor] = F.gelu) -> Tensor:
    """Position-wise two-layer network ``fc2(act(fc1(x)))``; hidden width comes from the weights."""
    h = activation(F.linear(x, params["fc1.w"], params["fc1.b"]))
    return F.linear(h, params["fc2.w"], params["fc2.b"])


def transformer_block(
    x: Tensor,
    params: Params,
    heads: int,
    dropout: float = 0.0,
    rng: Optional[Rng] = None,
    train: bool = False,
    weights_out: Optional[list] = None,
) -> Tensor:
    """Post-norm block: attention and FFN sublayers, each with dropout, residual and LayerNorm."""
    a = multi_head_attention(x, x, x, heads, sub(params, "attn"), weights_out)
    x = F.layer_norm(F.add(x, F.dropout(a, dropout, rng, train)), params["norm1.gamma"], params["norm1.beta"])
    f = ffn(x, sub(params, "ffn"))
    return F.layer_norm(F.add(x, F.dropout(f, dropout, rng, train)), params["norm2.gamma"], params["norm2.beta"])
