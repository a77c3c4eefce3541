"""Transformer-encoder classifier for multivariate time series."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .. import autodiff as ad
from ..autodiff import Node, ParameterSet
from ..errors import DimensionError
from .config import ModelConfig, glorot


@lru_cache(maxsize=32)
def _pe_table(length: int, d: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    even = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, even / d)
    table = np.zeros((length, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d // 2])
    table.setflags(write=False)
    return table


def positional_encoding(length: int, d: int) -> np.ndarray:
    """Sinusoidal position table: sin on even columns, cos on odd ones, base 10000."""
    if length < 1 or d < 1:
        raise ValueError("length and width must be >= 1")
    return _pe_table(length, d).copy()


def input_projection(x, w_in, b_in) -> Node:
    """Per-time-step affine map of the L x M input into L x d_model."""
    x = x if isinstance(x, Node) else ad.constant(x)
    w_in = w_in if isinstance(w_in, Node) else ad.constant(w_in)
    if x.shape[1] != w_in.shape[0]:
        raise DimensionError(f"input has {x.shape[1]} variables, projection expects {w_in.shape[0]}")
    return ad.add_bias(ad.matmul(x, w_in), b_in)


def attention_weights(q, k, d: int) -> Node:
    return ad.softmax_rows(ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d)))


def attention(q, k, v, d: int) -> Node:
    """Scaled dot-product attention ``softmax(q k^T / sqrt(d)) v``."""
    q, k, v = (t if isinstance(t, Node) else ad.constant(t) for t in (q, k, v))
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise DimensionError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    if d <= 0:
        raise ValueError("attention scale dimension must be positive")
    return ad.matmul(attention_weights(q, k, d), v)


def self_attention(x: Node, p: ParameterSet, prefix: str, n_heads: int) -> Node:
    q = ad.matmul(x, p[prefix + "w_q"])
    k = ad.matmul(x, p[prefix + "w_k"])
    v = ad.matmul(x, p[prefix + "w_v"])
    d_model = x.shape[1]
    if n_heads == 1:
        heads = attention(q, k, v, d_model)
    else:
        dh = d_model // n_heads
        heads = ad.concat_cols([
            attention(ad.slice_cols(q, i * dh, (i + 1) * dh),
                      ad.slice_cols(k, i * dh, (i + 1) * dh),
                      ad.slice_cols(v, i * dh, (i + 1) * dh), dh)
            for i in range(n_heads)
        ])
    return ad.matmul(heads, p[prefix + "w_o"])


def encoder_layer(x: Node, p: ParameterSet, prefix: str, n_heads: int = 1, eps: float = 1e-5) -> Node:
    """Self-attention and feed-forward sublayers, each followed by residual add and layer norm."""
    y1 = ad.layer_norm(ad.add(x, self_attention(x, p, prefix, n_heads)),
                       p[prefix + "ln1_gain"], p[prefix + "ln1_bias"], eps)
    hidden = ad.relu(ad.add_bias(ad.matmul(y1, p[prefix + "w_1"]), p[prefix + "b_1"]))
    ffn = ad.add_bias(ad.matmul(hidden, p[prefix + "w_2"]), p[prefix + "b_2"])
    return ad.layer_norm(ad.add(y1, ffn), p[prefix + "ln2_gain"], p[prefix + "ln2_bias"], eps)


def encoder_stack(x: Node, p: ParameterSet, n_layers: int, n_heads: int = 1, eps: float = 1e-5) -> Node:
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    for layer in range(n_layers):
        x = encoder_layer(x, p, f"layer{layer}.", n_heads, eps)
    return x


def init_transformer(config: ModelConfig, seed: int = 0) -> ParameterSet:
    rng = np.random.default_rng(seed)
    d, m, f = config.d_model, config.n_vars, config.ffn_width
    p = ParameterSet()
    p.add("w_in", glorot(rng, m, d))
    p.add("b_in", np.zeros((1, d)))
    for layer in range(config.n_layers):
        pre = f"layer{layer}."
        for name in ("w_q", "w_k", "w_v", "w_o"):
            p.add(pre + name, glorot(rng, d, d))
        p.add(pre + "ln1_gain", np.ones((1, d)))
        p.add(pre + "ln1_bias", np.zeros((1, d)))
        p.add(pre + "w_1", glorot(rng, d, f))
        p.add(pre + "b_1", np.zeros((1, f)))
        p.add(pre + "w_2", glorot(rng, f, d))
        p.add(pre + "b_2", np.zeros((1, d)))
        p.add(pre + "ln2_gain", np.ones((1, d)))
        p.add(pre + "ln2_bias", np.zeros((1, d)))
    p.add("w_c", glorot(rng, d, config.n_classes))
    p.add("b_c", np.zeros((1, config.n_classes)))
    return p


def transformer_forward(x: np.ndarray, config: ModelConfig, p: ParameterSet) -> Node:
    """Class probabilities (1 x 2 node) for one normalized L x M scenario."""
    h = input_projection(x, p["w_in"], p["b_in"])
    if config.positional_encoding:
        h = ad.add(h, ad.constant(_pe_table(h.shape[0], config.d_model)))
    h = encoder_stack(h, p, config.n_layers, config.n_heads, config.layer_norm_eps)
    pooled = ad.mean_rows(h) if config.pooling == "mean" else ad.take_row(h, -1)
    return ad.softmax_rows(ad.add_bias(ad.matmul(pooled, p["w_c"]), p["b_c"]))
