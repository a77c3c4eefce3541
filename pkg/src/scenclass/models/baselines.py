"""Recurrent and convolutional baselines sharing the classifier head."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Node, ParameterSet
from .config import ModelConfig, glorot


def init_rnn(config: ModelConfig, seed: int = 0) -> ParameterSet:
    rng = np.random.default_rng(seed)
    h, m = config.d_model, config.n_vars
    p = ParameterSet()
    p.add("w_x", glorot(rng, m, 4 * h))
    p.add("w_h", glorot(rng, h, 4 * h))
    p.add("b", np.zeros((1, 4 * h)))
    p.add("w_c", glorot(rng, h, config.n_classes))
    p.add("b_c", np.zeros((1, config.n_classes)))
    return p


def rnn_forward(x: np.ndarray, config: ModelConfig, p: ParameterSet) -> Node:
    """LSTM over all L steps; the final hidden state feeds the softmax head."""
    xw = ad.add_bias(ad.matmul(ad.constant(x), p["w_x"]), p["b"])
    last = ad.take_row(ad.lstm_sequence(xw, p["w_h"]), -1)
    return ad.softmax_rows(ad.add_bias(ad.matmul(last, p["w_c"]), p["b_c"]))


def init_cnn(config: ModelConfig, seed: int = 0) -> ParameterSet:
    rng = np.random.default_rng(seed)
    k, d, m = config.kernel_size, config.d_model, config.n_vars
    p = ParameterSet()
    p.add("conv1.w", glorot(rng, k * m, k * d, shape=(k * m, d)))
    p.add("conv1.b", np.zeros((1, d)))
    p.add("conv2.w", glorot(rng, k * d, k * d, shape=(k * d, d)))
    p.add("conv2.b", np.zeros((1, d)))
    p.add("w_c", glorot(rng, d, config.n_classes))
    p.add("b_c", np.zeros((1, config.n_classes)))
    return p


def cnn_forward(x: np.ndarray, config: ModelConfig, p: ParameterSet) -> Node:
    """Two same-padded convolutions with ReLU, global average pool, softmax head."""
    k = config.kernel_size
    h = ad.relu(ad.conv1d_same(ad.constant(x), p["conv1.w"], p["conv1.b"], k))
    h = ad.relu(ad.conv1d_same(h, p["conv2.w"], p["conv2.b"], k))
    return ad.softmax_rows(ad.add_bias(ad.matmul(ad.mean_rows(h), p["w_c"]), p["b_c"]))
