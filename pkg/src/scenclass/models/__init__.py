"""Classifiers built on :mod:`scenclass.autodiff`.

A :class:`Classifier` couples an architecture name, a :class:`ModelConfig`
and a :class:`~scenclass.autodiff.ParameterSet`. Its ``forward`` returns
a 1 x 2 probability node ordered ``[CORE_DAMAGE, OK]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Node, ParameterSet
from ..errors import ConfigError, DimensionError
from .baselines import cnn_forward, init_cnn, init_rnn, rnn_forward
from .config import ARCHITECTURES, ModelConfig
from .transformer import (attention, attention_weights, encoder_layer, encoder_stack,
                          init_transformer, input_projection, positional_encoding,
                          transformer_forward)

_FORWARD = {"transformer": transformer_forward, "rnn": rnn_forward, "cnn": cnn_forward}
_INIT = {"transformer": init_transformer, "rnn": init_rnn, "cnn": init_cnn}


@dataclass(frozen=True)
class ClassProbabilities:
    p_core_damage: float
    p_ok: float

    @property
    def predicted(self) -> int:
        # ties go to CORE_DAMAGE (0)
        return 1 if self.p_ok > self.p_core_damage else 0


@dataclass
class Classifier:
    arch: str
    config: ModelConfig
    params: ParameterSet

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}; expected one of {ARCHITECTURES}")

    def check_input(self, x: np.ndarray) -> None:
        expected = (self.config.seq_len, self.config.n_vars)
        if x.shape != expected:
            raise DimensionError(f"scenario shape {x.shape} does not match model (L, M) = {expected}")

    def forward(self, x: np.ndarray) -> Node:
        self.check_input(x)
        return _FORWARD[self.arch](x, self.config, self.params)

    def with_params(self, params: ParameterSet) -> "Classifier":
        return Classifier(self.arch, self.config, params)

    def predict_proba(self, x: np.ndarray) -> ClassProbabilities:
        p = self.forward(x).value
        return ClassProbabilities(float(p[0, 0]), float(p[0, 1]))


def build_model(arch: str, config: ModelConfig, seed: int = 0) -> Classifier:
    if arch not in _INIT:
        raise ConfigError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    return Classifier(arch, config, _INIT[arch](config, seed))


def _values(s) -> np.ndarray:
    return getattr(s, "values", s)


def classify(s, model: Classifier) -> ClassProbabilities:
    """Class distribution for a normalized scenario (or its raw L x M array)."""
    return model.predict_proba(_values(s))


def rnn_classify(s, model: Classifier) -> ClassProbabilities:
    if model.arch != "rnn":
        raise ConfigError(f"expected an rnn model, got {model.arch}")
    return model.predict_proba(_values(s))


def cnn_classify(s, model: Classifier) -> ClassProbabilities:
    if model.arch != "cnn":
        raise ConfigError(f"expected a cnn model, got {model.arch}")
    return model.predict_proba(_values(s))


__all__ = [
    "ARCHITECTURES", "ClassProbabilities", "Classifier", "ModelConfig",
    "attention", "attention_weights", "build_model", "classify", "cnn_classify",
    "encoder_layer", "encoder_stack", "input_projection", "positional_encoding",
    "rnn_classify",
]
