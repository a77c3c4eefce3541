from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError

ARCHITECTURES = ("transformer", "rnn", "cnn")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters shared by the three classifiers.

    ``d_model`` is the hidden width of every architecture (attention width,
    recurrent state size, convolution channels). ``ffn_dim`` of 0 means
    ``4 * d_model``.
    """

    seq_len: int
    n_vars: int
    n_layers: int = 2
    d_model: int = 30
    n_heads: int = 1
    ffn_dim: int = 0
    pooling: str = "mean"
    n_classes: int = 2
    positional_encoding: bool = True
    layer_norm_eps: float = 1e-5
    kernel_size: int = 5

    def __post_init__(self):
        for name in ("seq_len", "n_vars", "n_layers", "d_model", "n_heads", "n_classes", "kernel_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.ffn_dim < 0:
            raise ConfigError(f"ffn_dim must be >= 0, got {self.ffn_dim}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.pooling not in ("mean", "last"):
            raise ConfigError(f"pooling must be 'mean' or 'last', got {self.pooling!r}")
        if self.n_classes != 2:
            raise ConfigError("only binary classification is supported")
        if self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")

    @property
    def ffn_width(self) -> int:
        return self.ffn_dim or 4 * self.d_model

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**values)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))
