"""Plain-text model checkpoints.

Layout, one record per line::

    SEQV1
    arch <name>
    config <key>=<value>        (one line per ModelConfig field)
    param <name> <rows> <cols>
    <rows*cols values, row-major, space separated, 17 significant digits>
    ...

Values are written with ``%.17g`` so a save/load cycle is bit exact.
"""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path

import numpy as np

from ..autodiff import ParameterSet
from ..errors import ConfigError, DataError
from . import Classifier, build_model
from .config import ModelConfig

MAGIC = "SEQV1"


def _format_value(value) -> str:
    return str(value).lower() if isinstance(value, bool) else str(value)


def _parse_value(raw: str, kind):
    kind = kind if isinstance(kind, str) else kind.__name__
    if kind == "bool":
        if raw not in ("true", "false"):
            raise ValueError(f"not a boolean: {raw!r}")
        return raw == "true"
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def save_checkpoint(model: Classifier, path) -> None:
    lines = [MAGIC, f"arch {model.arch}"]
    for key, value in model.config.to_dict().items():
        lines.append(f"config {key}={_format_value(value)}")
    for name, node in model.params.items():
        rows, cols = node.shape
        lines.append(f"param {name} {rows} {cols}")
        lines.append(" ".join("%.17g" % v for v in node.value.ravel()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> Classifier:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise DataError(f"{path}: not a {MAGIC} checkpoint")
    types = {f.name: f.type for f in fields(ModelConfig)}
    arch = None
    config: dict = {}
    params = ParameterSet()
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        lineno = i + 1
        i += 1
        if not line:
            continue
        tag, _, rest = line.partition(" ")
        try:
            if tag == "arch":
                arch = rest.strip()
            elif tag == "config":
                key, _, raw = rest.partition("=")
                if key not in types:
                    raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
                config[key] = _parse_value(raw, types[key])
            elif tag == "param":
                name, rows, cols = rest.split()
                rows, cols = int(rows), int(cols)
                values = np.array([float(v) for v in lines[i].split()], dtype=np.float64)
                i += 1
                if values.size != rows * cols:
                    raise DataError(f"{path}:{lineno}: {name} expects {rows * cols} values, got {values.size}")
                params.add(name, values.reshape(rows, cols))
            else:
                raise DataError(f"{path}:{lineno}: unexpected record {tag!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, (DataError, ConfigError)):
                raise
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    if arch is None:
        raise DataError(f"{path}: missing arch record")
    model_config = ModelConfig.from_dict(config)
    expected = build_model(arch, model_config).params
    mismatched = sorted(
        set(expected) ^ set(params)
        | {n for n in set(expected) & set(params) if expected[n].shape != params[n].shape})
    if mismatched:
        raise ConfigError(f"{path}: parameters inconsistent with config: {mismatched}")
    return Classifier(arch, model_config, params)
