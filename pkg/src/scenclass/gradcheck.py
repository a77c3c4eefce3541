"""Finite-difference verification of analytic gradients for all classifiers."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .models import ARCHITECTURES, Classifier, ModelConfig, build_model

TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def toy_config(arch: str) -> ModelConfig:
    # L <= 6, M <= 3, d_model <= 8; two heads exercise the multi-head path
    if arch == "transformer":
        return ModelConfig(seq_len=5, n_vars=3, n_layers=2, d_model=4, n_heads=2, ffn_dim=8)
    if arch == "rnn":
        return ModelConfig(seq_len=4, n_vars=3, d_model=3)
    return ModelConfig(seq_len=6, n_vars=3, d_model=4, kernel_size=3)


def check_model(model: Classifier, x: np.ndarray, label: int, h: float = 1e-5) -> dict[str, float]:
    """Max relative error between ``backward`` and central differences, per parameter."""
    params = model.params
    params.zero_grad()
    ad.backward(ad.binary_cross_entropy(model.forward(x), label))
    analytic = {name: node.grad.copy() for name, node in params.items()}
    params.zero_grad()

    def loss(ps):
        return ad.binary_cross_entropy(model.with_params(ps).forward(x), label).value[0, 0]

    numeric = ad.finite_diff_gradient(loss, params, h)
    return {name: float(relative_error(analytic[name], numeric[name]).max()) for name in params}


@dataclass
class ArchReport:
    arch: str
    worst: dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def max_error(self) -> float:
        return max(self.worst.values())

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE

    def failures(self) -> list[str]:
        return [name for name, err in self.worst.items() if not err < TOLERANCE]


def run_gradcheck(seeds: int = 20, archs=ARCHITECTURES, h: float = 1e-5,
                  base_seed: int = 0) -> list[ArchReport]:
    """Check every parameter of each architecture on ``seeds`` random toy instances."""
    reports = []
    for arch in archs:
        report = ArchReport(arch)
        start = time.perf_counter()
        for k in range(seeds):
            seed = base_seed + k
            cfg = toy_config(arch)
            model = build_model(arch, cfg, seed=seed)
            rng = np.random.default_rng([seed, 1])
            # random biases and gains so no parameter sits at its symmetric init value
            for node in model.params.values():
                node.value += 0.1 * rng.standard_normal(node.shape)
            x = rng.random((cfg.seq_len, cfg.n_vars))
            label = int(rng.integers(0, 2))
            for name, err in check_model(model, x, label, h).items():
                report.worst[name] = max(report.worst.get(name, 0.0), err)
        report.seconds = time.perf_counter() - start
        reports.append(report)
    return reports


def format_report(reports: list[ArchReport]) -> str:
    lines = []
    for r in reports:
        lines.append(f"[{r.arch}] max relative error {r.max_error:.3e} "
                     f"({'PASS' if r.passed else 'FAIL'}, {r.seconds:.1f}s)")
        for name, err in r.worst.items():
            flag = "ok" if err < TOLERANCE else "FAIL"
            lines.append(f"  {name:<20} {err:.3e}  {flag}")
    return "\n".join(lines)
