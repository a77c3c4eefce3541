"""Seeded generator of station-blackout-like scenarios.

The dynamics are invented: they only reproduce the qualitative picture of
the two outcome classes. Damage runs heat up steadily once battery-backed
feedwater is lost and cross the 2100 degF limit before the end; OK runs
regain grid power early, their clad temperature peaks well below the limit
and the secondary side recovers.

Every scenario draws from its own generator seeded by ``(seed, index)``,
so output does not depend on generation order. Random spread of the
trajectory parameters is tied to ``noise_scale``: with ``noise_scale=0``
all scenarios of one class are identical.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (CORE_DAMAGE_THRESHOLD_F, PLANT_VARIABLES, Label, LabeledDataset,
                   Scenario, assign_label, write_manifest, write_scenario)
from .errors import ConfigError

DURATION_S = 24 * 3600.0
REFERENCE_NOISE = 0.02

# Extremes of the backbone peak clad temperature per class (degF).
DAMAGE_FINAL_PCT = (2400.0, 2900.0)
OK_PEAK_PCT = (1250.0, 1750.0)


@dataclass(frozen=True)
class SynthConfig:
    n_scenarios: int = 9587
    seq_len: int = 200
    damage_fraction: float = 0.616
    noise_scale: float = 0.02
    seed: int = 0
    margin: float = 100.0
    schema: tuple[str, ...] = field(default=PLANT_VARIABLES)

    def __post_init__(self):
        if self.n_scenarios < 1:
            raise ConfigError(f"n_scenarios must be >= 1, got {self.n_scenarios}")
        if self.seq_len < 2:
            raise ConfigError(f"seq_len must be >= 2, got {self.seq_len}")
        if not 0.0 <= self.damage_fraction <= 1.0:
            raise ConfigError(f"damage_fraction must lie in [0, 1], got {self.damage_fraction}")
        if self.noise_scale < 0:
            raise ConfigError(f"noise_scale must be >= 0, got {self.noise_scale}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        # noise is a bounded multiplicative factor, so the class margins hold iff:
        if DAMAGE_FINAL_PCT[0] * (1 - self.noise_scale) < CORE_DAMAGE_THRESHOLD_F + self.margin \
                or OK_PEAK_PCT[1] * (1 + self.noise_scale) > CORE_DAMAGE_THRESHOLD_F - self.margin:
            raise ConfigError(f"noise_scale={self.noise_scale} is too large for margin={self.margin}")
        missing = set(PLANT_VARIABLES) - set(self.schema)
        if missing:
            raise ConfigError(f"schema lacks generated variables {sorted(missing)}")


def _smooth_noise(rng: np.random.Generator, n: int, scale: float) -> np.ndarray:
    """Multiplicative factor ``1 + scale * tanh(smooth gaussian)``, strictly within (1-scale, 1+scale)."""
    width = max(1, n // 20)
    white = rng.standard_normal(n + width - 1)
    smooth = np.convolve(white, np.ones(width) / np.sqrt(width), mode="valid")
    return 1.0 + scale * np.tanh(smooth)


def _cumulative(rate: np.ndarray, tau: np.ndarray) -> np.ndarray:
    steps = np.diff(tau, prepend=tau[0])
    return np.cumsum(rate * steps)


def _backbone(damage: bool, tau: np.ndarray, jitter: np.ndarray) -> dict[str, np.ndarray]:
    """Noise-free trajectories on the unit time axis; ``jitter`` holds draws in [-1, 1]."""
    onset = 0.5 + 0.25 * jitter[0]
    inventory0 = 45000.0 * (1 + 0.05 * jitter[1])
    subcool0 = 30.0 * (1 + 0.1 * jitter[2])
    leak_rate = 20.0 * (1 + 0.2 * jitter[3])
    ones = np.ones_like(tau)
    if damage:
        final = 0.5 * (DAMAGE_FINAL_PCT[0] + DAMAGE_FINAL_PCT[1]) \
            + 0.5 * (DAMAGE_FINAL_PCT[1] - DAMAGE_FINAL_PCT[0]) * jitter[4]
        late = np.clip((tau - onset) / (1 - onset), 0.0, None)
        pct = np.where(tau < onset, 600.0 + 150.0 * tau / onset,
                       750.0 + (final - 750.0) * late ** 1.5)
        grid = np.zeros_like(tau)
        inventory = np.where(tau < onset, inventory0 * (1 - 0.1 * tau / onset),
                             0.9 * inventory0 * np.exp(-late / 0.08))
        subcool = np.where(tau < onset, subcool0 * (1 - 0.2 * tau / onset),
                           0.8 * subcool0 * np.exp(-late / 0.1))
        leak = leak_rate * np.where(tau < onset, 1.0, 3.0)
    else:
        recovery = 0.2 + 0.1 * jitter[0]
        peak = 0.5 * (OK_PEAK_PCT[0] + OK_PEAK_PCT[1]) + 0.5 * (OK_PEAK_PCT[1] - OK_PEAK_PCT[0]) * jitter[4]
        rise = 600.0 + (peak - 600.0) * (1 - np.exp(-tau / 0.05))
        at_recovery = 600.0 + (peak - 600.0) * (1 - np.exp(-recovery / 0.05))
        after = np.clip(tau - recovery, 0.0, None)
        pct = np.where(tau < recovery, rise,
                       560.0 + (at_recovery - 560.0) * np.exp(-after / 0.1))
        grid = np.where(tau < recovery, 0.0, 1.0)
        low = inventory0 * (1 - 0.2 * recovery / 0.3)
        inventory = np.where(tau < recovery, inventory0 * (1 - 0.2 * tau / 0.3),
                             inventory0 - (inventory0 - low) * np.exp(-after / 0.1))
        dip = subcool0 * 0.5
        subcool = np.where(tau < recovery, subcool0 - (subcool0 - dip) * tau / recovery,
                           1.15 * subcool0 - (1.15 * subcool0 - dip) * np.exp(-after / 0.1))
        leak = leak_rate * np.where(tau < recovery, 1.0, 0.1)
    hydrogen = 0.05 * _cumulative(np.clip(pct - (1800.0 if damage else 1000.0), 0.0, None), tau)
    return {
        "PCTdegF": pct,
        "totGeneratedHydrogen": hydrogen,
        "cntrlvar_601": grid,
        "SG": inventory * ones,
        "i_volflowSRCP1LOCA": _cumulative(leak, tau) * DURATION_S / 60.0,
        "subcooling": subcool,
    }


def degf_to_degk(f: np.ndarray) -> np.ndarray:
    return (f + 459.67) / 1.8


def generate_scenario(cfg: SynthConfig, index: int) -> tuple[Scenario, Label]:
    """Synthesize scenario ``index``; returns it with its intended class."""
    rng = np.random.default_rng([cfg.seed, index])
    damage = bool(rng.random() < cfg.damage_fraction)
    spread = min(1.0, cfg.noise_scale / REFERENCE_NOISE)
    jitter = spread * rng.uniform(-1.0, 1.0, size=8)
    tau = np.linspace(0.0, 1.0, cfg.seq_len)
    base = _backbone(damage, tau, jitter)
    ns = cfg.noise_scale

    def noisy(x):
        return x * _smooth_noise(rng, cfg.seq_len, ns)

    cols: dict[str, np.ndarray] = {}
    pct_f = noisy(base["PCTdegF"])
    cols["PCTdegF"] = pct_f
    cols["maxPCTdegF"] = np.maximum.accumulate(pct_f)
    cols["PCTdegK"] = degf_to_degk(pct_f)
    cols["maxPCTdegK"] = degf_to_degk(cols["maxPCTdegF"])
    cols["totGeneratedHydrogen"] = noisy(base["totGeneratedHydrogen"])
    cols["cntrlvar_601"] = noisy(base["cntrlvar_601"])
    for k, name in enumerate(("SG2CoolantInventory", "SG3CoolantInventory", "SG4CoolantInventory")):
        cols[name] = noisy(base["SG"] * (1 + 0.02 * jitter[5] * (k - 1)))
    cols["i_volflowSRCP1LOCA"] = noisy(base["i_volflowSRCP1LOCA"])
    for k in range(4):
        cols[f"subcoolingCL{k + 1}"] = noisy(base["subcooling"] * (1 + 0.03 * jitter[6 + k % 2] * (k - 1.5)))

    extra = [name for name in cfg.schema if name not in cols]
    for name in extra:
        cols[name] = noisy(np.ones(cfg.seq_len))
    names = tuple(cfg.schema)
    values = np.column_stack([cols[name] for name in names])
    scenario = Scenario(f"scn{index:05d}", names, values, tau * DURATION_S)
    return scenario, Label.CORE_DAMAGE if damage else Label.OK


def generate_dataset(cfg: SynthConfig) -> LabeledDataset:
    """All scenarios of ``cfg`` with labels recomputed from the generated data."""
    ds = LabeledDataset()
    for index in range(cfg.n_scenarios):
        scenario, _ = generate_scenario(cfg, index)
        ds.scenarios.append(scenario)
        ds.labels.append(assign_label(scenario))
    return ds


def generation_report(cfg: SynthConfig, ds: LabeledDataset) -> dict:
    config = asdict(cfg)
    config["schema"] = list(cfg.schema)
    return {"seed": cfg.seed, "n_scenarios": len(ds), "class_counts": ds.class_counts(), "config": config}


def write_dataset(ds: LabeledDataset, out_dir, report: dict | None = None) -> Path:
    """Write scenario CSVs under ``out_dir/scenarios`` plus ``manifest.csv``; returns the manifest path."""
    out_dir = Path(out_dir)
    scen_dir = out_dir / "scenarios"
    scen_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in ds.scenarios:
        rel = f"scenarios/{s.id}.csv"
        write_scenario(s, out_dir / rel)
        entries.append((s.id, rel))
    manifest = out_dir / "manifest.csv"
    write_manifest(entries, manifest)
    if report is not None:
        (out_dir / "generation_report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return manifest
