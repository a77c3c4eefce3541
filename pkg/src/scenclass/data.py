"""Scenario representation, normalization, labeling, splitting and file I/O.

A scenario is stored time-major: ``values[l, m]`` is variable ``m`` at time
step ``l``. File formats:

* scenario CSV: header ``time,<var_1>,...,<var_M>``, one row per step;
* manifest CSV: header ``scenario_id,path`` (paths relative to the manifest);
* split CSV: header ``scenario_id,split`` with split in train/test/validation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, DataError, SchemaError

LABEL_VARIABLE = "maxPCTdegF"
CORE_DAMAGE_THRESHOLD_F = 2100.0

# The 14 plant variables used as classifier inputs.
PLANT_VARIABLES = (
    "PCTdegK",
    "maxPCTdegK",
    "PCTdegF",
    "maxPCTdegF",
    "totGeneratedHydrogen",
    "cntrlvar_601",
    "SG2CoolantInventory",
    "SG3CoolantInventory",
    "SG4CoolantInventory",
    "i_volflowSRCP1LOCA",
    "subcoolingCL1",
    "subcoolingCL2",
    "subcoolingCL3",
    "subcoolingCL4",
)

SPLITS = ("train", "test", "validation")
DEFAULT_FRACTIONS = (0.64, 0.20, 0.16)


class Label(IntEnum):
    CORE_DAMAGE = 0
    OK = 1


@dataclass
class Scenario:
    id: str
    var_names: tuple[str, ...]
    values: np.ndarray
    time_stamps: np.ndarray

    def __post_init__(self):
        self.var_names = tuple(self.var_names)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.time_stamps = np.asarray(self.time_stamps, dtype=np.float64)
        if self.values.ndim != 2:
            raise ContractError(f"scenario {self.id}: values must be L x M, got {self.values.shape}")
        length, n_vars = self.values.shape
        if length < 2 or n_vars < 1:
            raise ContractError(f"scenario {self.id}: needs L >= 2 and M >= 1, got {self.values.shape}")
        if len(self.var_names) != n_vars:
            raise SchemaError(f"scenario {self.id}: {len(self.var_names)} names for {n_vars} columns")
        if len(set(self.var_names)) != n_vars:
            raise SchemaError(f"scenario {self.id}: duplicate variable names")
        if self.time_stamps.shape != (length,):
            raise ContractError(f"scenario {self.id}: {self.time_stamps.size} time stamps for {length} steps")
        if np.any(np.diff(self.time_stamps) <= 0):
            raise DataError(f"scenario {self.id}: time stamps are not strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"scenario {self.id}: non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.var_names.index(name)]
        except ValueError:
            raise SchemaError(f"scenario {self.id}: missing variable {name!r}") from None


@dataclass(frozen=True)
class NormalizationRecord:
    var_names: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray


@dataclass
class LabeledDataset:
    scenarios: list[Scenario] = field(default_factory=list)
    labels: list[Label] = field(default_factory=list)

    def __post_init__(self):
        if len(self.scenarios) != len(self.labels):
            raise ContractError("one label per scenario required")

    def __len__(self) -> int:
        return len(self.scenarios)

    def subset(self, ids: Sequence[str]) -> "LabeledDataset":
        index = {s.id: i for i, s in enumerate(self.scenarios)}
        picked = [index[i] for i in ids]
        return LabeledDataset([self.scenarios[i] for i in picked], [self.labels[i] for i in picked])

    def class_counts(self) -> dict[str, int]:
        counts = {label.name: 0 for label in Label}
        for label in self.labels:
            counts[Label(label).name] += 1
        return counts


@dataclass(frozen=True)
class SplitAssignment:
    """Scenario id -> split name, in dataset order."""

    assignment: dict

    def ids(self, split: str) -> list[str]:
        return [sid for sid, tag in self.assignment.items() if tag == split]

    def counts(self) -> dict[str, int]:
        return {split: len(self.ids(split)) for split in SPLITS}


# ----------------------------------------------------------------------------
# transforms
# ----------------------------------------------------------------------------

def normalize_scenario(s: Scenario) -> tuple[Scenario, NormalizationRecord]:
    """Min-max scale every variable by its own range over this scenario.

    Constant variables map to all zeros.
    """
    mins = s.values.min(axis=0)
    maxs = s.values.max(axis=0)
    span = maxs - mins
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (s.values - mins) / safe, 0.0)
    record = NormalizationRecord(s.var_names, mins, maxs)
    return Scenario(s.id, s.var_names, scaled, s.time_stamps.copy()), record


def denormalize(s: Scenario, rec: NormalizationRecord) -> Scenario:
    if tuple(rec.var_names) != s.var_names:
        raise ContractError(f"scenario {s.id}: normalization record is for a different schema")
    values = s.values * (rec.maxs - rec.mins) + rec.mins
    return Scenario(s.id, s.var_names, values, s.time_stamps.copy())


def assign_label(s: Scenario, threshold: float = CORE_DAMAGE_THRESHOLD_F) -> Label:
    """OK iff the final peak-clad-temperature maximum is strictly below ``threshold`` (degF)."""
    final = s.column(LABEL_VARIABLE)[-1]
    return Label.OK if final < threshold else Label.CORE_DAMAGE


def resample(s: Scenario, target_len: int) -> Scenario:
    """Linear interpolation onto ``target_len`` uniform stamps spanning the original range."""
    if target_len < 2:
        raise ContractError(f"target length must be >= 2, got {target_len}")
    t0, t1 = s.time_stamps[0], s.time_stamps[-1]
    stamps = np.linspace(t0, t1, target_len)
    values = np.column_stack([np.interp(stamps, s.time_stamps, s.values[:, m])
                              for m in range(s.values.shape[1])])
    return Scenario(s.id, s.var_names, values, stamps)


def split_dataset(ds: LabeledDataset, fractions: Sequence[float] = DEFAULT_FRACTIONS,
                  seed: int = 0) -> SplitAssignment:
    """Shuffle by ``seed`` and cut into train/test/validation.

    Test and validation receive ``floor(N * f)`` scenarios; training takes
    the rest, including the rounding remainder.
    """
    n = len(ds)
    if n == 0:
        raise ContractError("cannot split an empty dataset")
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError(f"fractions must be three positive values summing to 1, got {fractions}")
    n_test = math.floor(n * fractions[1] + 1e-9)
    n_val = math.floor(n * fractions[2] + 1e-9)
    order = np.random.default_rng(seed).permutation(n)
    tags = np.empty(n, dtype=object)
    tags[order[: n - n_test - n_val]] = "train"
    tags[order[n - n_test - n_val: n - n_val]] = "test"
    tags[order[n - n_val:]] = "validation"
    return SplitAssignment({s.id: tags[i] for i, s in enumerate(ds.scenarios)})


def split_counts(n: int, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> tuple[int, int, int]:
    n_test = math.floor(n * fractions[1] + 1e-9)
    n_val = math.floor(n * fractions[2] + 1e-9)
    return n - n_test - n_val, n_test, n_val


# ----------------------------------------------------------------------------
# files
# ----------------------------------------------------------------------------

def write_scenario(s: Scenario, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(("time",) + s.var_names) + "\n")
        for t, row in zip(s.time_stamps, s.values):
            fh.write("%.17g," % t + ",".join("%.17g" % v for v in row) + "\n")


def read_scenario(path, scenario_id: str | None = None,
                  schema: Sequence[str] | None = None) -> Scenario:
    """Parse one scenario CSV; with ``schema`` the variable set must match exactly."""
    path = Path(path)
    try:
        fh = path.open(encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "time":
            raise DataError(f"{path}:1: header must start with 'time'")
        names = tuple(h.strip() for h in header[1:])
        if schema is not None:
            missing = sorted(set(schema) - set(names))
            extra = sorted(set(names) - set(schema))
            if missing or extra:
                raise SchemaError(f"{path}: schema mismatch; missing {missing}, extra {extra}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if len(rows) < 2:
        raise DataError(f"{path}: need at least two time steps")
    data = np.array(rows)
    bad = np.nonzero(np.diff(data[:, 0]) <= 0)[0]
    if bad.size:
        raise DataError(f"{path}:{bad[0] + 3}: time stamps are not strictly increasing")
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite values")
    return Scenario(scenario_id or path.stem, names, data[:, 1:], data[:, 0])


def read_manifest(manifest_path) -> list[tuple[str, Path]]:
    manifest_path = Path(manifest_path)
    try:
        fh = manifest_path.open(encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"{manifest_path}: {exc.strerror}") from exc
    entries = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return entries
        if [h.strip() for h in header] != ["scenario_id", "path"]:
            raise DataError(f"{manifest_path}:1: header must be 'scenario_id,path'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{manifest_path}:{lineno}: expected 2 fields, got {len(row)}")
            entries.append((row[0].strip(), manifest_path.parent / row[1].strip()))
    ids = [sid for sid, _ in entries]
    if len(set(ids)) != len(ids):
        raise DataError(f"{manifest_path}: duplicate scenario ids")
    return entries


def load_scenarios(manifest_path, strict: bool = False,
                   threshold: float = CORE_DAMAGE_THRESHOLD_F) -> LabeledDataset:
    """Load every scenario listed in a manifest; labels are recomputed from the data."""
    schema = PLANT_VARIABLES if strict else None
    ds = LabeledDataset()
    for sid, path in read_manifest(manifest_path):
        s = read_scenario(path, sid, schema)
        ds.scenarios.append(s)
        ds.labels.append(assign_label(s, threshold))
    return ds


def write_manifest(entries: Sequence[tuple[str, str]], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("scenario_id,path\n")
        for sid, rel in entries:
            fh.write(f"{sid},{rel}\n")


def write_splits(split: SplitAssignment, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("scenario_id,split\n")
        for sid, tag in split.assignment.items():
            fh.write(f"{sid},{tag}\n")


def read_splits(path) -> SplitAssignment:
    path = Path(path)
    assignment = {}
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and [h.strip() for h in header] != ["scenario_id", "split"]:
            raise DataError(f"{path}:1: header must be 'scenario_id,split'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 or row[1].strip() not in SPLITS:
                raise DataError(f"{path}:{lineno}: expected '<id>,<train|test|validation>'")
            assignment[row[0].strip()] = row[1].strip()
    return SplitAssignment(assignment)


def prepare(ds: LabeledDataset, seq_len: int) -> list[np.ndarray]:
    """Normalize then resample every scenario to ``seq_len`` steps; returns L x M arrays."""
    return [resample(normalize_scenario(s)[0], seq_len).values for s in ds.scenarios]
