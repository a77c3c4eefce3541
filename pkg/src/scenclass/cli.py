"""Command-line entry point: ``scenclass {generate,train,eval,gradcheck}``.

Configuration precedence, lowest to highest: built-in defaults, the
``--config`` file (flat ``key = value`` lines, ``#`` comments), repeated
``--set key=value`` overrides, then the dedicated flags ``--seed`` and
``--arch``. The resolved configuration is written to ``config.echo`` in
the output directory before any work starts.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 gradient verification failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import data
from .errors import ConfigError, ContractError, DataError, DimensionError, SchemaError
from .gradcheck import format_report, run_gradcheck
from .models import ARCHITECTURES, ModelConfig, build_model
from .models.checkpoint import load_checkpoint, save_checkpoint
from .synth import SynthConfig, generate_dataset, generation_report, write_dataset
from .training import (Metrics, TrainConfig, evaluate, train_one_epoch, write_metrics)

log = logging.getLogger("scenclass")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


@dataclass
class RunConfig:
    arch: str = "transformer"
    seed: int = 0
    # generation
    n_scenarios: int = 9587
    seq_len: int = 200
    damage_fraction: float = 0.616
    noise_scale: float = 0.02
    margin: float = 100.0
    # data
    strict_schema: bool = False
    threshold: float = data.CORE_DAMAGE_THRESHOLD_F
    train_fraction: float = 0.64
    test_fraction: float = 0.20
    validation_fraction: float = 0.16
    # model
    n_layers: int = 2
    d_model: int = 30
    n_heads: int = 1
    ffn_dim: int = 0
    pooling: str = "mean"
    positional_encoding: bool = True
    layer_norm_eps: float = 1e-5
    kernel_size: int = 5
    # training
    learning_rate: float = 0.001
    batch_size: int = 12
    epochs: int = 1
    optimizer: str = "sgd"
    clip_epsilon: float = 1e-12
    # verification
    gradcheck_seeds: int = 20
    gradcheck_step: float = 1e-5

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return self.train_fraction, self.test_fraction, self.validation_fraction

    def synth_config(self) -> SynthConfig:
        return SynthConfig(n_scenarios=self.n_scenarios, seq_len=self.seq_len,
                           damage_fraction=self.damage_fraction, noise_scale=self.noise_scale,
                           seed=self.seed, margin=self.margin)

    def model_config(self, n_vars: int) -> ModelConfig:
        return ModelConfig(seq_len=self.seq_len, n_vars=n_vars, n_layers=self.n_layers,
                           d_model=self.d_model, n_heads=self.n_heads, ffn_dim=self.ffn_dim,
                           pooling=self.pooling, positional_encoding=self.positional_encoding,
                           layer_norm_eps=self.layer_norm_eps, kernel_size=self.kernel_size)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           epochs=self.epochs, optimizer=self.optimizer,
                           seed=(self.seed + 2) % 2 ** 64, clip_epsilon=self.clip_epsilon)

    def echo(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            lines.append(f"{key} = {str(value).lower() if isinstance(value, bool) else value}")
        return "\n".join(lines) + "\n"


def _coerce(key: str, raw: str):
    kinds = {f.name: f.type for f in fields(RunConfig)}
    if key not in kinds:
        raise ConfigError(f"unknown configuration key {key!r}")
    raw = raw.strip()
    kind = kinds[key]
    try:
        if kind == "bool":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {raw!r}")
            return raw.lower() in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    return raw


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        try:
            values[key] = _coerce(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), raw)
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "arch", None) is not None:
        values["arch"] = args.arch
    return RunConfig(**values)


def _prepare_out(out: Path, cfg: RunConfig) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.echo").write_text(cfg.echo(), encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc.strerror}") from None
    return out


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_generate(cfg: RunConfig, out_dir) -> dict:
    synth_cfg = cfg.synth_config()
    out = _prepare_out(Path(out_dir), cfg)
    ds = generate_dataset(synth_cfg)
    report = generation_report(synth_cfg, ds)
    try:
        write_dataset(ds, out, report)
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc.strerror}") from None
    counts = report["class_counts"]
    print(f"generated {len(ds)} scenarios in {out} "
          f"(CORE_DAMAGE={counts['CORE_DAMAGE']}, OK={counts['OK']}, seed={cfg.seed})")
    return report


def _select(ds: data.LabeledDataset, xs, ids):
    index = {s.id: i for i, s in enumerate(ds.scenarios)}
    picked = [index[i] for i in ids]
    return [xs[i] for i in picked], [int(ds.labels[i]) for i in picked]


def cmd_train(cfg: RunConfig, manifest, out_dir) -> dict[str, Metrics]:
    out = _prepare_out(Path(out_dir), cfg)
    ds = data.load_scenarios(manifest, strict=cfg.strict_schema, threshold=cfg.threshold)
    if len(ds) == 0:
        raise DataError(f"{manifest}: no scenarios to train on")
    n_vars = {s.shape[1] for s in ds.scenarios}
    names = {s.var_names for s in ds.scenarios}
    if len(n_vars) != 1 or len(names) != 1:
        raise SchemaError(f"{manifest}: scenarios do not share one variable schema")
    model = build_model(cfg.arch, cfg.model_config(n_vars.pop()), seed=(cfg.seed + 1) % 2 ** 64)
    xs = data.prepare(ds, cfg.seq_len)
    split = data.split_dataset(ds, cfg.fractions, seed=cfg.seed)
    data.write_splits(split, out / "splits.csv")
    train_x, train_y = _select(ds, xs, split.ids("train"))
    log.info("training %s on %d scenarios", cfg.arch, len(train_x))
    trace = train_one_epoch(model, train_x, train_y, cfg.train_config())
    trace.to_csv(out / "loss.csv")
    save_checkpoint(model, out / "model.ckpt")
    rows = {}
    for name in data.SPLITS:
        ids = split.ids(name)
        if ids:
            rows[name] = evaluate(model, *_select(ds, xs, ids))
    write_metrics(rows, out / "metrics.csv")
    for name, m in rows.items():
        print(m.summary(name))
    return rows


def cmd_eval(checkpoint, manifest, splits=None, split_name: str = "test",
             out_dir=None, strict: bool = False) -> Metrics:
    model = load_checkpoint(checkpoint)
    ds = data.load_scenarios(manifest, strict=strict)
    if splits is not None:
        ids = data.read_splits(splits).ids(split_name)
        known = {s.id for s in ds.scenarios}
        unknown = [i for i in ids if i not in known]
        if unknown:
            raise DataError(f"{splits}: ids not in manifest, e.g. {unknown[:3]}")
    else:
        split_name = "all"
        ids = [s.id for s in ds.scenarios]
    if not ids:
        raise DataError(f"split {split_name!r} is empty; nothing to evaluate")
    mismatched = sorted({f"n_vars (checkpoint {model.config.n_vars}, data {s.shape[1]})"
                         for s in ds.scenarios if s.shape[1] != model.config.n_vars})
    if mismatched:
        raise ConfigError(f"checkpoint incompatible with data: {', '.join(mismatched)}")
    subset = ds.subset(ids)
    xs = data.prepare(subset, model.config.seq_len)
    metrics = evaluate(model, xs, [int(y) for y in subset.labels])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics({split_name: metrics}, out / "metrics.csv")
    print(metrics.summary(split_name))
    return metrics


def cmd_gradcheck(cfg: RunConfig, out_dir=None) -> bool:
    if out_dir is not None:
        _prepare_out(Path(out_dir), cfg)
    reports = run_gradcheck(seeds=cfg.gradcheck_seeds, h=cfg.gradcheck_step, base_seed=cfg.seed)
    print(format_report(reports))
    failed = [f"{r.arch}.{name}" for r in reports for name in r.failures()]
    if failed:
        print("gradient check FAILED for: " + ", ".join(failed), file=sys.stderr)
    return not failed


# ----------------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scenclass", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--seed", type=_u64)
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--arch", choices=ARCHITECTURES)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    common(sub.add_parser("generate", help="write a synthetic scenario dataset"))
    p = sub.add_parser("train", help="train one architecture and evaluate every split")
    common(p)
    p.add_argument("--manifest", required=True)
    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--splits", help="scenario_id,split file; default evaluates every scenario")
    p.add_argument("--split", default="test", choices=data.SPLITS)
    p.add_argument("--out")
    p.add_argument("--strict-schema", action="store_true")
    common(sub.add_parser("gradcheck", help="finite-difference check of all architectures"),
           out_required=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "eval":
            cmd_eval(args.checkpoint, args.manifest, args.splits, args.split, args.out, args.strict_schema)
            return EXIT_OK
        cfg = resolve_config(args)
        if args.command == "generate":
            cmd_generate(cfg, args.out)
        elif args.command == "train":
            cmd_train(cfg, args.manifest, args.out)
        elif args.command == "gradcheck":
            return EXIT_OK if cmd_gradcheck(cfg, args.out) else EXIT_VERIFY
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SchemaError, DimensionError, ContractError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
