"""Experiment runner and command-line interface.

Subcommands: train, evaluate, ablate, sweep-fusion-layer, gen-synthetic,
stats, report. All state flows through the JSON config file and flags;
--seed and --variant narrow the config's grids to a single cell. Exit
codes: 0 success, 2 configuration error, 3 runtime error (divergence,
missing or malformed files).

Every metric row embeds the resolved config hash, the seed, and the
package version. Output files never contain timestamps, so re-running a
command with the same config and seed reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .data import corpus_stats, instances_for, load_and_validate, save_corpus, split
from .errors import ConfigError, MafError
from .metrics import MetricReport
from .model import VARIANTS, ModelConfig, TrainConfig, save_checkpoint, load_checkpoint, train
from .synthetic import SyntheticSpec, evaluate_variant, generate

__all__ = [
    "ExperimentConfig",
    "load_experiment_config",
    "config_hash",
    "cmd_train",
    "cmd_evaluate",
    "cmd_ablate",
    "cmd_sweep_fusion_layer",
    "cmd_gen_synthetic",
    "cmd_stats",
    "cmd_report",
    "main",
]

# distinct stream for held-out synthetic data so test instances never
# collide with any training seed in a small grid
_TEST_SEED_SALT = 0x9E3779B9


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str | None = None
    synthetic: SyntheticSpec | None = None
    test_instances: int = 100
    variants: list[str] = field(default_factory=lambda: ["MAF"])
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    out: str | None = None
    bleu_smoothing: bool = False

    def resolved(self) -> dict:
        return {
            "model": asdict(self.model),
            "train": asdict(self.train),
            "dataset": self.dataset,
            "synthetic": None if self.synthetic is None else asdict(self.synthetic),
            "test_instances": self.test_instances,
            "variants": list(self.variants),
            "seeds": list(self.seeds),
            "bleu_smoothing": self.bleu_smoothing,
        }

    def validate(self, *, need_data: bool = True) -> None:
        self.model.validate()
        self.train.validate()
        if self.synthetic is not None:
            self.synthetic.validate()
        if need_data and (self.dataset is None) == (self.synthetic is None):
            raise ConfigError("exactly one of 'dataset' and 'synthetic' must be configured")
        if not self.variants:
            raise ConfigError("variants list is empty")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant '{v}', expected one of {VARIANTS}")
        if not self.seeds:
            raise ConfigError("seeds list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds contain duplicates: {self.seeds}")
        if self.test_instances < 1:
            raise ConfigError(f"test_instances must be >= 1, got {self.test_instances}")


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.resolved(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def _build(section: str, cls, raw: dict):
    if not isinstance(raw, dict):
        raise ConfigError(f"config section '{section}' must be an object")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"config section '{section}': {exc}") from None


_TOP_KEYS = {"model", "train", "dataset", "synthetic", "test_instances",
             "variants", "seeds", "out", "bleu_smoothing"}


def load_experiment_config(path: str | None, args: argparse.Namespace | None = None) -> ExperimentConfig:
    """Read the JSON config file and apply flag overrides; fail fast."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file '{path}' not found")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file '{path}' is not valid JSON: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config file '{path}' must hold a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")

    cfg = ExperimentConfig(
        model=_build("model", ModelConfig, raw.get("model", {})),
        train=_build("train", TrainConfig, raw.get("train", {})),
        dataset=raw.get("dataset"),
        synthetic=_build("synthetic", SyntheticSpec, raw["synthetic"]) if raw.get("synthetic") else None,
        test_instances=raw.get("test_instances", 100),
        variants=list(raw.get("variants", ["MAF"])),
        seeds=list(raw.get("seeds", [1, 2, 3])),
        out=raw.get("out"),
        bleu_smoothing=bool(raw.get("bleu_smoothing", False)),
    )
    if args is not None:
        if getattr(args, "dataset", None):
            cfg.dataset = args.dataset
            cfg.synthetic = None
        if getattr(args, "seed", None) is not None:
            cfg.seeds = [args.seed]
        if getattr(args, "variant", None):
            cfg.variants = [args.variant]
        if getattr(args, "out", None):
            cfg.out = args.out
    return cfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    if not cfg.out:
        raise ConfigError("an output directory is required (--out or config 'out')")
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory '{out}': {exc}") from None
    return out


def _prepare_data(cfg: ExperimentConfig, seed: int):
    """Train and held-out instances for one seed."""
    if cfg.dataset is not None:
        corpus = load_and_validate(cfg.dataset)
        ids = split(corpus, seed)
        return instances_for(corpus, ids.train), instances_for(corpus, ids.test)
    train_spec = replace(cfg.synthetic, seed=seed)
    test_spec = replace(cfg.synthetic, seed=seed ^ _TEST_SEED_SALT,
                        num_instances=cfg.test_instances)
    return generate(train_spec), generate(test_spec)


def _dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _metric_row(cfg: ExperimentConfig, variant: str, seed: int, layer: int, scores: dict) -> dict:
    row = {
        "artifact_version": __version__,
        "config_hash": config_hash(cfg),
        "variant": variant,
        "seed": seed,
        "fusion_layer_index": layer,
        "meteor": None,
        "bert_score": None,
    }
    row.update(scores)
    return row


def _write_loss_log(path: Path, step_losses: Sequence[float]) -> None:
    lines = ["step,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(step_losses, start=1)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _single_cell(cfg: ExperimentConfig, what: str) -> tuple[str, int]:
    if len(cfg.variants) != 1 or len(cfg.seeds) != 1:
        raise ConfigError(f"{what} runs one variant and one seed; narrow the config "
                          f"with --variant/--seed (got {cfg.variants} x {cfg.seeds})")
    return cfg.variants[0], cfg.seeds[0]


def _train_one(cfg: ExperimentConfig, variant: str, seed: int, train_insts,
               fusion_layer: int | None = None):
    mcfg = replace(cfg.model, variant=variant, seed=seed)
    if fusion_layer is not None:
        mcfg = replace(mcfg, fusion_layer_index=fusion_layer)
    return train(train_insts, mcfg, cfg.train)


# ---- subcommands ---------------------------------------------------------------


def cmd_train(cfg: ExperimentConfig) -> dict:
    """Train one (variant, seed) cell; write checkpoint + loss log."""
    cfg.validate()
    variant, seed = _single_cell(cfg, "train")
    out = _out_dir(cfg)
    train_insts, _ = _prepare_data(cfg, seed)
    tm = _train_one(cfg, variant, seed, train_insts)
    ckpt = out / f"checkpoint_{variant}_seed{seed}.ckpt"
    save_checkpoint(tm, ckpt)
    loss_log = out / f"loss_{variant}_seed{seed}.csv"
    _write_loss_log(loss_log, tm.step_losses)
    _dump_json(out / "run_config.json", {"config_hash": config_hash(cfg), **cfg.resolved()})
    return {"checkpoint": str(ckpt), "loss_log": str(loss_log),
            "final_loss": tm.epoch_losses[-1]}


def cmd_evaluate(cfg: ExperimentConfig, checkpoint: str) -> dict:
    """Score an existing checkpoint on the held-out data for one seed."""
    cfg.validate()
    if len(cfg.seeds) != 1:
        raise ConfigError(f"evaluate uses one seed; narrow with --seed (got {cfg.seeds})")
    seed = cfg.seeds[0]
    out = _out_dir(cfg)
    tm = load_checkpoint(checkpoint)
    _, test_insts = _prepare_data(cfg, seed)
    scores = evaluate_variant(tm, test_insts)
    row = _metric_row(cfg, tm.config.variant, seed, tm.config.fusion_layer_index, scores)
    _dump_json(out / f"metrics_{tm.config.variant}_seed{seed}.json", row)
    return row


def cmd_ablate(cfg: ExperimentConfig) -> list[dict]:
    """Train and evaluate every configured variant under identical seeds."""
    cfg.validate()
    out = _out_dir(cfg)
    rows = []
    for seed in cfg.seeds:
        train_insts, test_insts = _prepare_data(cfg, seed)
        for variant in cfg.variants:
            tm = _train_one(cfg, variant, seed, train_insts)
            scores = evaluate_variant(tm, test_insts)
            row = _metric_row(cfg, variant, seed, cfg.model.fusion_layer_index, scores)
            _dump_json(out / f"metrics_{variant}_seed{seed}.json", row)
            _write_loss_log(out / f"loss_{variant}_seed{seed}.csv", tm.step_losses)
            rows.append(row)
    cmd_report(cfg)
    return rows


def cmd_sweep_fusion_layer(cfg: ExperimentConfig) -> list[dict]:
    """Train the configured variant with the adapter at every encoder layer."""
    cfg.validate()
    if len(cfg.variants) != 1:
        raise ConfigError(f"sweep-fusion-layer uses one variant; narrow with --variant (got {cfg.variants})")
    variant = cfg.variants[0]
    out = _out_dir(cfg)
    rows = []
    for seed in cfg.seeds:
        train_insts, test_insts = _prepare_data(cfg, seed)
        for layer in range(1, cfg.model.encoder_layers + 1):
            tm = _train_one(cfg, variant, seed, train_insts, fusion_layer=layer)
            scores = evaluate_variant(tm, test_insts)
            row = _metric_row(cfg, variant, seed, layer, scores)
            _dump_json(out / f"metrics_{variant}_layer{layer}_seed{seed}.json", row)
            rows.append(row)
    cmd_report(cfg)
    return rows


def cmd_gen_synthetic(cfg: ExperimentConfig, out_file: str) -> int:
    """Write a synthetic corpus in the standard dataset file format."""
    if cfg.synthetic is None:
        raise ConfigError("gen-synthetic needs a 'synthetic' config section")
    cfg.synthetic.validate()
    instances = generate(cfg.synthetic)
    save_corpus(instances, out_file)
    return len(instances)


def cmd_stats(dataset: str) -> str:
    """Corpus statistics table for a dataset file."""
    if not dataset:
        raise ConfigError("stats needs --dataset")
    stats = corpus_stats(load_and_validate(dataset))
    lines = [stats.render(), ""]
    lines.append("utterances-per-dialogue histogram:")
    for k, v in stats.utterance_count_histogram.items():
        lines.append(f"  {k:>3}  {v}")
    lines.append("top source speakers:")
    top = sorted(stats.source_speaker_counts.items(), key=lambda kv: (-kv[1], kv[0]))[:10]
    for name, count in top:
        lines.append(f"  {name}  {count}")
    return "\n".join(lines) + "\n"


_MEAN_KEYS = ("R1", "R2", "RL", "B1", "B2", "B3", "B4",
              "source_acc", "target_acc", "action_acc", "exact_match")


def _mean_std(values: list[float]) -> str:
    n = len(values)
    mean = sum(values) / n
    if n > 1:
        var = sum((v - mean) ** 2 for v in values) / (n - 1)
        std = var ** 0.5
    else:
        std = 0.0
    return f"{100.0 * mean:.2f}±{100.0 * std:.2f}"


def cmd_report(cfg: ExperimentConfig) -> tuple[str, str]:
    """Aggregate metric files under the run directory into text and CSV
    tables: one row per run, then a mean ± sample-std row per group.
    Re-rendering the same directory is byte-identical."""
    out = _out_dir(cfg)
    files = sorted(out.glob("metrics_*.json"))
    if not files:
        raise ConfigError(f"nothing to report: no metrics_*.json files in '{out}'")
    rows = [json.loads(f.read_text(encoding="utf-8")) for f in files]

    def group_key(row):
        return (row["variant"], row.get("fusion_layer_index", 0))

    groups: dict = {}
    for row in rows:
        groups.setdefault(group_key(row), []).append(row)

    sweep = len({k[1] for k in groups}) > 1
    report = MetricReport()
    for key in sorted(groups):
        variant, layer = key
        label = f"{variant}@L{layer}" if sweep else variant
        members = sorted(groups[key], key=lambda r: r["seed"])
        for row in members:
            values = {k: row[k] for k in _MEAN_KEYS if k in row}
            values["target_acc"] = row.get("target_word_acc", row.get("target_acc"))
            report.add_row(f"{label} s{row['seed']}", values)
        agg: dict = {}
        for k in _MEAN_KEYS:
            src_key = "target_word_acc" if k == "target_acc" else k
            vals = [r[src_key] for r in members if src_key in r]
            if vals:
                agg[k] = _mean_std(vals)
        report.add_row(f"{label} mean", agg)

    header = ("# fusion-mechanism comparison: rows differ only in the fusion pathway "
              "(and seed); host stack, data, and training are held fixed\n")
    text = header + report.to_text()
    csv = report.to_csv()
    (out / "report.txt").write_text(text, encoding="utf-8")
    (out / "report.csv").write_text(csv, encoding="utf-8")
    return text, csv


# ---- CLI -------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config file")
    p.add_argument("--seed", type=int, help="replace the config's seed list with one seed")
    p.add_argument("--out", help="output directory (or file for gen-synthetic)")
    p.add_argument("--variant", help="replace the config's variant list with one variant")
    p.add_argument("--dataset", help="dataset file; overrides the config's data source")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maf",
        description="train, ablate and report on multimodal fusion variants",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("train", "train one variant/seed; writes checkpoint and loss log"),
        ("evaluate", "score a checkpoint on held-out data"),
        ("ablate", "train and evaluate every configured variant and seed"),
        ("sweep-fusion-layer", "move the adapter across encoder layers"),
        ("gen-synthetic", "write a synthetic corpus file"),
        ("stats", "print corpus statistics for a dataset file"),
        ("report", "aggregate metric files in the output directory"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_common(p)
        if name == "evaluate":
            p.add_argument("--checkpoint", required=True, help="model checkpoint to score")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_experiment_config(args.config, args)
        if args.command == "train":
            result = cmd_train(cfg)
            print(f"checkpoint: {result['checkpoint']}")
            print(f"loss log:   {result['loss_log']}")
            print(f"final epoch loss: {result['final_loss']:.4f}")
        elif args.command == "evaluate":
            row = cmd_evaluate(cfg, args.checkpoint)
            print(json.dumps(row, sort_keys=True, indent=2))
        elif args.command == "ablate":
            rows = cmd_ablate(cfg)
            print(f"wrote {len(rows)} metric rows to {cfg.out}")
            print((Path(cfg.out) / "report.txt").read_text(encoding="utf-8"))
        elif args.command == "sweep-fusion-layer":
            rows = cmd_sweep_fusion_layer(cfg)
            print(f"wrote {len(rows)} metric rows to {cfg.out}")
            print((Path(cfg.out) / "report.txt").read_text(encoding="utf-8"))
        elif args.command == "gen-synthetic":
            if not args.out and not cfg.out:
                raise ConfigError("gen-synthetic needs --out FILE")
            target = args.out or cfg.out
            count = cmd_gen_synthetic(cfg, target)
            print(f"wrote {count} instances to {target}")
        elif args.command == "stats":
            if not args.dataset and not cfg.dataset:
                raise ConfigError("stats needs --dataset FILE")
            print(cmd_stats(args.dataset or cfg.dataset), end="")
        elif args.command == "report":
            text, _ = cmd_report(cfg)
            print(text, end="")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MafError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
