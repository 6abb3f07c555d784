"""Command-line entry point.

Verbs: synth, train, eval, score, ablate, domain-shift, embed-analysis,
sweep.  Artifacts land in a run directory named by the content hash of the
resolved config plus the seed(s); an existing run directory is never
overwritten without --force.

Exit codes: 0 ok, 2 config error, 3 data error, 4 checkpoint error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .config import (ABLATION_MODES, ConfigError, TrainConfig, config_field_names,
                     config_hash, make_config, parse_overrides)
from .data import DataError, generate_synthetic_dataset, save_jsonl
from .experiments import (INPUT_CONDITIONS, run_ablation, run_domain_shift,
                          run_embedding_analysis, run_temperature_sweep)
from .metrics import METRIC_HEADERS, MetricReport, evaluate_corpus, sentence_scores
from .model import CheckpointError
from .training import Trainer

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 2, 3, 4


def _config_epilog() -> str:
    defaults = TrainConfig()
    lines = ["config keys (override with --set key=value):"]
    for name in config_field_names():
        lines.append(f"  {name} (default {getattr(defaults, name)!r})")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvreport",
        description="Multi-view report generation: synthesize data, train, "
                    "evaluate, and reproduce the analysis runs.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="YAML config file (flat key: value mapping)")
        p.add_argument("--profile", default="desk", help="config profile: desk or paper")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--seed", type=int, help="training seed (overrides config)")
        p.add_argument("--out", default="runs", help="parent directory for run artifacts")
        p.add_argument("--force", action="store_true", help="overwrite an existing run directory")

    p = sub.add_parser("synth", help="generate a synthetic paired-view dataset")
    add_config_args(p)
    p.add_argument("--cases", type=int, help="number of cases (overrides config)")

    p = sub.add_parser("train", help="train one model (pretraining + RL)",
                       epilog=_config_epilog(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    add_config_args(p)
    p.add_argument("--mode", choices=ABLATION_MODES, help="wiring (overrides config)")

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--views", default="both", choices=INPUT_CONDITIONS)
    p.add_argument("--decode", choices=("greedy", "beam"))
    p.add_argument("--out", help="write the metric CSV here (default: stdout)")

    p = sub.add_parser("score", help="score candidate reports against references")
    p.add_argument("--candidates", required=True, help="plain text, one report per line")
    p.add_argument("--references", required=True, help="plain text, line-aligned")
    p.add_argument("--per-line", action="store_true", help="emit one CSV row per line pair")
    p.add_argument("--out", help="write the CSV here (default: stdout)")

    p = sub.add_parser("ablate", help="train and score all four wirings per seed")
    add_config_args(p)
    p.add_argument("--seeds", default="0,1,2", help="comma-separated training seeds")
    p.add_argument("--with-rl", action="store_true",
                   help="include the RL phase (trend runs default to pretraining only)")

    p = sub.add_parser("domain-shift",
                       help="evaluate checkpoints under single- and both-view inputs")
    p.add_argument("--ablation-dir", required=True,
                   help="directory produced by `ablate` (expects <mode>-s<seed>/checkpoint.pt)")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--models", default="mvco_fusion,mvco_dot")
    p.add_argument("--out", default="runs")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("embed-analysis",
                       help="paired-view embedding distances and 2-D scatter data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", default="runs")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("sweep", help="temperature sweep over tau_c or tau_s")
    add_config_args(p)
    p.add_argument("--param", required=True, choices=("tau_c", "tau_s"))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--with-rl", action="store_true")
    return parser


def _resolve_config(args) -> TrainConfig:
    overrides = parse_overrides(args.overrides)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "cases", None) is not None:
        overrides["n_cases"] = args.cases
    if getattr(args, "mode", None) is not None:
        overrides["ablation_mode"] = args.mode
    return make_config(args.profile, args.config, overrides)


def _run_dir(args, verb: str, config: TrainConfig, seed_tag: str) -> Path:
    run_dir = Path(args.out) / f"{verb}-{config_hash(config)}-{seed_tag}"
    if run_dir.exists() and not args.force:
        raise ConfigError(f"run directory {run_dir} exists; pass --force to overwrite")
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _plain_dir(args, name: str) -> Path:
    out = Path(args.out) / name
    if out.exists() and not args.force:
        raise ConfigError(f"run directory {out} exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_seeds(raw: str) -> list[int]:
    try:
        return [int(s) for s in raw.split(",") if s.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad seed list {raw!r}") from exc


def _write_metric_csv(report: MetricReport, path: Path | None) -> None:
    rows = [list(METRIC_HEADERS), [f"{v:.4f}" for v in report.as_row()]]
    if path is None:
        writer = csv.writer(sys.stdout)
        writer.writerows(rows)
    else:
        with path.open("w", newline="") as fh:
            csv.writer(fh).writerows(rows)


def cmd_synth(args) -> int:
    config = _resolve_config(args)
    run_dir = _run_dir(args, "synth", config, f"s{config.data_seed}")
    cases = generate_synthetic_dataset(config.n_cases, config.n_findings,
                                       config.noise_level, seed=config.data_seed,
                                       image_size=config.image_size)
    save_jsonl(cases, run_dir / "dataset.jsonl")
    config.save(run_dir / "config.yaml")
    print(f"wrote {len(cases)} cases to {run_dir / 'dataset.jsonl'}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _resolve_config(args)
    run_dir = _run_dir(args, "train", config, f"s{config.seed}")
    trainer = Trainer(config)
    result = trainer.train(run_dir)
    print(f"checkpoint: {result['checkpoint']}")
    print(f"trainlog:   {result['trainlog']}")
    print("test metrics:", {k: round(v, 4) for k, v in result["test"].as_dict().items()})
    return EXIT_OK


def cmd_eval(args) -> int:
    trainer = Trainer.from_checkpoint(args.checkpoint)
    report = trainer.evaluate(args.split, decode=args.decode, views=args.views)
    _write_metric_csv(report, Path(args.out) if args.out else None)
    return EXIT_OK


def _read_token_lines(path: str) -> list[list[str]]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {path}")
    return [line.split() for line in p.read_text().splitlines()]


def cmd_score(args) -> int:
    candidates = _read_token_lines(args.candidates)
    references = _read_token_lines(args.references)
    if len(candidates) != len(references):
        raise DataError(
            f"line count mismatch: {len(candidates)} candidates vs "
            f"{len(references)} references")
    if not candidates:
        raise DataError("no lines to score")
    rows = [["line", *METRIC_HEADERS]]
    if args.per_line:
        for i, (cand, ref) in enumerate(zip(candidates, references), start=1):
            rows.append([str(i), *(f"{v:.4f}" for v in sentence_scores(cand, [ref]))])
    corpus = evaluate_corpus(candidates, references)
    rows.append(["corpus", *(f"{v:.4f}" for v in corpus.as_row())])
    out = Path(args.out) if args.out else None
    if out is None:
        csv.writer(sys.stdout).writerows(rows)
    else:
        with out.open("w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = _resolve_config(args)
    seeds = _parse_seeds(args.seeds)
    run_dir = _run_dir(args, "ablate", config, "s" + "-".join(map(str, seeds)))
    result = run_ablation(config, seeds, run_dir, with_rl=args.with_rl)
    for mode in ABLATION_MODES:
        print(f"{mode:12s} mean B-1 = {result.mean_metric(mode, 'B-1'):.4f}")
    print(f"table: {run_dir / 'ablation.csv'}")
    return EXIT_OK


def cmd_domain_shift(args) -> int:
    seeds = _parse_seeds(args.seeds)
    labels = [m.strip() for m in args.models.split(",") if m.strip()]
    base = Path(args.ablation_dir)
    checkpoints: dict[str, dict[int, Path]] = {}
    for label in labels:
        checkpoints[label] = {}
        for seed in seeds:
            ckpt = base / f"{label}-s{seed}" / "checkpoint.pt"
            if not ckpt.exists():
                raise CheckpointError(f"checkpoint not found: {ckpt}")
            checkpoints[label][seed] = ckpt
    out = _plain_dir(args, f"domain-shift-{'-'.join(labels)}")
    result = run_domain_shift(checkpoints, out)
    for label in labels:
        for condition in INPUT_CONDITIONS:
            print(f"{label:12s} {condition:8s} mean B-1 = "
                  f"{result.mean_metric(label, condition):.4f}")
    print(f"grid: {out / 'domain_shift.csv'}")
    return EXIT_OK


def cmd_embed_analysis(args) -> int:
    out = _plain_dir(args, f"embed-{Path(args.checkpoint).parent.name}")
    stats = run_embedding_analysis(args.checkpoint, out, split=args.split)
    print(f"mean paired-view cosine distance: {stats['mean_paired_distance']:.4f} "
          f"(n={stats['n_pairs']})")
    print(f"scatter: {out / 'embedding_scatter.csv'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _resolve_config(args)
    seeds = _parse_seeds(args.seeds)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values {args.values!r}") from exc
    run_dir = _run_dir(args, f"sweep-{args.param}", config,
                       "s" + "-".join(map(str, seeds)))
    rows = run_temperature_sweep(config, args.param, values, seeds, run_dir,
                                 with_rl=args.with_rl)
    for row in rows:
        print(f"{args.param}={row['value']:<6g} seed={row['seed']} B-1={row['B-1']:.4f}")
    print(f"table: {run_dir / f'sweep_{args.param}.csv'}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "score": cmd_score,
    "ablate": cmd_ablate,
    "domain-shift": cmd_domain_shift,
    "embed-analysis": cmd_embed_analysis,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
