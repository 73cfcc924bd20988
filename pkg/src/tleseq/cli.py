"""Command-line front end.

Subcommands: gen-data, train, eval, verify, decompose, compare.  Exit
codes are part of the contract: 0 success, 2 bad config or missing file,
3 verified inequality violated, 4 training diverged, 5 search budget
exceeded.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .datagen import RunConfig, gen_data, load_run_config, make_split, run_config_items
from .editdist import DEFAULT_TERMINAL_CLIP, clip_terminal, delta_targets
from .errors import BudgetError, ConfigError, DivergenceError, VerificationError
from .model import NeuralScorer, ModelConfig, load_model
from .sequences import END_SYMBOL, Alphabet, OutputSequence, load_dataset
from .training import (
    evaluate,
    metrics_csv_lines,
    run_manifest,
    train_ce,
    train_tle,
    write_metrics_csv,
)
from .verify import InstanceGenerator, run_all_verifiers

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_DIVERGED = 4
EXIT_BUDGET = 5


def _beams(text: str) -> tuple[int, ...]:
    try:
        beams = tuple(int(b) for b in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad beam list {text!r}") from None
    if not beams or min(beams) < 1:
        raise ConfigError("beam sizes must be positive")
    return beams


def _load_config(path: str | None) -> RunConfig:
    return load_run_config(path) if path else RunConfig()


def _print_reports(reports) -> None:
    print(f"{'split':<6} {'beam':>4} {'TER':>8} {'SER':>8} {'loss_ce':>10} {'loss_g2':>12}")
    for r in reports:
        print(f"{r.split:<6} {r.beam:>4} {r.ter:>8.4f} {r.ser:>8.4f} "
              f"{r.loss_ce:>10.4f} {r.loss_greedy2:>12.4f}")


def _cmd_gen_data(args) -> int:
    config = _load_config(args.config)
    paths = gen_data(config, args.out)
    for split in ("train", "valid", "test"):
        print(f"{split}: {paths[split]} ({config.split_size(split)} samples)")
    return EXIT_OK


def _datasets_from_dir(config: RunConfig, data_dir: str | None):
    """Sample lists plus the file paths that identify them in the manifest."""
    if data_dir is None:
        return {s: make_split(config, s) for s in ("train", "valid", "test")}, {}
    alpha = config.alphabet
    sets, paths = {}, {}
    for split in ("train", "valid", "test"):
        path = Path(data_dir) / f"{split}.tsv"
        if not path.is_file():
            raise ConfigError(f"missing dataset file: {path}")
        sets[split] = load_dataset(path, alpha, alpha)
        paths[split] = path
    return sets, paths


def _cmd_train(args) -> int:
    config = _load_config(args.config)
    sets, paths = _datasets_from_dir(config, args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    model = NeuralScorer(ModelConfig(
        config.alphabet_size, config.alphabet_size, seed=config.train.seed))
    trainer = train_tle if args.mode == "tle" else train_ce
    ckpt = out / "model.ckpt"
    result = trainer(model, sets["train"], sets["valid"],
                     dataclasses.replace(config.train, checkpoint_path=ckpt))

    view = "raw" if args.mode == "tle" else "normalized"
    test_reports = evaluate(model, sets["test"], config.eval_beams,
                            decode_view=view, split="test",
                            epoch=result.epochs_run,
                            clip_value=config.train.clip_value)
    reports = list(result.history) + test_reports
    write_metrics_csv(out / "metrics.csv", reports, config.train.csv_timing)
    manifest = run_manifest(
        {**run_config_items(config), "mode": args.mode},
        paths,
        {"epochs_run": result.epochs_run, "best_epoch": result.best_epoch,
         "best_val_loss": result.best_val_loss},
    )
    (out / "manifest.json").write_text(manifest, encoding="utf-8")
    print(f"trained {args.mode} for {result.epochs_run} epochs "
          f"(best epoch {result.best_epoch}); artifacts in {out}")
    _print_reports(test_reports)
    return EXIT_OK


def _cmd_eval(args) -> int:
    model = load_model(args.model)
    alpha = Alphabet.of_size(model.config.output_size)
    dataset = load_dataset(args.data, alpha, alpha)
    view = "normalized" if args.normalized else "raw"
    reports = evaluate(model, dataset, _beams(args.beams), decode_view=view)
    _print_reports(reports)
    return EXIT_OK


def _cmd_verify(args) -> int:
    gen = InstanceGenerator(seed=args.seed, distribution=args.distribution,
                            noise_scale=args.noise_scale)
    reports = run_all_verifiers(gen, args.trials)
    bad = False
    for name, report in sorted(reports.items()):
        print(f"== {name} ({report.trials} trials, seed {report.seed})")
        print(report.table())
        print()
        bad = bad or not report.ok(args.tol)
    if args.json:
        import json
        print(json.dumps({name: json.loads(r.to_json())
                          for name, r in sorted(reports.items())}, indent=2))
    if bad:
        print(f"FAIL: at least one violation exceeds {args.tol:g}", file=sys.stderr)
        return EXIT_VERIFY
    print(f"all checks within {args.tol:g}")
    return EXIT_OK


def _symbols(text: str) -> list[str]:
    """'a b c' splits on whitespace; 'abc' falls back to characters."""
    return text.split() if any(ch.isspace() for ch in text) else list(text)


def _decompose_alphabet(args) -> Alphabet:
    if args.symbols:
        return Alphabet(tuple(_symbols(args.symbols)))
    if args.alphabet_size:
        return Alphabet.of_size(args.alphabet_size)
    seen = sorted(set(_symbols(args.gt)) | set(_symbols(args.prefix)))
    return Alphabet(tuple(seen))


def _cmd_decompose(args) -> int:
    alpha = _decompose_alphabet(args)
    gt = OutputSequence.complete(alpha.encode(_symbols(args.gt)), alpha)
    prefix_tokens = alpha.encode(_symbols(args.prefix))
    rows = np.stack([
        delta_targets(gt, OutputSequence.prefix(prefix_tokens[:j], alpha))
        for j in range(len(prefix_tokens) + 1)
    ])
    clipped = clip_terminal(rows, args.clip)
    names = list(alpha.symbols) + [END_SYMBOL]
    print("step prefix    " + "".join(f"{n:>7}" for n in names)
          + f"  {'clipped$':>9}")
    for j in range(rows.shape[0]):
        shown = " ".join(alpha.decode(prefix_tokens[:j])) or "(empty)"
        print(f"{j:>4} {shown:<9} "
              + "".join(f"{v:>7.0f}" for v in rows[j])
              + f"  {clipped[j, -1]:>9.1f}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    config = _load_config(args.config)
    sets, paths = _datasets_from_dir(config, args.data)
    rows = []
    for mode in ("ce", "tle"):
        model = NeuralScorer(ModelConfig(
            config.alphabet_size, config.alphabet_size, seed=config.train.seed))
        trainer = train_tle if mode == "tle" else train_ce
        result = trainer(model, sets["train"], sets["valid"], config.train)
        view = "raw" if mode == "tle" else "normalized"
        for r in evaluate(model, sets["test"], config.eval_beams,
                          decode_view=view, split="test",
                          epoch=result.epochs_run,
                          clip_value=config.train.clip_value):
            rows.append((mode.upper(), r))
    print(f"{'model':<6} {'beam':>4} {'TER':>8} {'SER':>8}")
    for mode, r in rows:
        print(f"{mode:<6} {r.beam:>4} {r.ter:>8.4f} {r.ser:>8.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "compare.csv", [r for _, r in rows],
                          config.train.csv_timing)
        print(f"written {out / 'compare.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tleseq",
        description="Train and analyze edit-distance score estimators for "
                    "sequence prediction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic train/valid/test files")
    p.add_argument("--config", help="key=value run config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train a scorer; writes checkpoint, manifest, CSV")
    p.add_argument("--config", help="key=value run config file")
    p.add_argument("--data", help="directory from gen-data (default: regenerate in memory)")
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--mode", choices=("tle", "ce"), default="tle")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="dataset .tsv file")
    p.add_argument("--beams", default="1,10", help="comma-separated beam sizes")
    p.add_argument("--normalized", action="store_true",
                   help="decode by per-step probabilities (CE-trained models)")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("verify", help="stress-test the guaranteed inequalities")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--distribution", choices=("uniform", "perturbed"),
                   default="uniform")
    p.add_argument("--noise-scale", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--json", action="store_true", help="also print JSON report")
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("decompose",
                       help="per-token target table for a (ground truth, prefix) pair")
    p.add_argument("--gt", required=True, help="ground-truth symbols, e.g. 'a b c' or 'abc'")
    p.add_argument("--prefix", default="", help="already-emitted symbols")
    p.add_argument("--alphabet-size", type=int,
                   help="use the first k standard symbols (default: infer from gt+prefix)")
    p.add_argument("--symbols", help="explicit space-separated alphabet")
    p.add_argument("--clip", type=float, default=DEFAULT_TERMINAL_CLIP)
    p.set_defaults(fn=_cmd_decompose)

    p = sub.add_parser("compare", help="train CE and TLE on the same data, report both")
    p.add_argument("--config", help="key=value run config file")
    p.add_argument("--data", help="directory from gen-data")
    p.add_argument("--out", help="optional directory for compare.csv")
    p.set_defaults(fn=_cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except VerificationError as e:
        print(f"verification violation: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except BudgetError as e:
        print(f"budget exceeded: {e}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
