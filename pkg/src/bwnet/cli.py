"""Command-line harness: bwn train | eval | compress | inspect | verify.

Exit codes: 0 success, 2 configuration problem, 3 numerical divergence,
4 file-format violation.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import data_config, load_config, resolved_config_text, train_config, \
    with_overrides
from .errors import BwnError, ConfigError, FormatError, NumericsError
from .layers import build_micro_resnet
from .metrics import evaluate, format_report, load_trial_file, report_key_values
from .model_io import ENC_PACKED, format_size_report, load_model, read_records, \
    save_model, size_report
from .synthdata import export_dataset, generate_dataset, load_utterance_store
from .training import train_network
from .verify import SCOPES, run_checks

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_FORMAT = 4


def _metric_line(record: dict) -> str:
    return (f"epoch={record['epoch']} lr={record['lr']:.6g} "
            f"loss={record['loss']:.6f} accuracy={record['accuracy']:.4f}")


def cmd_train(args) -> int:
    config = with_overrides(load_config(args.config), seed=args.seed, out_dir=args.out)
    os.makedirs(config.out_dir, exist_ok=True)
    with open(os.path.join(config.out_dir, "config.resolved.cfg"), "w",
              encoding="utf-8") as handle:
        handle.write(resolved_config_text(config))

    dataset = generate_dataset(data_config(config))
    export_dataset(dataset, config.out_dir)
    spec = build_micro_resnet(
        config.depth_blocks,
        config.channels,
        num_classes=config.num_speakers,
        embedding_dim=config.embedding_dim,
        activation=config.activation,
        input_channels=1,
    )

    log_path = os.path.join(config.out_dir, "metrics.log")
    with open(log_path, "w", encoding="utf-8") as log_file:
        def log_fn(record):
            line = _metric_line(record)
            print(line)
            log_file.write(line + "\n")

        state, history = train_network(spec, dataset.train_split(),
                                       train_config(config), log_fn=log_fn)

    checkpoint_path = os.path.join(config.out_dir, "checkpoint.bwn")
    model_path = os.path.join(config.out_dir, "model.bwn")
    save_model(checkpoint_path, spec, state.params, encoding="float32")
    save_model(model_path, spec, state.params, encoding="packed")
    final = history[-1] if history else {"loss": float("nan"), "accuracy": float("nan")}
    print(f"wrote {checkpoint_path} (float32) and {model_path} (packed); "
          f"final loss={final['loss']:.6f} accuracy={final['accuracy']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    spec, params = load_model(args.model)
    trials = load_trial_file(args.trials)
    utterances = load_utterance_store(args.data)
    report = evaluate(spec, params, trials, utterances,
                      p_target=args.p_target, c_miss=args.c_miss, c_fa=args.c_fa)
    print(format_report(report))
    print()
    print(report_key_values(report))
    return EXIT_OK


def cmd_compress(args) -> int:
    spec, records = read_records(args.model)
    if any(record.encoding == ENC_PACKED for record in records):
        raise ConfigError(
            f"'{args.model}' already contains packed records; compress expects a "
            "float32 checkpoint"
        )
    spec, params = load_model(args.model)
    save_model(args.out, spec, params, encoding="packed")
    print(f"wrote {args.out}")
    report = size_report(spec, params)
    if report.binarizable_params == 0:
        print("warning: model has no binarizable layers; packed size equals float size")
    print(format_size_report(report))
    return EXIT_OK


def cmd_inspect(args) -> int:
    spec, records = read_records(args.model)
    print(f"{args.model}: {len(records)} parameter records, "
          f"{len(spec.layers)} frontend layers, embedding_dim={spec.embedding_dim}, "
          f"num_classes={spec.num_classes}")
    header = (f"{'record':<24} {'kind':<14} {'shape':<20} {'encoding':<9} "
              f"{'bytes':>10}  scales(min/mean/max)  first word")
    print(header)
    for record in records:
        shape = "x".join(str(e) for e in record.shape)
        encoding = "packed" if record.encoding == ENC_PACKED else "float32"
        if record.scales is not None:
            scales = (f"{record.scales.min():.4f}/{record.scales.mean():.4f}/"
                      f"{record.scales.max():.4f}")
            word = f"0x{record.first_word:016x}"
        else:
            scales = "-"
            word = "-"
        print(f"{record.name:<24} {record.kind:<14} {shape:<20} {encoding:<9} "
              f"{record.payload_bytes:>10}  {scales:<21} {word}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_checks(args.scope)
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status} {result.name}: {result.detail} [{result.elapsed_s:.2f}s]")
    return EXIT_OK if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bwn",
        description="Binary-weight network engine: train, evaluate, compress, "
                    "inspect, verify.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on a synthetic speaker dataset")
    p_train.add_argument("--config", required=True, help="key = value run config")
    p_train.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a trial list with a trained model")
    p_eval.add_argument("--model", required=True, help="model file (packed or float32)")
    p_eval.add_argument("--trials", required=True, help="trial list: 'label enroll test'")
    p_eval.add_argument("--data", required=True,
                        help="utterance tensor file (.bin; sibling .idx is implied)")
    p_eval.add_argument("--p-target", type=float, default=0.01, dest="p_target")
    p_eval.add_argument("--c-miss", type=float, default=1.0, dest="c_miss")
    p_eval.add_argument("--c-fa", type=float, default=1.0, dest="c_fa")
    p_eval.set_defaults(func=cmd_eval)

    p_compress = sub.add_parser("compress", help="pack a float32 checkpoint")
    p_compress.add_argument("--model", required=True, help="float32 checkpoint path")
    p_compress.add_argument("--out", required=True, help="packed model output path")
    p_compress.set_defaults(func=cmd_compress)

    p_inspect = sub.add_parser("inspect", help="print a model file's layer table")
    p_inspect.add_argument("--model", required=True)
    p_inspect.set_defaults(func=cmd_inspect)

    p_verify = sub.add_parser("verify", help="run the self-verification oracles")
    p_verify.add_argument("scope", choices=SCOPES, nargs="?", default="all")
    p_verify.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except BwnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
