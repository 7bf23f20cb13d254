"""Command-line pipeline: synth, pretrain, cv, embed.

Exit codes: 0 success, 1 usage or configuration error, 2 data or file
format error, 3 numeric failure (including a cross-validation where every
fold failed), 4 partial cross-validation success. Every command echoes the
effective configuration into its output directory as resolved_config.toml;
re-running from that file reproduces the run byte for byte.
"""

import argparse
import json
import os
import sys

import numpy as np

from dbsfm import dataio, evaluation, model, synth
from dbsfm.config import (
    RunConfig,
    apply_overrides,
    load_config,
    write_resolved_config,
)
from dbsfm.errors import (
    AlignmentError,
    ConfigError,
    DataFormatError,
    NumericError,
    ValidationError,
)
from dbsfm.tokens import SYMPTOM_COLUMNS
from dbsfm.training import pretrain

CHECKPOINT_NAME = "checkpoint.bin"
REPORT_NAME = "report.csv"


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through the exit-code-1 path."""

    def error(self, message):
        raise ConfigError(message)


def _load_effective_config(args, **overrides) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = apply_overrides(cfg, **overrides)
    return cfg.validate()


def cmd_synth(args) -> int:
    cfg = _load_effective_config(
        args, seed=args.seed, synth__subjects=args.subjects, synth__days=args.days
    )
    dataset = synth.default_cohort(
        n_subjects=cfg.synth.subjects, days=cfg.synth.days, master_seed=cfg.seed
    )
    os.makedirs(args.out, exist_ok=True)
    dataio.write_dataset(args.out, dataset, extra_manifest={"master_seed": cfg.seed})
    write_resolved_config(cfg, os.path.join(args.out, "resolved_config.toml"))
    print(f"wrote {len(dataset.subject_ids)} subjects to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_effective_config(args, seed=args.seed, pretrain__epochs=args.epochs)
    exclude = (args.exclude_subject,) if args.exclude_subject else ()
    sequences_by_subject = dataio.load_sequences(args.data, cfg.welch_config(), exclude=exclude)
    sequences = [s for sid in sequences_by_subject for s in sequences_by_subject[sid]]
    if not sequences:
        raise DataFormatError(f"no usable sequences found under {args.data}")

    store, report = pretrain(sequences, cfg.model_config(), cfg.pretrain_hyper())
    os.makedirs(args.out, exist_ok=True)
    model.save_checkpoint(os.path.join(args.out, CHECKPOINT_NAME), store, cfg.model_config())
    report.write_csv(os.path.join(args.out, REPORT_NAME))
    write_resolved_config(cfg, os.path.join(args.out, "resolved_config.toml"))
    print(
        f"pre-trained on {len(sequences)} sequences for {report.epochs_run} epochs; "
        f"final val loss {report.val_loss[-1]:.6f}"
    )
    return 0


def cmd_cv(args) -> int:
    cfg = _load_effective_config(args, seed=args.seed)
    sequences_by_subject = dataio.load_sequences(args.data, cfg.welch_config())
    summary = evaluation.run_loso(
        sequences_by_subject, cfg.model_config(), cfg.pretrain_hyper(), cfg.finetune_hyper()
    )

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "folds.csv"), "w", newline="") as fh:
        fh.write("subject,symptom,r,epochs\n")
        for fold in summary.folds:
            if fold.failed:
                continue
            for symptom in SYMPTOM_COLUMNS:
                epochs = fold.finetune_reports[symptom].epochs_run
                fh.write(f"{fold.held_out_subject},{symptom},{fold.r[symptom]!r},{epochs}\n")

    for fold in summary.folds:
        if fold.failed:
            continue
        path = os.path.join(args.out, f"predictions_{fold.held_out_subject}.csv")
        with open(path, "w", newline="") as fh:
            fh.write(
                "t_unix_s,"
                + ",".join(f"{s}_true,{s}_pred" for s in SYMPTOM_COLUMNS)
                + "\n"
            )
            times = fold.predictions[SYMPTOM_COLUMNS[0]][0]
            columns = []
            for symptom in SYMPTOM_COLUMNS:
                _, truth, pred = fold.predictions[symptom]
                columns.extend([truth, pred])
            for i, t in enumerate(times):
                fh.write(str(int(t)) + "," + ",".join(repr(float(c[i])) for c in columns) + "\n")

    payload = {
        "format_version": dataio.FORMAT_VERSION,
        "symptoms": {
            s: {
                "mean_r": summary.mean_r.get(s),
                "std_r": summary.std_r.get(s),
                "n_folds": sum(1 for f in summary.folds if not f.failed),
            }
            for s in SYMPTOM_COLUMNS
        },
        "failed_subjects": {
            f.held_out_subject: f.error for f in summary.folds if f.failed
        },
    }
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    write_resolved_config(cfg, os.path.join(args.out, "resolved_config.toml"))

    n_folds = len(summary.folds)
    for symptom in SYMPTOM_COLUMNS:
        if symptom in summary.mean_r:
            print(
                f"{symptom}: mean r = {summary.mean_r[symptom]:.4f} "
                f"+- {summary.std_r[symptom]:.4f} over {n_folds - summary.n_failed} folds"
            )
    if summary.n_failed == n_folds:
        print("every fold failed", file=sys.stderr)
        return 3
    if summary.n_failed:
        print(f"{summary.n_failed}/{n_folds} folds failed", file=sys.stderr)
        return 4
    return 0


def cmd_embed(args) -> int:
    cfg = _load_effective_config(args)
    store, model_cfg = model.load_checkpoint(args.checkpoint)
    sequences_by_subject = dataio.load_sequences(args.data, cfg.welch_config())
    sequences = [s for sid in sequences_by_subject for s in sequences_by_subject[sid]]
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    rows = evaluation.export_embeddings(
        store, model_cfg, sequences, args.out, include_cls=args.include_cls
    )
    write_resolved_config(cfg, os.path.join(out_dir, "resolved_config.toml"))
    print(f"wrote {rows} embedding rows to {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="dbsfm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--subjects", type=int, help="override synth.subjects")
    p.add_argument("--days", type=float, help="override synth.days")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="masked-autoencoder pre-training")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--exclude-subject", help="subject id to exclude entirely")
    p.add_argument("--epochs", type=int, help="override pretrain.epochs")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("cv", help="leave-one-subject-out cross-validation")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("embed", help="export per-token embeddings to CSV")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--include-cls", action="store_true", help="also export CLS rows")
    p.set_defaults(func=cmd_embed)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, AlignmentError, ValidationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
