"""Command-line interface.

Exit codes: 0 success, 1 configuration error (bad flags, bad config file),
2 runtime failure (data errors, training failures, I/O problems).
"""
from __future__ import annotations

import argparse
import json
import sys

from primed import metrics
from primed.data import save_csv
from primed.harness import (ConfigError, validate_config, materialize_dataset,
                            run_compare, write_compare_outputs, run_pilot,
                            export_latent)
from primed.synth import generate


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; bad flags are a
    configuration error here, so surface them as ConfigError instead."""

    def error(self, message):
        raise ConfigError([f"{self.prog}: {message}"])


def _parse_float_list(text: str, what: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ConfigError([f"{what}: expected comma-separated numbers, got {text!r}"]) from None


def _parse_seed_list(text: str) -> list[int]:
    """Comma-separated integers; 'a-b' runs inclusive, e.g. '0-9,20'."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if part == "":
            continue
        try:
            if "-" in part[1:]:
                split_at = part.index("-", 1)
                lo, hi = int(part[:split_at]), int(part[split_at + 1:])
                if hi < lo:
                    raise ValueError
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ConfigError(
                [f"--seeds: expected integers or ranges like 0-9, got {part!r}"]) from None
    return seeds


def _require_out_dir(config, args) -> str:
    out_dir = args.out_dir or config.output_dir
    if out_dir is None:
        raise ConfigError(["no output directory: set output_dir in the config "
                           "or pass --out-dir"])
    return out_dir


def _cmd_validate(args) -> int:
    config = validate_config(args.config)
    source = "synthetic" if config.synth is not None else config.csv.path
    print(f"ok: dataset={source} methods={','.join(config.methods)}")
    return 0


def _cmd_synth(args) -> int:
    config = validate_config(args.config)
    if config.synth is None:
        raise ConfigError(["synth command needs a dataset.synth section"])
    dataset, _ = generate(config.synth)
    save_csv(dataset, args.out)
    print(f"wrote {dataset.n} records to {args.out}")
    return 0


def _cmd_compare(args) -> int:
    config = validate_config(args.config)
    out_dir = _require_out_dir(config, args)
    try:
        result = run_compare(config)
    except RuntimeError as exc:
        partial = getattr(exc, "partial", None)
        if partial is not None:
            write_compare_outputs(partial, out_dir)
            print(f"partial results written to {out_dir}", file=sys.stderr)
        raise
    files = write_compare_outputs(result, out_dir)
    print(f"split_hash: {result.split_hash}")
    for mr in result.methods:
        rep = mr.report
        print(f"{mr.method}: auroc={rep.overall_auroc:.4f} "
              + " ".join(f"disparity[{a.name}]={a.disparity:.4f}"
                         for a in rep.attributes if a.disparity is not None))
    print(f"wrote {len(files)} files to {out_dir}")
    return 0


def _cmd_train(args) -> int:
    from dataclasses import replace

    from primed.harness import METHODS

    config = validate_config(args.config)
    if args.method not in METHODS:
        raise ConfigError([f"--method: unknown method {args.method!r}; "
                           f"valid: {', '.join(METHODS)}"])
    config = replace(config, methods=(args.method,))
    out_dir = _require_out_dir(config, args)
    result = run_compare(config)
    write_compare_outputs(result, out_dir)
    mr = result.methods[0]
    print(f"{mr.method}: test auroc={mr.report.overall_auroc:.4f}; "
          f"artifacts in {out_dir}")
    return 0


def _cmd_evaluate(args) -> int:
    rep = _report_from_scores_csv(args.scores, args.threshold)
    for key, value in rep.to_kv_rows():
        print(f"{key} = {'NA' if value is None else value}")
    if args.out_dir is not None:
        import os
        os.makedirs(args.out_dir, exist_ok=True)
        metrics.write_report_csv(rep, os.path.join(args.out_dir, "metrics.csv"))
        metrics.write_report_json(rep, os.path.join(args.out_dir, "metrics.json"))
        print(f"wrote metrics.csv and metrics.json to {args.out_dir}")
    return 0


def _report_from_scores_csv(path, threshold):
    import csv as csvmod

    import numpy as np

    from primed.data import DataError, SensitiveSchema

    with open(path, newline="") as fh:
        reader = csvmod.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header[:3] != ["record_id", "score", "label"]:
            raise DataError(f"{path}: expected columns record_id,score,label,... "
                            f"got {header[:3]}")
        attr_names = header[3:]
        scores, labels = [], []
        cats: list[dict[str, int]] = [{} for _ in attr_names]
        sens_rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}: row {line_no} has {len(row)} fields")
            scores.append(float(row[1]))
            labels.append(int(float(row[2])))
            sens_rows.append([cats[j].setdefault(row[3 + j], len(cats[j]))
                              for j in range(len(attr_names))])
    if not scores:
        raise DataError(f"{path}: no data rows")
    schema = SensitiveSchema(tuple(
        (name, tuple(c.keys())) for name, c in zip(attr_names, cats)))
    return metrics.report(np.asarray(scores), np.asarray(labels),
                          np.asarray(sens_rows, dtype=np.int64).reshape(len(scores), len(attr_names)),
                          schema, threshold)


def _cmd_pilot(args) -> int:
    config = validate_config(args.config)
    out_dir = _require_out_dir(config, args)
    gammas = _parse_float_list(args.gammas, "--gammas")
    seeds = _parse_seed_list(args.seeds)
    result = run_pilot(config, gammas, seeds, out_dir)
    print("gamma median_auroc median_disparity")
    for gamma, auroc_med, disp_med in result.medians:
        print(f"{gamma:g} {auroc_med:.4f} {disp_med:.4f}")
    print(f"wrote pilot tables to {out_dir}")
    return 0


def _cmd_export_latent(args) -> int:
    config = validate_config(args.config)
    dataset = materialize_dataset(config)
    export_latent(args.checkpoint, dataset, args.out)
    print(f"wrote {dataset.n} latent rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="primed",
                     description="Two-stage deconfounder experiments on tabular data")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        return p

    p = add("validate", _cmd_validate, "check a config file, reporting every problem")
    p.add_argument("--config", required=True)

    p = add("synth", _cmd_synth, "generate the configured synthetic dataset as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = add("compare", _cmd_compare, "train the configured methods on one split "
                                     "and write metric/score artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)

    p = add("train", _cmd_train, "train a single method and write its artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--method", required=True)
    p.add_argument("--out-dir", default=None)

    p = add("evaluate", _cmd_evaluate, "recompute metrics from a scores CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out-dir", default=None)

    p = add("pilot", _cmd_pilot, "sweep gamma x seeds with the DNN baseline")
    p.add_argument("--config", required=True)
    p.add_argument("--gammas", required=True, help="comma-separated, e.g. 0,1,2")
    p.add_argument("--seeds", required=True, help="comma-separated or ranges, e.g. 0-9")
    p.add_argument("--out-dir", default=None)

    p = add("export-latent", _cmd_export_latent,
            "write substitute confounders for the configured dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        for line in exc.diagnostics:
            print(f"config error: {line}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
