"""Command line: ``cadex train``, ``cadex explain`` and ``cadex evaluate``.

Option values come from built-in defaults, then a YAML ``--config`` file,
then command-line flags, in increasing precedence.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import yaml

from cadex._io import atomic_write_text
from cadex.data import (GERMAN_DATA, GERMAN_SCHEMA, DataError, SchemaError, decode, display, encode,
                        expand_direction, load_dataset, load_schema, parse_fields, split)
from cadex.evaluation import evaluate, refused_indices, summary_text, write_reports
from cadex.nnet import TrainConfig, init_network, load_network, predict, save_network, train
from cadex.search import AlreadyTarget, NoDescentDirection, SearchConfig, diff_table, find_counterfactual

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ALREADY_TARGET = 4
EXIT_NOT_FOUND = 5

log = logging.getLogger("cadex")


class ConfigError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cadex", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file of option defaults")
    common.add_argument("--schema", default=str(GERMAN_SCHEMA))
    common.add_argument("--data", default=str(GERMAN_DATA))
    common.add_argument("--seed", type=int, default=42)

    search = argparse.ArgumentParser(add_help=False)
    search.add_argument("--model", required=False, help="model file written by 'train'")
    search.add_argument("--target", default=None, help="target class name or index (default: class 0)")
    search.add_argument("--t-flip", type=float, default=0.2)
    search.add_argument("--max-epochs", type=int, default=1000)
    search.add_argument("--search-lr", type=float, default=0.05)
    search.add_argument("--alternatives", type=int, default=None)

    p = sub.add_parser("train", parents=[common], help="train the classifier and save it")
    p.add_argument("--out", default="model.json", help="model file to write")
    p.add_argument("--fraction", type=float, default=0.8, help="training share of the split")
    p.add_argument("--hidden", type=int, default=15)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--train-epochs", type=int, default=500)
    p.add_argument("--patience", type=int, default=10)

    p = sub.add_parser("explain", parents=[common, search], help="explain one sample")
    p.add_argument("--row", type=int, help="0-based row of the data file")
    p.add_argument("--record", help="inline record: raw fields in file order, label omitted")
    p.add_argument("--n-change", type=int, default=5)
    p.add_argument("--n-skip", type=int, default=0, help="first n_skip to try")
    p.add_argument("--out", help="CSV file for the explanations")

    p = sub.add_parser("evaluate", parents=[common, search], help="run the aggregate experiments")
    p.add_argument("--n-change", type=_int_list, default=[5], help="e.g. 5,7,10")
    p.add_argument("--split", choices=("train", "validation"), default="validation")
    p.add_argument("--repeats", type=int, default=10, help="forest seeds for transferability")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--baseline-labels", action="store_true",
                   help="baseline counterfactuals differ by true label instead of model class")
    p.add_argument("--jobs", type=int, default=0, help="worker processes (0: all cores)")
    p.add_argument("--out", default="report", help="output directory")
    return parser


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            overrides = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigError(f"{args.config}: expected a mapping")
        overrides = {k.replace("-", "_"): v for k, v in overrides.items()}
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"{args.config}: unknown options {sorted(unknown)}")
        if "n_change" in overrides and args.command == "evaluate":
            overrides["n_change"] = _int_list(overrides["n_change"])
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    return args


def _load_data(args):
    schema = load_schema(args.schema)
    return schema, load_dataset(args.data, schema)


def _load_model_and_split(args):
    if not args.model:
        raise ConfigError("--model is required")
    schema, dataset = _load_data(args)
    try:
        net, meta = load_network(args.model)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load model {args.model}: {exc}") from exc
    if net.input_width != schema.width:
        raise DataError(f"model expects width {net.input_width}, schema encodes {schema.width}")
    train_set, val_set = split(dataset, meta.get("fraction", 0.8), meta.get("split_seed", args.seed))
    if "mean" in meta and not (np.array_equal(train_set.mean, meta["mean"])
                               and np.array_equal(train_set.scale, meta["scale"])):
        raise DataError("standardization of the data does not match the model; was it trained on other data?")
    return schema, dataset, net, train_set, val_set


def _target(args, schema) -> int:
    if args.target is None:
        return 0
    if str(args.target) in schema.class_names:
        return schema.class_names.index(str(args.target))
    try:
        value = int(args.target)
    except ValueError:
        raise ConfigError(f"unknown target class {args.target!r}") from None
    if value not in (0, 1):
        raise ConfigError("target index must be 0 or 1")
    return value


def cmd_train(args) -> int:
    schema, dataset = _load_data(args)
    train_set, val_set = split(dataset, args.fraction, args.seed)
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("split produced an empty training or validation set")
    net = init_network(schema.width, args.hidden, args.seed)
    report = train(net, train_set, val_set,
                   TrainConfig(lr=args.lr, max_epochs=args.train_epochs, patience=args.patience))
    majority = max(np.mean(val_set.y), 1 - np.mean(val_set.y))
    meta = {
        "schema": schema.name,
        "split_seed": args.seed,
        "fraction": args.fraction,
        "hidden": args.hidden,
        "mean": train_set.mean.tolist(),
        "scale": train_set.scale.tolist(),
    }
    out = Path(args.out)
    save_network(net, out, meta)
    fields = {k: v for k, v in asdict(report).items() if k != "history"}
    fields["majority_baseline"] = float(majority)
    text = "\n".join(f"{k}: {v}" for k, v in fields.items()) + "\n"
    atomic_write_text(out.with_suffix(".train.txt"), text)
    atomic_write_text(out.with_suffix(".train.csv"),
                      ",".join(fields) + "\n" + ",".join(repr(v) for v in fields.values()) + "\n")
    print(f"saved {out}")
    print(text, end="")
    return EXIT_OK


def format_table(original: dict[str, str], diffs: list[list[tuple[str, str, str]]],
                 attribute_order: list[str]) -> str:
    """Attribute / original / one column per explanation, '-' where unchanged."""
    changed = {name for d in diffs for name, _, _ in d}
    header = ["Attribute", "Original"] + [f"Explanation {i + 1}" for i in range(len(diffs))]
    rows = []
    for name in attribute_order:
        if name not in changed:
            continue
        row = [name, original[name]]
        for d in diffs:
            row.append(next((new for n, _, new in d if n == name), "-"))
        rows.append(row)
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*r) for r in rows]
    return "\n".join(lines)


def explanation_rows(sample_id, explanations) -> list[list]:
    return [
        [sample_id, e.n_skip, e.epochs_used, repr(e.l2_distance),
         ";".join(f"{a}:{old}→{new}" for a, old, new in e.decoded_diff)]
        for e in explanations
    ]


EXPLANATION_HEADER = ["sample_id", "n_skip", "epochs", "l2_distance", "diffs"]


def cmd_explain(args) -> int:
    schema, dataset, net, train_set, val_set = _load_model_and_split(args)
    target = _target(args, schema)
    if args.record is not None:
        values = next(csv.reader([args.record], delimiter=schema.delimiter or " ", skipinitialspace=True))
        values = [v for v in values if v != ""]
        x = encode(parse_fields(values, schema), train_set)
        sample_id = "record"
    elif args.row is not None:
        if not 0 <= args.row < len(dataset):
            raise DataError(f"row {args.row} out of range (0..{len(dataset) - 1})")
        x = (dataset.X[args.row] - train_set.mean) / train_set.scale
        sample_id = args.row
    else:
        refused = refused_indices(net, val_set.X, target)
        if len(refused) == 0:
            raise DataError("no validation sample needs an explanation")
        x, sample_id = val_set.X[refused[0]], int(val_set.rows[refused[0]])
        print(f"explaining data row {sample_id} (first validation sample not classified "
              f"{schema.class_names[target]})")
    if predict(net, x) == target:
        print(f"row {sample_id}: already classified as target {schema.class_names[target]}", file=sys.stderr)
        return EXIT_ALREADY_TARGET

    base = SearchConfig(target=target, direction=expand_direction(schema), n_change=args.n_change,
                        t_flip=args.t_flip, max_epochs=args.max_epochs, lr=args.search_lr)
    n_alternatives = args.alternatives or 3
    found = []
    for n_skip in range(args.n_skip, args.n_skip + n_alternatives):
        if n_skip + args.n_change > schema.width:
            break
        try:
            result = find_counterfactual(net, x, schema, replace(base, n_skip=n_skip), train_set)
        except NoDescentDirection:
            continue
        if result is not None:
            found.append(result)
    if not found:
        print(f"row {sample_id}: no explanation found within {args.max_epochs} epochs", file=sys.stderr)
        return EXIT_NOT_FOUND

    original = display(decode(x, train_set), schema)
    print(format_table(original, [e.decoded_diff for e in found], [a.name for a in schema.attributes]))
    for e in found:
        print(f"n_skip={e.n_skip}: {e.epochs_used} epochs, L2 distance {e.l2_distance:.4f}")
    if args.out:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EXPLANATION_HEADER)
        w.writerows(explanation_rows(sample_id, found))
        atomic_write_text(args.out, buf.getvalue())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    schema, dataset, net, train_set, val_set = _load_model_and_split(args)
    target = _target(args, schema)
    population = val_set if args.split == "validation" else train_set
    if len(population) == 0:
        raise DataError(f"the {args.split} split is empty")
    n_changes = args.n_change
    if not n_changes:
        raise ConfigError("--n-change needs at least one value")
    base = SearchConfig(target=target, direction=expand_direction(schema), n_change=n_changes[0],
                        t_flip=args.t_flip, max_epochs=args.max_epochs, lr=args.search_lr)
    report = evaluate(net, train_set, population, base, n_changes=n_changes,
                      n_alternatives=args.alternatives or 10, repeats=args.repeats, seed=args.seed,
                      n_trees=args.trees, use_labels=args.baseline_labels, jobs=args.jobs or None)
    report.config["split"] = args.split
    paths = write_reports(report, args.out)
    rows = []
    for found, sample_id in zip(report.histograms[n_changes[0]].explanations, report.sample_rows):
        rows += explanation_rows(int(sample_id), _with_diffs(found, report, sample_id, dataset, train_set))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EXPLANATION_HEADER)
    w.writerows(rows)
    atomic_write_text(Path(args.out) / "explanations.csv", buf.getvalue())
    atomic_write_text(Path(args.out) / "config.json", json.dumps(report.config, indent=1, sort_keys=True) + "\n")
    print(summary_text(report), end="")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def _with_diffs(found, report, sample_id, dataset, train_set):
    x = (dataset.X[int(sample_id)] - train_set.mean) / train_set.scale
    for e in found:
        e.decoded_diff = diff_table(x, e.counterfactual, train_set)
    return found


COMMANDS = {"train": cmd_train, "explain": cmd_explain, "evaluate": cmd_evaluate}


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"cadex: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"cadex: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaError, DataError) as exc:
        print(f"cadex: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AlreadyTarget as exc:
        print(f"cadex: {exc}", file=sys.stderr)
        return EXIT_ALREADY_TARGET
    except ValueError as exc:
        print(f"cadex: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
