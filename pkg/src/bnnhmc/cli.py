"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, evaluate
from .config import config_from_dict, load_config
from .exceptions import ConfigError, DataFormatError
from .data import read_table, read_vectorized
from .experiments import StageError, parse_store_ref, run_experiment, sweep
from .model import Dataset, ModelSpec
from .store import SampleStore

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

TEXT_SUFFIXES = (".csv", ".txt", ".data", ".tsv")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; usage errors map to 1 here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--out", help="run directory (overrides the config's 'out')")
    p.add_argument("--seed", type=int, help="global seed (overrides the config's 'seed')")
    p.add_argument("--workers", type=int, help="thread cap for chains, members and sweep children")
    p.add_argument("--quiet", action="store_true", help="only log warnings and errors")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bnnhmc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="execute one experiment config")
    p.add_argument("config")
    _common(p)

    p = sub.add_parser("sweep", help="execute a sweep config and aggregate its children")
    p.add_argument("config")
    _common(p)

    p = sub.add_parser("scan", help="evaluate a subspace_scan config")
    p.add_argument("config")
    _common(p)

    diag = sub.add_parser("diag", help="diagnostics on stored chains")
    dsub = diag.add_subparsers(dest="diag_command", required=True, parser_class=_Parser)
    p = dsub.add_parser("rhat", help="weight-space R-hat over two or more chain stores")
    p.add_argument("stores", nargs="+")
    p.add_argument("--data", help="evaluation inputs for function-space R-hat")
    _common(p)

    ev = sub.add_parser("eval", help="evaluate stored samples")
    esub = ev.add_subparsers(dest="eval_command", required=True, parser_class=_Parser)
    p = esub.add_parser("bma", help="BMA metrics of a store on a dataset")
    p.add_argument("store")
    p.add_argument("data", help="vectorized container, or a text table whose last column is the target")
    p.add_argument("--n-bins", type=int, default=20)
    _common(p)

    p = sub.add_parser("compare", help="agreement and total variation against a reference store")
    p.add_argument("reference", help="reference store, optionally path:index for one sample")
    p.add_argument("store")
    p.add_argument("--data", required=True, help="evaluation inputs")
    _common(p)
    return parser


def _configure_logging(quiet: bool):
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _load_config(args, expected=None):
    cfg = load_config(args.config)
    raw = cfg.model_dump(mode="json")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    cfg = config_from_dict(raw)
    if expected == "sweep" and not cfg.is_sweep:
        raise ConfigError("config has no sweep axis; use 'run' or set sweep.axis")
    if expected == "scan" and cfg.kind != "subspace_scan":
        raise ConfigError(f"'scan' needs kind 'subspace_scan', got {cfg.kind!r}")
    return cfg


def load_data_file(path) -> Dataset:
    path = Path(path)
    if path.suffix.lower() in TEXT_SUFFIXES:
        table = read_table(path, "," if path.suffix.lower() == ".csv" else None)
        return Dataset(table[:, :-1], table[:, -1], path.stem)
    return read_vectorized(path)


def _labels_for(model: ModelSpec, data: Dataset) -> Dataset:
    """Text tables carry float targets; classifiers need integral labels."""
    if model.head != "classification" or np.issubdtype(data.targets.dtype, np.integer):
        return data
    y = data.targets
    if not np.array_equal(y, np.round(y)):
        raise DataFormatError(f"{data.name}: classification targets must be integers")
    return Dataset(data.inputs, y.astype(np.int64), data.name, data.meta)


def _model_of(store: SampleStore) -> ModelSpec:
    m = store.config.get("model")
    if not m:
        raise ValueError("store sidecar carries no model description")
    return ModelSpec.from_dict(m)


def _out_dir(args, default: str) -> Path:
    d = Path(args.out or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _print(args, obj):
    if not args.quiet:
        print(json.dumps(obj, indent=2, sort_keys=True, default=evaluate._jsonable))


def cmd_run(args, expected=None):
    cfg = _load_config(args, expected)
    runner = sweep if expected == "sweep" else run_experiment
    out = runner(cfg, args.out, args.workers)
    status = json.loads((out / "manifest.json").read_text())["status"]
    _print(args, {"run_dir": str(out), "status": status})


def cmd_rhat(args):
    stores = [SampleStore.load(p) for p in args.stores]
    out = _out_dir(args, "rhat_out")
    rep = diagnostics.rhat_weights(stores)
    rep.to_csv(out / "rhat_weights.csv")
    rep.to_json(out / "rhat_weights.json")
    summary = {"weights": rep.summary()}
    if args.data:
        data = load_data_file(args.data)
        frep = diagnostics.rhat_functions(stores, _model_of(stores[0]), data.inputs)
        frep.to_csv(out / "rhat_functions.csv")
        frep.to_json(out / "rhat_functions.json")
        summary["functions"] = frep.summary()
    _print(args, summary)


def cmd_eval_bma(args):
    store, idx = parse_store_ref(args.store)
    samples = store.samples if idx is None else store.samples[idx:idx + 1]
    model = _model_of(store)
    data = _labels_for(model, load_data_file(args.data))
    pred = evaluate.bma_predict(samples, model, data.inputs)
    if pred.is_classification:
        metrics = evaluate.classification_metrics(pred, data.targets, args.n_bins)
    else:
        metrics = evaluate.regression_metrics(pred, data.targets)
    out = _out_dir(args, "eval_out")
    row = {"method": store.method, "dataset": data.name, "seed": store.seed, **metrics,
           "n_samples": int(samples.shape[0])}
    evaluate.write_csv(out / "metrics.csv", [row])
    _print(args, row)


def cmd_compare(args):
    ref, idx = parse_store_ref(args.reference)
    ref_samples = ref.samples if idx is None else ref.samples[idx:idx + 1]
    store = SampleStore.load(args.store)
    data = load_data_file(args.data)
    model = _model_of(ref)
    p_ref = evaluate.bma_predict(ref_samples, model, data.inputs)
    p = evaluate.bma_predict(store, model, data.inputs)
    row = {"reference": args.reference, "method": args.store, "dataset": data.name,
           **evaluate.comparison_metrics(p_ref, p)}
    out = _out_dir(args, "compare_out")
    evaluate.write_csv(out / "compare.csv", [row])
    _print(args, row)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.quiet)
    try:
        if args.command == "run":
            cmd_run(args)
        elif args.command == "sweep":
            cmd_run(args, "sweep")
        elif args.command == "scan":
            cmd_run(args, "scan")
        elif args.command == "diag":
            cmd_rhat(args)
        elif args.command == "eval":
            cmd_eval_bma(args)
        else:
            cmd_compare(args)
    except (ConfigError, FileNotFoundError, DataFormatError) as err:
        print(f"bnnhmc: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as err:
        print(f"bnnhmc: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as err:  # noqa: BLE001 - runtime failures map to exit code 2
        print(f"bnnhmc: runtime failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
