"""Command-line entry point: ``gopnet {grow,eval,predict,synth,verify}``.

Exit codes: 0 success, 1 verification/metric failure, 2 input error,
3 numeric error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import network
from .config import RunConfig, apply_override
from .data import (
    DataFormatError, EmptyInputError, LabeledDataset, anchored_folds, fit_standardizer,
    load_dataset, save_dataset, synth_imbalanced,
)
from .metrics import format_report, score
from .network import DimensionError, ModelFormatError, NumericError
from .operators import OperatorError
from .progression import SearchError, grow, write_audit_log
from .solver import DegenerateClassError, SingularSystemError

log = logging.getLogger("gopnet")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class InputError(Exception):
    pass


def _add_data_flags(p):
    p.add_argument("--data", help="delimited text file, one sample per row")
    p.add_argument("--horizon", type=int,
                   help="prediction horizon selecting the label column (10, 20, 30, 50, 100)")
    p.add_argument("--label-cols", type=int, default=None, choices=(1, 5),
                   help="number of trailing label columns")
    p.add_argument("--label-offset", type=int, default=None,
                   help="subtracted from raw labels (1 for files coded 1/2/3)")
    p.add_argument("--no-day", action="store_true", help="file has no leading day column")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gopnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("grow", help="grow networks per anchored fold and report test scores")
    g.add_argument("--config", help="JSON run configuration; flags override it")
    _add_data_flags(g)
    g.add_argument("--seed", type=int)
    g.add_argument("--folds", type=int, help="number of anchored folds (0: fit and score on all rows)")
    g.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--threads", type=int, help="parallel operator-set search; 1 = single-threaded")
    g.add_argument("--out-dir")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field, e.g. progression.block_size=8")
    g.add_argument("--no-figures", action="store_true")

    e = sub.add_parser("eval", help="score saved models on a data file")
    e.add_argument("--model", action="append", required=True, help="model file (repeatable)")
    _add_data_flags(e)
    e.add_argument("--test-day", type=int, action="append",
                   help="restrict to this day (repeatable, paired with --model in order)")
    e.add_argument("--n-classes", type=int, default=None)

    pr = sub.add_parser("predict", help="per-sample class and logits")
    pr.add_argument("--model", required=True)
    _add_data_flags(pr)
    pr.add_argument("--out", help="output file (default stdout)")

    s = sub.add_parser("synth", help="write a synthetic imbalanced dataset")
    s.add_argument("--counts", default="900,50,50", help="samples per class, comma separated")
    s.add_argument("--dim", type=int, default=10)
    s.add_argument("--separation", type=float, default=2.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--days", type=int, default=10)
    s.add_argument("--out", required=True)

    v = sub.add_parser("verify", help="run the built-in verification suites")
    v.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    v.add_argument("--inject-fault", choices=("derivative",), help=argparse.SUPPRESS)
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _resolve_config(args) -> RunConfig:
    doc = RunConfig().to_dict()
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        loaded = json.loads(path.read_text())
        RunConfig.from_dict(loaded)  # validates keys
        _merge(doc, loaded)
    flags = {
        "data": args.data, "horizon": args.horizon, "n_label_cols": args.label_cols,
        "label_offset": args.label_offset, "seed": args.seed, "folds": args.folds,
        "standardize": args.standardize, "threads": args.threads, "out_dir": args.out_dir,
    }
    for key, value in flags.items():
        if value is not None:
            doc[key] = value
    if args.no_day:
        doc["has_day"] = False
    for assignment in args.set:
        apply_override(doc, assignment)
    return RunConfig.from_dict(doc)


def _merge(base: dict, update: dict) -> None:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value


def _load(path, *, n_label_cols=1, horizon=10, has_day=True, label_offset=0,
          n_classes=3) -> LabeledDataset:
    if not path:
        raise InputError("no data file given (--data)")
    if not Path(path).is_file():
        raise InputError(f"data file not found: {path}")
    return load_dataset(path, n_label_cols=n_label_cols, horizon=horizon, has_day=has_day,
                        label_offset=label_offset, n_classes=n_classes)


def _load_from_args(args, n_classes=3) -> LabeledDataset:
    return _load(args.data, n_label_cols=args.label_cols or 1, horizon=args.horizon or 10,
                 has_day=not args.no_day, label_offset=args.label_offset or 0,
                 n_classes=n_classes)


def _model_inputs(net: network.Network, ds: LabeledDataset) -> np.ndarray:
    if ds.n_samples == 0:
        raise EmptyInputError("no samples to evaluate")
    if ds.n_features != net.input_dim:
        raise DimensionError(f"model expects {net.input_dim} features, data has {ds.n_features}")
    return net.standardize(ds.X)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_grow(args) -> int:
    cfg = _resolve_config(args)
    ds = _load(cfg.data, n_label_cols=cfg.n_label_cols, horizon=cfg.horizon, has_day=cfg.has_day,
               label_offset=cfg.label_offset, n_classes=cfg.n_classes)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "run_config.json")
    if cfg.folds:
        if ds.day is None:
            raise InputError("anchored folds need a day column (or use --folds 0)")
        splits = [(f"fold{k}", ds.days(f.train_days), ds.days([f.test_day]))
                  for k, f in enumerate(anchored_folds(ds, cfg.folds), 1)]
    else:
        splits = [("all", ds, ds)]

    pcfg = cfg.progression_config()
    rows = []
    for name, train_ds, test_ds in splits:
        if test_ds.n_samples == 0:
            raise EmptyInputError(f"{name}: empty test split")
        fold_dir = out / name
        fold_dir.mkdir(exist_ok=True)
        X = train_ds.X
        std = None
        if cfg.standardize:
            std = fit_standardizer(X)
            X = std.apply(X)
        fit_ds = LabeledDataset(X, train_ds.labels, train_ds.n_classes, train_ds.day,
                                train_ds.horizon)
        net, state = grow(fit_ds, pcfg, threads=cfg.threads)
        if std is not None:
            net.input_mean, net.input_std = std.mean, std.std
        network.save(net, fold_dir / "model.json")
        write_audit_log(state.log, fold_dir / "audit.jsonl")
        pred = network.predict(net, _model_inputs(net, test_ds))
        scores = score(test_ds.labels, pred, ds.n_classes)
        rows.append((name, scores))
        log.info("%s: topology %s, F1 %.2f", name, net.topology(), scores.f1)
        if not args.no_figures:
            from .plotting import plot_growth
            plot_growth(state.log, fold_dir / "growth.png", title=name)
    report = format_report(rows)
    (out / "report.csv").write_text(report)
    if not args.no_figures:
        from .plotting import plot_fold_scores
        plot_fold_scores(rows, out / "scores.png")
    sys.stdout.write(report)
    return EXIT_OK


def cmd_eval(args) -> int:
    rows = []
    days = args.test_day or []
    if days and len(days) != len(args.model):
        raise InputError("--test-day must be given once per --model")
    for i, path in enumerate(args.model):
        net = _load_model(path)
        ds = _load_from_args(args, n_classes=args.n_classes or net.n_classes)
        if days:
            ds = ds.days([days[i]])
        pred = network.predict(net, _model_inputs(net, ds))
        rows.append((Path(path).parent.name or Path(path).stem, score(ds.labels, pred, net.n_classes)))
    sys.stdout.write(format_report(rows))
    return EXIT_OK


def cmd_predict(args) -> int:
    net = _load_model(args.model)
    ds = _load_from_args(args, n_classes=net.n_classes)
    _, logits = network.forward(net, _model_inputs(net, ds))
    pred = np.argmax(logits, axis=1)
    header = ",".join(["class"] + [f"logit_{c}" for c in range(net.n_classes)])
    lines = [header] + [",".join([str(int(p))] + [repr(float(v)) for v in row])
                        for p, row in zip(pred, logits)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        counts = [int(c) for c in args.counts.split(",")]
    except ValueError:
        raise InputError(f"--counts must be comma-separated integers, got {args.counts!r}") from None
    ds = synth_imbalanced(counts, args.dim, args.separation, args.seed, args.days)
    save_dataset(ds, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES, run_suites
    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise InputError(f"unknown suite(s) {unknown}; available: {list(SUITES)}")
    results = run_suites(names, fault=args.inject_fault)
    for name, ok, detail, seconds in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} ({seconds:.2f}s): {detail}")
    failed = [name for name, ok, *_ in results if not ok]
    if failed:
        print(f"failed suites: {', '.join(failed)}")
        return EXIT_FAIL
    return EXIT_OK


def _load_model(path) -> network.Network:
    if not Path(path).is_file():
        raise InputError(f"model file not found: {path}")
    return network.load(path)


COMMANDS = {"grow": cmd_grow, "eval": cmd_eval, "predict": cmd_predict, "synth": cmd_synth,
            "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (NumericError, SearchError, SingularSystemError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, DataFormatError, EmptyInputError, DimensionError, ModelFormatError,
            OperatorError, DegenerateClassError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
