"""Command-line entry point: generate, train, predict, evaluate, serve.

Exit codes: 0 success, 1 usage error, 2 runtime error. ``evaluate`` writes
machine-readable JSON to stdout; progress goes to stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import typing
from pathlib import Path

import numpy as np

from .active import QueryError, ScriptedOracle
from .metrics import confusion, metrics_dict
from .orchestrator import RLADConfig, RLADModel, rlad_predict, rlad_train
from .timeseries import IntegrityError, ParseError, gen_synthetic, load_series


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config_field_parsers() -> dict:
    """Flag converters derived from the config dataclass annotations."""
    hints = typing.get_type_hints(RLADConfig)
    parsers = {}
    for field in dataclasses.fields(RLADConfig):
        hint = hints[field.name]
        if hint in (int, float):
            parsers[field.name] = hint
        else:
            args = [a for a in typing.get_args(hint) if a is not type(None)]
            parsers[field.name] = args[0] if args else str
    return parsers


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for name, conv in _config_field_parsers().items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=conv, default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="rlad", description="semi-supervised time-series anomaly detection")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[], help="write a synthetic labeled series")
    gen.add_argument("--kind", choices=("spike", "level_shift"), default="spike")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--rate", type=float, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--period", type=int, default=50)
    gen.add_argument("--out", required=True)

    train = sub.add_parser("train", help="train a detector on a labeled CSV")
    train.add_argument("--data", required=True)
    train.add_argument("--format", choices=("yahoo", "kpi"), default="yahoo")
    train.add_argument("--oracle", choices=("scripted", "human"), default="scripted")
    train.add_argument("--config", help="JSON file of config fields (flags win)")
    train.add_argument("--out", required=True, help="run directory")
    train.add_argument("--addr", help="bind address for the human-oracle service")
    train.add_argument("--ui-dir", help="static console assets to serve")
    train.add_argument("--oracle-timeout", type=float, default=None,
                       help="seconds to wait for human labels (default: forever)")
    train.add_argument("--quiet", action="store_true")
    _add_config_flags(train)

    pred = sub.add_parser("predict", help="score a CSV with a trained model")
    pred.add_argument("--model", required=True, help="run directory holding model.npz")
    pred.add_argument("--data", required=True)
    pred.add_argument("--format", choices=("yahoo", "kpi"), default="yahoo")
    pred.add_argument("--out", required=True, help="predictions CSV")

    ev = sub.add_parser("evaluate", help="compare predictions against labels")
    ev.add_argument("--preds", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--format", choices=("yahoo", "kpi"), default="yahoo")

    serve = sub.add_parser("serve", help="run the labeling service without training")
    serve.add_argument("--addr")
    serve.add_argument("--ui-dir")
    return parser


def _resolve_config(args) -> RLADConfig:
    fields = {}
    if args.config:
        fields.update(json.loads(Path(args.config).read_text()))
    for name in _config_field_parsers():
        value = getattr(args, name, None)
        if value is not None:
            fields[name] = value
    return RLADConfig.from_dict(fields)


def _write_series_csv(series, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "value", "is_anomaly"])
        for ts, value, label in zip(series.timestamps, series.values, series.labels):
            writer.writerow([int(ts), repr(float(value)), int(label)])


def _default_ui_dir() -> Path | None:
    candidate = Path("frontend") / "dist"
    return candidate if candidate.is_dir() else None


def _cmd_generate(args) -> int:
    series = gen_synthetic(args.n, args.rate, kind=args.kind, seed=args.seed, period=args.period)
    _write_series_csv(series, args.out)
    print(f"wrote {len(series)} points ({int((series.labels == 1).sum())} anomalies) to {args.out}",
          file=sys.stderr)
    return 0


def _cmd_train(args) -> int:
    series = load_series(args.data, format=args.format)
    config = _resolve_config(args)

    def progress(status):
        if args.quiet:
            return
        metrics = status.get("metrics")
        suffix = ""
        if metrics:
            suffix = (f" P={metrics['precision']:.3f} R={metrics['recall']:.3f}"
                      f" F1={metrics['f1']:.3f}")
        print(
            f"[{status['state']}] episode {status['episode']}"
            f" eps={status['epsilon']:.3f} human={status['human_labels_used']}"
            f" pseudo={status['pseudo_labels_assigned']}{suffix}",
            file=sys.stderr,
        )

    if args.oracle == "scripted":
        rlad_train(series, config, ScriptedOracle(), status_cb=progress, run_dir=args.out)
        return 0

    from .active import HumanOracle
    from .service import LabelExchange, create_app, resolve_addr, run_server

    exchange = LabelExchange()
    host, port = resolve_addr(args.addr)
    ui_dir = Path(args.ui_dir) if args.ui_dir else _default_ui_dir()
    app = create_app(exchange, static_dir=ui_dir)
    server, thread = run_server(app, host, port, in_thread=True)
    print(f"labeling console at http://{host}:{port}/ (API under /api)", file=sys.stderr)

    def status_cb(status):
        exchange.set_status(status)
        progress(status)

    try:
        oracle = HumanOracle(exchange, timeout=args.oracle_timeout)
        rlad_train(series, config, oracle, status_cb=status_cb, run_dir=args.out)
    finally:
        server.should_exit = True
        thread.join(timeout=5)
    return 0


def _cmd_predict(args) -> int:
    model = RLADModel.load(args.model)
    series = load_series(args.data, format=args.format)
    preds = rlad_predict(model, series)
    offset = model.window_size - 1
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["end_index", "prediction"])
        for k, pred in enumerate(preds):
            writer.writerow([k + offset, int(pred)])
    print(f"wrote {len(preds)} predictions to {args.out}", file=sys.stderr)
    return 0


def _read_preds_csv(path) -> list[tuple[int, int]]:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip() == "end_index":
                continue
            try:
                rows.append((int(row[0]), int(row[1])))
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), line=lineno)
    if not rows:
        raise ParseError(f"no prediction rows in {path}")
    return rows


def _cmd_evaluate(args) -> int:
    preds = _read_preds_csv(args.preds)
    series = load_series(args.data, format=args.format)
    pred_vec, label_vec, skipped = [], [], 0
    for end_index, pred in preds:
        if not 0 <= end_index < len(series):
            raise IntegrityError(f"prediction end_index {end_index} outside the series")
        truth = int(series.labels[end_index])
        if truth < 0:
            skipped += 1
            continue
        pred_vec.append(pred)
        label_vec.append(truth)
    if skipped:
        print(f"skipped {skipped} predictions with unknown ground truth", file=sys.stderr)
    if not pred_vec:
        raise IntegrityError("no predictions with known ground truth to evaluate")
    payload = metrics_dict(confusion(pred_vec, label_vec))
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_serve(args) -> int:
    from .service import LabelExchange, create_app, resolve_addr, run_server

    exchange = LabelExchange()
    host, port = resolve_addr(args.addr)
    ui_dir = Path(args.ui_dir) if args.ui_dir else _default_ui_dir()
    app = create_app(exchange, static_dir=ui_dir)
    print(f"labeling console at http://{host}:{port}/ (API under /api)", file=sys.stderr)
    run_server(app, host, port)
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "serve": _cmd_serve,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (FileNotFoundError, ParseError, IntegrityError, QueryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
