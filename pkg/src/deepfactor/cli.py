"""Command-line entry point.

Subcommands: ``synth``, ``train``, ``backtest``, ``explain``, ``report``.
Values are resolved as built-in defaults < ``--config`` JSON < explicit
flags, and the effective configuration is written to the output directory
as ``<command>_config.json``.

Exit codes: 0 success, 1 runtime or data failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import aggregate_portfolio, aggregate_stock, factor_correlations
from .backtest import (
    MODEL_ALIASES,
    MODEL_HIDDEN,
    SUMMARY_COLUMNS,
    BacktestReport,
    WalkForwardConfig,
    _SampleCache,
    canonical_model_kind,
    first_feasible_month,
    fit_model,
    quantile_assign,
    training_as_ofs,
    walk_forward,
    write_summary_csv,
)
from .baseline import LinearModel
from .data import SynthSpec, emit_panel, generate_synthetic, load_panel
from .errors import DeepFactorError
from .factors import N_DESCRIPTORS, build_samples, cell_names
from .lrp import DEFAULT_STABILIZER, relevance, write_relevance_csv
from .months import parse_month, shift_month
from .net import Network, TrainConfig, forward

logger = logging.getLogger("deepfactor")

_TRAIN_DEFAULTS = TrainConfig()

DEFAULTS = {
    "synth": {
        "stocks": 500, "months": 120, "truth": "nonlinear", "noise": 0.05,
        "start_month": "2000-01", "persistence": 0.9,
    },
    "train": {
        "panel": None, "as_of": None, "model": "deep1", "hidden": None, "train_window": 60,
        "epochs": _TRAIN_DEFAULTS.epochs, "batch_size": _TRAIN_DEFAULTS.batch_size,
        "lr": _TRAIN_DEFAULTS.learning_rate, "ridge": 0.0,
    },
    "backtest": {
        "panel": None, "model": "deep1", "hidden": None, "start": None, "end": None,
        "quantiles": 5, "train_window": 60, "epochs": _TRAIN_DEFAULTS.epochs,
        "batch_size": _TRAIN_DEFAULTS.batch_size, "lr": _TRAIN_DEFAULTS.learning_rate,
        "ridge": 0.0,
    },
    "explain": {
        "model_file": None, "panel": None, "as_of": None, "target": "top-quintile",
        "quantiles": 5, "stabilizer": DEFAULT_STABILIZER,
    },
    "report": {"reports": [], "labels": None},
}
GLOBAL_DEFAULTS = {"out": ".", "seed": 0, "jobs": 1}


class UsageError(Exception):
    pass


def _hidden(text: str) -> list[int]:
    try:
        dims = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--hidden expects comma-separated integers, got {text!r}")
    if not dims or any(d <= 0 for d in dims):
        raise argparse.ArgumentTypeError("--hidden needs positive layer widths")
    return dims


def _month(text: str) -> str:
    try:
        parse_month(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))
    return text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file of option values (flags override it)")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, help="master random seed (default 0)")
    common.add_argument("--jobs", type=int, help="parallel workers for backtest months (default 1)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="deepfactor", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text,
                              argument_default=argparse.SUPPRESS)

    def model_flags(p):
        p.add_argument("--model", choices=sorted(MODEL_ALIASES),
                       help="deep1 = hidden 80-50-10, deep2 = 80-80-50-50-10-10, or linear")
        p.add_argument("--hidden", type=_hidden, help="override hidden widths, e.g. 80,50,10")
        p.add_argument("--train-window", type=int, help="number of monthly training sets (60)")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float, help="Adam learning rate")
        p.add_argument("--ridge", type=float, help="ridge penalty for the linear model (0)")

    p = add("synth", "generate a synthetic panel with a known ground truth")
    p.add_argument("--stocks", type=int)
    p.add_argument("--months", type=int)
    p.add_argument("--truth", choices=["linear", "nonlinear"])
    p.add_argument("--noise", type=float, help="return noise standard deviation (0.05)")
    p.add_argument("--start-month", type=_month)
    p.add_argument("--persistence", type=float, help="AR(1) coefficient of descriptors (0.9)")

    p = add("train", "fit one model on the training window ending before --as-of")
    p.add_argument("--panel")
    p.add_argument("--as-of", type=_month, help="descriptor month the model will predict from")
    model_flags(p)

    p = add("backtest", "walk-forward backtest with quantile long/short portfolios")
    p.add_argument("--panel")
    p.add_argument("--start", type=_month, help="first forecast month (default: first feasible)")
    p.add_argument("--end", type=_month, help="last forecast month (default: last available)")
    p.add_argument("--quantiles", type=int)
    model_flags(p)

    p = add("explain", "LRP attribution for one stock or the top-quintile portfolio")
    p.add_argument("--model-file", help="model JSON written by `train`")
    p.add_argument("--panel")
    p.add_argument("--as-of", type=_month, help="descriptor month (default: last panel month)")
    p.add_argument("--target", help="stock:<id> or top-quintile")
    p.add_argument("--quantiles", type=int)
    p.add_argument("--stabilizer", type=float)

    p = add("report", "tabulate summary metrics of one or more backtest reports")
    p.add_argument("reports", nargs="*", help="report JSON files")
    p.add_argument("--labels", help="comma-separated labels, one per report")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the optional config file and explicit flags."""
    explicit = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    effective = {**GLOBAL_DEFAULTS, **DEFAULTS[args.command]}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}")
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        doc = {k.replace("-", "_"): v for k, v in doc.items()}
        unknown = sorted(set(doc) - set(effective))
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {unknown}")
        effective.update(doc)
    effective.update(explicit)
    effective["command"] = args.command
    return effective


def _echo_config(cfg: dict, extra: dict | None = None) -> None:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    doc = {**cfg, **(extra or {})}
    (out / f"{cfg['command']}_config.json").write_text(json.dumps(doc, indent=1, sort_keys=True))


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-")
                                                                     for k in missing))


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(learning_rate=float(cfg["lr"]), epochs=int(cfg["epochs"]),
                       batch_size=int(cfg["batch_size"]))


def _wf_config(cfg: dict, start: str, end: str) -> WalkForwardConfig:
    kind = canonical_model_kind(cfg["model"])
    hidden = cfg.get("hidden")
    if hidden and kind == "linear":
        raise UsageError("--hidden cannot be combined with --model linear")
    if hidden and kind in MODEL_HIDDEN and tuple(hidden) != MODEL_HIDDEN[kind]:
        kind = "deep_custom"
    return WalkForwardConfig(start, end, kind, train_window=int(cfg["train_window"]),
                             quantiles=int(cfg.get("quantiles", 5)), seed=int(cfg["seed"]),
                             hidden_dims=tuple(hidden) if hidden else None,
                             train_config=_train_config(cfg), ridge_lambda=float(cfg["ridge"]),
                             jobs=int(cfg["jobs"]))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: dict) -> int:
    spec = SynthSpec(n_stocks=int(cfg["stocks"]), n_months=int(cfg["months"]),
                     ground_truth=cfg["truth"], noise_sigma=float(cfg["noise"]),
                     seed=int(cfg["seed"]), start_month=cfg["start_month"],
                     persistence=float(cfg["persistence"]))
    try:
        spec.validate(walk_forward=True)
    except DeepFactorError as exc:
        raise UsageError(str(exc))
    panel, truth = generate_synthetic(spec)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    emit_panel(panel, out / "panel.csv")
    (out / "ground_truth.json").write_text(json.dumps(truth.to_dict(), indent=1))
    _echo_config(cfg)
    print(f"wrote {out / 'panel.csv'} ({panel.n_observations} rows) and {out / 'ground_truth.json'}")
    return 0


def load_model(path):
    """Read a model JSON written by ``train`` (network or linear)."""
    doc = json.loads(Path(path).read_text())
    if "layers" in doc:
        return Network.from_dict(doc)
    if "coefficients" in doc:
        return LinearModel.from_dict(doc)
    raise DeepFactorError(f"{path} is neither a network nor a linear model document")


def cmd_train(cfg: dict) -> int:
    _require(cfg, "panel")
    panel = load_panel(cfg["panel"])
    as_of = cfg["as_of"] or panel.months[-1]
    month = shift_month(as_of, 1)
    wf = _wf_config(cfg, month, month)
    cache = _SampleCache(panel)
    as_ofs = training_as_ofs(panel, cache, month, wf.train_window)
    if as_ofs is None:
        first = first_feasible_month(panel, wf, cache)
        hint = f"first feasible as-of month is {shift_month(first, -1)}" if first else "no feasible month"
        raise DeepFactorError(f"not enough training history before {as_of}; {hint}")
    X = np.concatenate([cache.get(a).X for a in as_ofs])
    y = np.concatenate([cache.get(a).y for a in as_ofs])
    model, _ = fit_model(wf.model_kind, X, y, wf, month)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "model.json").write_text(json.dumps(model.to_dict()))
    _echo_config(cfg, {"walk_forward": wf.to_dict(), "training_as_of": [as_ofs[0], as_ofs[-1]],
                       "n_samples": int(len(y))})
    print(f"trained {wf.model_kind} on {len(y)} samples ({as_ofs[0]}..{as_ofs[-1]}); "
          f"wrote {out / 'model.json'}")
    return 0


def _print_metrics(label: str, report: BacktestReport) -> None:
    row = report.summary_row()
    print(" ".join(f"{c:>12s}" for c in ("Model", *SUMMARY_COLUMNS)))
    print(" ".join([f"{label:>12s}", *(f"{v:12.4f}" for v in row.values())]))


def cmd_backtest(cfg: dict) -> int:
    _require(cfg, "panel")
    panel = load_panel(cfg["panel"])
    probe = _wf_config(cfg, "2000-01", "2000-01")
    start = cfg["start"] or first_feasible_month(panel, probe)
    if start is None:
        raise DeepFactorError("panel has no feasible forecast month")
    end = cfg["end"] or shift_month(panel.months[-1], 1)
    wf = _wf_config(cfg, start, end)
    report = walk_forward(panel, wf)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    report.save_json(out / "report.json")
    report.write_month_csv(out / "months.csv")
    report.write_summary_csv(out / "summary.csv")
    _echo_config(cfg, {"walk_forward": wf.to_dict()})
    _print_metrics(wf.model_kind, report)
    return 0


def _parse_target(target: str):
    if target == "top-quintile":
        return None
    if target.startswith("stock:") and len(target) > len("stock:"):
        return target[len("stock:"):]
    raise UsageError("--target must be stock:<id> or top-quintile")


def cmd_explain(cfg: dict) -> int:
    _require(cfg, "model_file", "panel")
    stock = _parse_target(cfg["target"])
    model = load_model(cfg["model_file"])
    net = model.as_network() if isinstance(model, LinearModel) else model
    panel = load_panel(cfg["panel"])
    as_of = cfg["as_of"] or panel.months[-1]
    if panel.row(as_of) is None:
        raise DeepFactorError(f"month {as_of} is not in the panel")
    samples = build_samples(panel, as_of)
    if not len(samples):
        raise DeepFactorError(f"no stock has complete inputs at {as_of}")
    if samples.X.shape[1] != net.input_dim:
        raise DeepFactorError(f"model expects {net.input_dim} inputs, samples have {samples.X.shape[1]}")

    stabilizer = float(cfg["stabilizer"])
    if stock is not None:
        if stock not in samples.stock_ids:
            known = panel.col(stock) is not None
            why = "has incomplete history" if known else "is unknown"
            raise DeepFactorError(f"stock {stock} {why} at {as_of}")
        chosen = [samples.stock_ids.index(stock)]
        scope = f"stock:{stock}"
    else:
        q = int(cfg["quantiles"])
        preds = np.array([forward(net, x).output for x in samples.X])
        buckets = quantile_assign(preds, q, samples.stock_ids)
        chosen = [i for i in range(len(samples)) if buckets[i] == 1]
        scope = "portfolio:Q1"

    rows = []
    for i in chosen:
        trace = forward(net, samples.X[i])
        rows.append((samples.stock_ids[i], relevance(net, trace, stabilizer)))
    attribution = (aggregate_stock(rows[0][1], scope=scope) if stock is not None
                   else aggregate_portfolio([rv for _, rv in rows], scope=scope))

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_relevance_csv(out / "relevance.csv", rows, cell_names())
    attribution.save_json(out / "attribution.json")
    attribution.write_csv(out / "attribution.csv")
    extra = {"as_of": as_of, "n_explained": len(rows)}
    if len(rows) >= 3:
        preds = np.array([rv.predicted for _, rv in rows])
        lag0 = samples.X[chosen][:, :N_DESCRIPTORS]
        try:
            corr = factor_correlations(preds, lag0)
        except DeepFactorError as exc:
            logger.warning("correlations skipped: %s", exc)
        else:
            (out / "correlations.json").write_text(json.dumps(corr.to_dict(), indent=1))
    _echo_config(cfg, extra)
    for name, pct in attribution.per_factor.items():
        print(f"{name:>10s} {pct:7.2f}%")
    return 0


def cmd_report(cfg: dict) -> int:
    paths = cfg["reports"]
    if not paths:
        raise UsageError("report needs at least one report JSON")
    reports = [BacktestReport.load_json(p) for p in paths]
    labels = cfg["labels"].split(",") if cfg["labels"] else [
        r.config.get("model_kind", Path(p).parent.name) for r, p in zip(reports, paths)]
    if len(labels) != len(reports):
        raise UsageError("--labels must give one label per report")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_summary_csv(out / "summary.csv", list(zip(labels, reports)))
    print(" ".join(f"{c:>12s}" for c in ("Model", *SUMMARY_COLUMNS)))
    for label, r in zip(labels, reports):
        vals = r.summary_row().values()
        print(" ".join([f"{label:>12s}", *(f"{v:12.4f}" if math.isfinite(v) else f"{'nan':>12s}"
                                            for v in vals)]))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "backtest": cmd_backtest,
    "explain": cmd_explain,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"deepfactor {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DeepFactorError, OSError, KeyError, ValueError) as exc:
        print(f"deepfactor {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
