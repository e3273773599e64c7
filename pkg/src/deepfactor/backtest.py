"""Walk-forward evaluation with quantile long/short portfolios.

Month conventions
-----------------
A walk-forward month ``m`` is the month whose return is forecast. The
forecast uses descriptors dated ``m - 1`` (plus their lags), and the model
is trained on the ``train_window`` most recent sample sets whose target
month is before ``m``, i.e. sets with as-of month ``<= m - 2``. Nothing
dated ``m`` or later is used to produce the forecast for ``m``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baseline import linear_predict, ols_fit
from .errors import (
    EmptyInputError,
    InsufficientHistoryError,
    InvalidSpecError,
    TooFewStocksError,
    ZeroVolatilityError,
)
from .factors import INPUT_DIM, SampleSet, build_samples
from .months import month_range, parse_month, shift_month
from .net import NetworkSpec, TrainConfig, init_network, predict, train

logger = logging.getLogger(__name__)

MODEL_HIDDEN = {
    "deep_model_1": (80, 50, 10),
    "deep_model_2": (80, 80, 50, 50, 10, 10),
}
MODEL_ALIASES = {"deep1": "deep_model_1", "deep2": "deep_model_2", "linear": "linear"}
MODEL_KINDS = (*MODEL_HIDDEN, "linear")

SUMMARY_COLUMNS = ("Return", "Volatility", "Sharpe Ratio", "MAE", "RMSE")


def canonical_model_kind(kind: str) -> str:
    kind = MODEL_ALIASES.get(kind, kind)
    if kind not in MODEL_KINDS and kind != "deep_custom":
        raise InvalidSpecError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    return kind


@dataclass(frozen=True)
class WalkForwardConfig:
    start_month: str
    end_month: str
    model_kind: str = "deep_model_1"
    train_window: int = 60
    quantiles: int = 5
    seed: int = 0
    hidden_dims: tuple[int, ...] | None = None
    train_config: TrainConfig = field(default_factory=TrainConfig)
    ridge_lambda: float = 0.0
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "model_kind", canonical_model_kind(self.model_kind))
        if self.hidden_dims is not None:
            object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    def validate(self) -> None:
        if parse_month(self.start_month) > parse_month(self.end_month):
            raise InvalidSpecError("start_month must not be after end_month")
        if self.train_window < 1:
            raise InvalidSpecError("train_window must be >= 1")
        if self.quantiles < 2:
            raise InvalidSpecError("quantiles must be >= 2")
        if self.seed < 0:
            raise InvalidSpecError("seed must be unsigned")
        if self.model_kind == "deep_custom" and not self.hidden_dims:
            raise InvalidSpecError("deep_custom needs hidden_dims")
        self.train_config.validate()

    @property
    def network_hidden(self) -> tuple[int, ...] | None:
        if self.model_kind == "linear":
            return None
        return self.hidden_dims or MODEL_HIDDEN[self.model_kind]

    def to_dict(self) -> dict:
        return {
            "start_month": self.start_month,
            "end_month": self.end_month,
            "model_kind": self.model_kind,
            "hidden_dims": list(self.network_hidden) if self.network_hidden else None,
            "train_window": self.train_window,
            "quantiles": self.quantiles,
            "seed": self.seed,
            "ridge_lambda": self.ridge_lambda,
            "train_config": vars(self.train_config).copy(),
        }


@dataclass
class MonthResult:
    month: str
    stock_ids: list[str]
    predicted: np.ndarray
    realized: np.ndarray
    buckets: np.ndarray
    long_short_return: float = math.nan
    mae: float = math.nan
    rmse: float = math.nan

    def to_dict(self) -> dict:
        return {
            "month": self.month,
            "long_short_return": self.long_short_return,
            "mae": self.mae,
            "rmse": self.rmse,
            "stocks": [
                {"stock_id": s, "predicted": float(p), "realized": float(r), "bucket": int(b)}
                for s, p, r, b in zip(self.stock_ids, self.predicted, self.realized, self.buckets)
            ],
        }


@dataclass
class BacktestReport:
    months: list[MonthResult]
    mae: float
    rmse: float
    ann_return: float
    ann_vol: float
    sharpe: float
    residuals: np.ndarray
    config: dict = field(default_factory=dict)

    def summary_row(self) -> dict:
        return dict(zip(SUMMARY_COLUMNS, (self.ann_return, self.ann_vol, self.sharpe,
                                          self.mae, self.rmse)))

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "summary": {"ann_return": self.ann_return, "ann_vol": self.ann_vol,
                        "sharpe": self.sharpe, "mae": self.mae, "rmse": self.rmse},
            "months": [m.to_dict() for m in self.months],
            "residuals": self.residuals.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BacktestReport":
        months = []
        for m in doc["months"]:
            stocks = m["stocks"]
            months.append(MonthResult(
                m["month"], [s["stock_id"] for s in stocks],
                np.array([s["predicted"] for s in stocks]),
                np.array([s["realized"] for s in stocks]),
                np.array([s["bucket"] for s in stocks], dtype=int),
                m["long_short_return"], m["mae"], m["rmse"]))
        s = doc["summary"]
        return cls(months, s["mae"], s["rmse"], s["ann_return"], s["ann_vol"], s["sharpe"],
                   np.array(doc["residuals"]), doc.get("config", {}))

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(_jsonable(self.to_dict()), indent=1))

    @classmethod
    def load_json(cls, path) -> "BacktestReport":
        return cls.from_dict(_unjsonable(json.loads(Path(path).read_text())))

    def write_month_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["month", "long_short_return", "mae", "rmse"])
            for m in self.months:
                writer.writerow([m.month, repr(m.long_short_return), repr(m.mae), repr(m.rmse)])

    def write_summary_csv(self, path, label: str | None = None) -> None:
        write_summary_csv(path, [(label or self.config.get("model_kind", "model"), self)])


def write_summary_csv(path, labelled_reports) -> None:
    """One row per model with the Table-4 style metric headers."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["Model", *SUMMARY_COLUMNS])
        for label, report in labelled_reports:
            writer.writerow([label, *(repr(float(v)) for v in report.summary_row().values())])


def _jsonable(obj):
    # NaN is not valid JSON; store it as null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    return obj


def _unjsonable(obj):
    if obj is None:
        return math.nan
    if isinstance(obj, dict):
        return {k: (v if k in ("config", "hidden_dims") else _unjsonable(v)) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unjsonable(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# Portfolio construction and metrics
# ---------------------------------------------------------------------------


def quantile_assign(predictions, q: int, stock_ids=None) -> np.ndarray:
    """Bucket stocks 1..q by descending prediction (bucket 1 holds the best).

    Bucket sizes differ by at most one, with the extra stocks going to the
    top buckets. Equal predictions are ordered by ascending stock id.
    """
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    n = p.size
    if q < 1:
        raise InvalidSpecError("q must be positive")
    if n < q:
        raise TooFewStocksError(f"{n} stocks cannot fill {q} buckets")
    if not np.all(np.isfinite(p)):
        raise ValueError("predictions must be finite")
    ids = list(range(n)) if stock_ids is None else list(stock_ids)
    if len(ids) != n:
        raise ValueError("stock_ids length does not match predictions")
    order = sorted(range(n), key=lambda i: (-p[i], ids[i]))
    base, extra = divmod(n, q)
    sizes = [base + (1 if k < extra else 0) for k in range(q)]
    buckets = np.empty(n, dtype=int)
    pos = 0
    for k, size in enumerate(sizes, start=1):
        buckets[order[pos:pos + size]] = k
        pos += size
    return buckets


def long_short_return(month: MonthResult, q: int | None = None) -> float:
    """Equal-weight mean realized return of bucket 1 minus bucket q."""
    q = int(month.buckets.max()) if q is None else q
    top = month.realized[month.buckets == 1]
    bottom = month.realized[month.buckets == q]
    return float(top.mean() - bottom.mean())


def sharpe_ratio(ann_return: float, ann_vol: float) -> float:
    if not ann_vol > 0:
        raise ZeroVolatilityError("Sharpe ratio undefined for zero volatility")
    return ann_return / ann_vol


def summarize(months: list[MonthResult]) -> dict:
    """Annualized long/short statistics and averaged per-month errors.

    ``ann_vol`` and ``sharpe`` are NaN when fewer than two months are
    given. Zero volatility over two or more months raises
    ZeroVolatilityError.
    """
    if not months:
        raise EmptyInputError("summarize needs at least one month")
    ls = np.array([m.long_short_return for m in months])
    ann_return = 12.0 * float(ls.mean())
    if len(ls) >= 2:
        ann_vol = math.sqrt(12.0) * float(np.std(ls, ddof=1))
        sharpe = sharpe_ratio(ann_return, ann_vol)
    else:
        ann_vol = sharpe = math.nan
    return {
        "ann_return": ann_return,
        "ann_vol": ann_vol,
        "sharpe": sharpe,
        "mae": float(np.mean([m.mae for m in months])),
        "rmse": float(np.mean([m.rmse for m in months])),
    }


def evaluate_month(month: str, stock_ids, predicted, realized, q: int) -> MonthResult:
    predicted = np.asarray(predicted, dtype=np.float64)
    realized = np.asarray(realized, dtype=np.float64)
    buckets = quantile_assign(predicted, q, stock_ids)
    err = realized - predicted
    result = MonthResult(month, list(stock_ids), predicted, realized, buckets,
                         mae=float(np.mean(np.abs(err))),
                         rmse=float(np.sqrt(np.mean(err * err))))
    result.long_short_return = long_short_return(result, q)
    return result


# ---------------------------------------------------------------------------
# Walk-forward engine
# ---------------------------------------------------------------------------


def month_seeds(seed: int, month: str) -> tuple[int, int]:
    """(init_seed, shuffle_seed) derived from the run seed and the month."""
    a, b = np.random.SeedSequence([seed, parse_month(month)]).generate_state(2)
    return int(a), int(b)


def fit_model(kind: str, X, y, config: WalkForwardConfig, month: str):
    """Fit a fresh model; returns a callable mapping inputs to predictions."""
    if kind == "linear":
        model = ols_fit(X, y, config.ridge_lambda)
        return model, lambda Z: linear_predict(model, Z)
    init_seed, shuffle_seed = month_seeds(config.seed, month)
    spec = NetworkSpec(X.shape[1], config.network_hidden, 1, seed=init_seed)
    net = train(init_network(spec), X, y, replace(config.train_config, seed=shuffle_seed))
    return net, lambda Z: predict(net, Z)


class _SampleCache:
    def __init__(self, panel):
        self.panel = panel
        self._sets: dict[str, SampleSet] = {}

    def get(self, as_of: str) -> SampleSet:
        if as_of not in self._sets:
            self._sets[as_of] = build_samples(self.panel, as_of).with_known_targets()
        return self._sets[as_of]


def training_as_ofs(panel, cache: _SampleCache, month: str, window: int) -> list[str] | None:
    """As-of months of the ``window`` most recent usable sets before ``month``."""
    limit = parse_month(month) - 2
    chosen = []
    for as_of in reversed(panel.months):
        if parse_month(as_of) > limit:
            continue
        if len(cache.get(as_of)):
            chosen.append(as_of)
            if len(chosen) == window:
                return chosen[::-1]
    return None


def first_feasible_month(panel, config: WalkForwardConfig, cache: _SampleCache | None = None):
    cache = cache or _SampleCache(panel)
    for as_of in panel.months:
        month = shift_month(as_of, 1)
        if len(cache.get(as_of)) < config.quantiles:
            continue
        if training_as_ofs(panel, cache, month, config.train_window) is not None:
            return month
    return None


def _run_month(month, X_train, y_train, pred_set: SampleSet, config: WalkForwardConfig):
    _, predict_fn = fit_model(config.model_kind, X_train, y_train, config, month)
    predicted = predict_fn(pred_set.X)
    logger.info("%s: trained on %d samples, predicted %d stocks", month, len(y_train), len(pred_set))
    return evaluate_month(month, pred_set.stock_ids, predicted, pred_set.y, config.quantiles)


def walk_forward(panel, config: WalkForwardConfig) -> BacktestReport:
    """Refit and forecast month by month over [start_month, end_month]."""
    config.validate()
    cache = _SampleCache(panel)
    jobs = []
    for month in month_range(config.start_month, config.end_month):
        as_ofs = training_as_ofs(panel, cache, month, config.train_window)
        pred_set = cache.get(shift_month(month, -1))
        if as_ofs is None or len(pred_set) < config.quantiles:
            first = first_feasible_month(panel, config, cache)
            why = ("fewer than %d training sets" % config.train_window if as_ofs is None
                   else f"only {len(pred_set)} stocks with complete inputs and known returns")
            raise InsufficientHistoryError(
                f"cannot forecast {month}: {why}; first feasible month is {first}", first)
        sets = [cache.get(a) for a in as_ofs]
        X = np.concatenate([s.X for s in sets])
        y = np.concatenate([s.y for s in sets])
        if X.shape[1] != INPUT_DIM:
            raise InvalidSpecError(f"samples have {X.shape[1]} cells, expected {INPUT_DIM}")
        jobs.append((month, X, y, pred_set))

    if config.jobs != 1 and len(jobs) > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=config.jobs)(
            delayed(_run_month)(m, X, y, p, config) for m, X, y, p in jobs)
    else:
        results = [_run_month(m, X, y, p, config) for m, X, y, p in jobs]

    try:
        metrics = summarize(results)
    except ZeroVolatilityError:
        logger.warning("long/short returns have zero volatility; Sharpe ratio undefined")
        ls = np.array([m.long_short_return for m in results])
        metrics = {"ann_return": 12.0 * float(ls.mean()), "ann_vol": 0.0, "sharpe": math.nan,
                   "mae": float(np.mean([m.mae for m in results])),
                   "rmse": float(np.mean([m.rmse for m in results]))}
    residuals = np.concatenate([m.realized - m.predicted for m in results])
    return BacktestReport(results, metrics["mae"], metrics["rmse"], metrics["ann_return"],
                          metrics["ann_vol"], metrics["sharpe"], residuals, config.to_dict())
