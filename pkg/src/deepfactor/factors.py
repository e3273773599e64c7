"""Factor descriptors, cross-sectional standardization and sample assembly.

Sixteen descriptors in five factor groups::

    Risk      60VOL, BETA, SKEW
    Quality   ROE, ROA, ACCRUALS, LEVERAGE
    Momentum  12-1MOM, 1MOM, 60MOM
    Value     PSR, PER, PBR, PCFR
    Size      CAP, ILLIQ

A model input stacks the descriptor vector at the as-of month and at lags
of 3, 6, 9 and 12 months (most recent block first), giving 80 cells. The
target is the return of the month after as-of.

Missing values are represented as NaN throughout.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import DegenerateColumnError, DimensionMismatchError, InvalidSpecError
from .months import shift_month

logger = logging.getLogger(__name__)

MISSING = math.nan


class Descriptor(enum.Enum):
    VOL60 = "60VOL"
    BETA = "BETA"
    SKEW = "SKEW"
    ROE = "ROE"
    ROA = "ROA"
    ACCRUALS = "ACCRUALS"
    LEVERAGE = "LEVERAGE"
    MOM12_1 = "12-1MOM"
    MOM1 = "1MOM"
    MOM60 = "60MOM"
    PSR = "PSR"
    PER = "PER"
    PBR = "PBR"
    PCFR = "PCFR"
    CAP = "CAP"
    ILLIQ = "ILLIQ"

    @property
    def index(self) -> int:
        return DESCRIPTORS.index(self)


DESCRIPTORS: tuple[Descriptor, ...] = tuple(Descriptor)
DESCRIPTOR_NAMES: tuple[str, ...] = tuple(d.value for d in DESCRIPTORS)
N_DESCRIPTORS = len(DESCRIPTORS)

FACTORS = ("Risk", "Quality", "Momentum", "Value", "Size")

FACTOR_GROUPS: dict[str, tuple[Descriptor, ...]] = {
    "Risk": (Descriptor.VOL60, Descriptor.BETA, Descriptor.SKEW),
    "Quality": (Descriptor.ROE, Descriptor.ROA, Descriptor.ACCRUALS, Descriptor.LEVERAGE),
    "Momentum": (Descriptor.MOM12_1, Descriptor.MOM1, Descriptor.MOM60),
    "Value": (Descriptor.PSR, Descriptor.PER, Descriptor.PBR, Descriptor.PCFR),
    "Size": (Descriptor.CAP, Descriptor.ILLIQ),
}

LAGS = (0, 3, 6, 9, 12)
INPUT_DIM = N_DESCRIPTORS * len(LAGS)

# trailing window lengths in months
RISK_WINDOW = 60
ILLIQ_WINDOW = 12
MAD_SCALE = 1.4826
WINSOR_LIMIT = 3.0


class FactorMap:
    """Assignment of each descriptor index to one of the five factors."""

    def __init__(self, groups: dict[str, Sequence[Descriptor | int]] | None = None):
        groups = FACTOR_GROUPS if groups is None else groups
        self.factors: tuple[str, ...] = tuple(groups)
        owner: dict[int, str] = {}
        for name, members in groups.items():
            for m in members:
                idx = m.index if isinstance(m, Descriptor) else int(m)
                if idx in owner:
                    raise InvalidSpecError(f"descriptor {idx} assigned to both {owner[idx]} and {name}")
                owner[idx] = name
        if sorted(owner) != list(range(N_DESCRIPTORS)):
            raise InvalidSpecError("factor map must cover every descriptor exactly once")
        self._owner = owner

    def factor_of(self, descriptor_index: int) -> str:
        return self._owner[descriptor_index]

    def members(self, factor: str) -> list[int]:
        return [i for i in range(N_DESCRIPTORS) if self._owner[i] == factor]

    def group_sizes(self) -> dict[str, int]:
        return {f: len(self.members(f)) for f in self.factors}

    def cell_factor(self, cell: int) -> str:
        """Factor of one cell of the lag-stacked input (all lags share it)."""
        return self._owner[cell % N_DESCRIPTORS]

    def cell_indicator(self, n_cells: int = INPUT_DIM) -> np.ndarray:
        """(n_factors, n_cells) 0/1 matrix mapping cells to factors."""
        if n_cells % N_DESCRIPTORS:
            raise DimensionMismatchError(f"{n_cells} cells is not a multiple of {N_DESCRIPTORS}")
        out = np.zeros((len(self.factors), n_cells))
        for c in range(n_cells):
            out[self.factors.index(self.cell_factor(c)), c] = 1.0
        return out


def cell_names(lags: Sequence[int] = LAGS) -> list[str]:
    """Column names of the stacked input, e.g. ``ROE_L3``."""
    return [f"{name}_L{lag}" for lag in lags for name in DESCRIPTOR_NAMES]


def unpack_input(x) -> np.ndarray:
    """Split an 80-cell input into its (5, 16) lag-by-descriptor blocks."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (INPUT_DIM,):
        raise DimensionMismatchError(f"expected {INPUT_DIM} cells, got {x.shape}")
    return x.reshape(len(LAGS), N_DESCRIPTORS).copy()


# ---------------------------------------------------------------------------
# Raw series and descriptor formulas
# ---------------------------------------------------------------------------


@dataclass
class RawStockSeries:
    """Monthly inputs for one stock on a shared month index.

    Fundamentals, market value and volume may be given either as scalars
    (held constant) or as arrays aligned with ``months``.
    """

    stock_id: str
    months: list[str]
    monthly_returns: np.ndarray
    market_returns: np.ndarray
    net_income: float | np.ndarray = MISSING
    net_assets: float | np.ndarray = MISSING
    operating_profit: float | np.ndarray = MISSING
    total_assets: float | np.ndarray = MISSING
    operating_cashflow: float | np.ndarray = MISSING
    total_liabilities: float | np.ndarray = MISSING
    sales: float | np.ndarray = MISSING
    market_value: float | np.ndarray = MISSING
    trading_volume: float | np.ndarray = MISSING

    def __post_init__(self):
        n = len(self.months)
        self.monthly_returns = np.asarray(self.monthly_returns, dtype=np.float64)
        self.market_returns = np.asarray(self.market_returns, dtype=np.float64)
        if self.monthly_returns.shape != (n,) or self.market_returns.shape != (n,):
            raise DimensionMismatchError("return series must align with the month index")
        self._index = {m: i for i, m in enumerate(self.months)}

    def position(self, as_of: str) -> int:
        try:
            return self._index[as_of]
        except KeyError:
            raise KeyError(f"{as_of} is not in the series index of {self.stock_id}") from None

    def value_at(self, name: str, t: int) -> float:
        v = getattr(self, name)
        if np.ndim(v) == 0:
            return float(v)
        return float(np.asarray(v, dtype=np.float64)[t])

    def window(self, name: str, t: int, length: int) -> np.ndarray | None:
        """Trailing ``length`` values ending at position t, or None if incomplete."""
        if t + 1 < length:
            return None
        v = getattr(self, name)
        if np.ndim(v) == 0:
            w = np.full(length, float(v))
        else:
            w = np.asarray(v, dtype=np.float64)[t + 1 - length:t + 1]
        if not np.all(np.isfinite(w)):
            return None
        return w


def _ratio(num: float, den: float) -> float:
    if not (math.isfinite(num) and math.isfinite(den)) or den == 0.0:
        return MISSING
    return num / den


def _sample_std(x: np.ndarray) -> float:
    d = x - x[0]  # exact zeros for constant input
    return float(np.std(d, ddof=1))


def _skewness(x: np.ndarray) -> float:
    if np.ptp(x) == 0.0:
        return MISSING
    d = x - x.mean()
    m2 = np.mean(d * d)
    m3 = np.mean(d * d * d)
    return float(m3 / m2 ** 1.5)


def _beta(r: np.ndarray, mkt: np.ndarray) -> float:
    dm = mkt - mkt.mean()
    var = float(np.dot(dm, dm))
    if var == 0.0:
        return MISSING
    return float(np.dot(dm, r - r.mean()) / var)


def _cumulative(r: np.ndarray) -> float:
    return float(np.prod(1.0 + r) - 1.0)


def compute_descriptor(kind: Descriptor | str, series: RawStockSeries, as_of: str) -> float:
    """Value of one descriptor for ``series`` using data up to ``as_of`` only.

    Returns NaN when the trailing window is incomplete or a denominator is
    zero. Trailing windows include the as-of month itself.
    """
    kind = Descriptor(kind) if not isinstance(kind, Descriptor) else kind
    t = series.position(as_of)
    D = Descriptor

    if kind in (D.VOL60, D.SKEW, D.MOM60, D.BETA):
        r = series.window("monthly_returns", t, RISK_WINDOW)
        if r is None:
            return MISSING
        if kind is D.VOL60:
            return _sample_std(r)
        if kind is D.SKEW:
            return _skewness(r)
        if kind is D.MOM60:
            return _cumulative(r)
        mkt = series.window("market_returns", t, RISK_WINDOW)
        return MISSING if mkt is None else _beta(r, mkt)

    if kind is D.MOM12_1:
        # months -12..-2 where -1 is the as-of month: positions t-11 .. t-1
        if t < 11:
            return MISSING
        r = series.window("monthly_returns", t - 1, 11)
        return MISSING if r is None else _cumulative(r)
    if kind is D.MOM1:
        r = series.monthly_returns[t]
        return float(r) if math.isfinite(r) else MISSING
    if kind is D.ILLIQ:
        r = series.window("monthly_returns", t, ILLIQ_WINDOW)
        vol = series.window("trading_volume", t, ILLIQ_WINDOW)
        if r is None or vol is None or np.any(vol == 0.0):
            return MISSING
        return float(np.mean(np.abs(r) / vol))

    v = lambda name: series.value_at(name, t)  # noqa: E731
    if kind is D.ROE:
        return _ratio(v("net_income"), v("net_assets"))
    if kind is D.ROA:
        return _ratio(v("operating_profit"), v("total_assets"))
    if kind is D.ACCRUALS:
        out = v("operating_cashflow") - v("operating_profit")
        return out if math.isfinite(out) else MISSING
    if kind is D.LEVERAGE:
        return _ratio(v("total_liabilities"), v("total_assets"))
    if kind is D.PSR:
        return _ratio(v("sales"), v("market_value"))
    if kind is D.PER:
        return _ratio(v("net_income"), v("market_value"))
    if kind is D.PBR:
        return _ratio(v("net_assets"), v("market_value"))
    if kind is D.PCFR:
        return _ratio(v("operating_cashflow"), v("market_value"))
    if kind is D.CAP:
        mv = v("market_value")
        return math.log(mv) if math.isfinite(mv) and mv > 0 else MISSING
    raise ValueError(f"unhandled descriptor {kind}")  # pragma: no cover


def compute_descriptors(series: RawStockSeries, as_of: str) -> np.ndarray:
    """All 16 descriptors in table order."""
    return np.array([compute_descriptor(d, series, as_of) for d in DESCRIPTORS])


# ---------------------------------------------------------------------------
# Cross-sectional standardization
# ---------------------------------------------------------------------------


def winsorize_mad(x: np.ndarray, limit: float = WINSOR_LIMIT) -> np.ndarray:
    """Clip at median +/- limit * 1.4826 * MAD. No-op when the MAD is zero."""
    med = np.median(x)
    mad = np.median(np.abs(x - med)) * MAD_SCALE
    if mad == 0.0:
        return x.copy()
    return np.clip(x, med - limit * mad, med + limit * mad)


def standardize_cross_section(values, names: Sequence[str] | None = None):
    """Winsorize then z-score each descriptor column across stocks.

    Parameters
    ----------
    values : (n_stocks, n_descriptors) array, NaN marks missing
    names : optional column names used in error messages

    Returns
    -------
    standardized : array of the same shape, missing entries set to 0
    imputed : boolean mask of the entries that were missing
    """
    x = np.array(values, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    out = np.zeros_like(x)
    imputed = ~np.isfinite(x)
    for j in range(x.shape[1]):
        label = names[j] if names is not None else f"column {j}"
        ok = ~imputed[:, j]
        col = x[ok, j]
        if col.size < 2:
            raise DegenerateColumnError(f"{label}: need at least 2 non-missing values, got {col.size}")
        clipped = winsorize_mad(col)
        mean = clipped.mean()
        std = clipped.std(ddof=1)
        if std == 0.0 or np.ptp(clipped) == 0.0:
            raise DegenerateColumnError(f"{label} is constant across the cross-section")
        out[ok, j] = (clipped - mean) / std
    if squeeze:
        return out[:, 0], imputed[:, 0]
    return out, imputed


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    stock_id: str
    as_of: str
    input: np.ndarray
    target: float

    def unpack(self) -> np.ndarray:
        return unpack_input(self.input)


@dataclass
class SampleSet:
    """All samples of one as-of month, stored as arrays for training.

    ``y`` holds the return of the month after ``as_of`` (NaN if unknown).
    ``skipped`` lists stocks dropped for incomplete lag history.
    """

    as_of: str
    stock_ids: list[str]
    X: np.ndarray
    y: np.ndarray
    skipped: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.stock_ids)

    def __iter__(self) -> Iterator[Sample]:
        for sid, x, t in zip(self.stock_ids, self.X, self.y):
            yield Sample(sid, self.as_of, x, float(t))

    @property
    def skip_count(self) -> int:
        return len(self.skipped)

    def with_known_targets(self) -> "SampleSet":
        keep = np.isfinite(self.y)
        return SampleSet(self.as_of, [s for s, k in zip(self.stock_ids, keep) if k],
                         self.X[keep], self.y[keep], self.skipped)


def build_samples(panel, as_of: str, lags: Sequence[int] = LAGS) -> SampleSet:
    """Stack lagged descriptor vectors of every stock into model inputs.

    ``panel`` is a :class:`~deepfactor.data.PanelDataset`. A stock is kept
    only if every lagged month exists in the panel and its descriptor vector
    there is fully finite; others are listed in ``SampleSet.skipped``.
    """
    rows = [panel.row(shift_month(as_of, -lag)) for lag in lags]
    n_stocks = len(panel.stocks)
    if rows[0] is None:
        return SampleSet(as_of, [], np.empty((0, N_DESCRIPTORS * len(lags))), np.empty(0),
                         list(panel.stocks))
    if any(r is None for r in rows):
        blocks = None
    else:
        blocks = np.concatenate([panel.descriptors[r] for r in rows], axis=1)
    if blocks is None:
        keep = np.zeros(n_stocks, dtype=bool)
    else:
        keep = np.all(np.isfinite(blocks), axis=1)
    observed = np.any(np.isfinite(panel.descriptors[rows[0]]), axis=1)
    skipped = [s for s, k, o in zip(panel.stocks, keep, observed) if o and not k]
    if skipped:
        logger.debug("%s: skipped %d stocks with incomplete history", as_of, len(skipped))
    X = blocks[keep] if blocks is not None else np.empty((0, N_DESCRIPTORS * len(lags)))
    y = panel.fwd_return[rows[0], keep] if blocks is not None else np.empty(0)
    ids = [s for s, k in zip(panel.stocks, keep) if k]
    return SampleSet(as_of, ids, np.ascontiguousarray(X), np.array(y, dtype=np.float64), skipped)
