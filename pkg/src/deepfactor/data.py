"""Panel dataset, CSV input/output and a synthetic panel generator.

The panel CSV has one row per (month, stock)::

    date,stock_id,60VOL,BETA,...,ILLIQ,fwd_return

``date`` is ``YYYY-MM`` and ``fwd_return`` is the return realized over the
following month. Empty cells are missing values.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateColumnError, InvalidSpecError, PanelFormatError
from .factors import (
    DESCRIPTOR_NAMES,
    DESCRIPTORS,
    N_DESCRIPTORS,
    Descriptor,
    RawStockSeries,
    compute_descriptors,
    standardize_cross_section,
)
from .months import format_month, parse_month

logger = logging.getLogger(__name__)

PANEL_COLUMNS = ("date", "stock_id", *DESCRIPTOR_NAMES, "fwd_return")

# 60 training sets + 12 months of lags + 1 target month
MIN_WALK_FORWARD_MONTHS = 73


@dataclass
class PanelDataset:
    """Stock-by-month panel of descriptor vectors and forward returns.

    Arrays are indexed ``[month_row, stock_col]``; ``descriptors`` has a
    trailing axis of 16 descriptors. ``observed`` marks the (month, stock)
    pairs that exist in the panel.
    """

    months: list[str]
    stocks: list[str]
    descriptors: np.ndarray
    fwd_return: np.ndarray
    observed: np.ndarray | None = None
    standardized: bool = True
    imputed: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        serial = [parse_month(m) for m in self.months]
        if any(b <= a for a, b in zip(serial, serial[1:])):
            raise InvalidSpecError("panel months must be strictly increasing")
        if len(set(self.stocks)) != len(self.stocks):
            raise InvalidSpecError("stock ids must be unique")
        T, N = len(self.months), len(self.stocks)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        self.fwd_return = np.asarray(self.fwd_return, dtype=np.float64)
        if self.descriptors.shape != (T, N, N_DESCRIPTORS) or self.fwd_return.shape != (T, N):
            raise InvalidSpecError("descriptor/return arrays do not match the month and stock lists")
        if self.observed is None:
            self.observed = np.any(np.isfinite(self.descriptors), axis=2) | np.isfinite(self.fwd_return)
        self._rows = {m: i for i, m in enumerate(self.months)}
        self._cols = {s: j for j, s in enumerate(self.stocks)}

    @property
    def n_observations(self) -> int:
        return int(self.observed.sum())

    def row(self, month: str) -> int | None:
        return self._rows.get(month)

    def col(self, stock_id: str) -> int | None:
        return self._cols.get(stock_id)

    def gaps(self) -> list[str]:
        """Calendar months missing between the first and last panel month."""
        if not self.months:
            return []
        present = {parse_month(m) for m in self.months}
        lo, hi = min(present), max(present)
        return [format_month(s) for s in range(lo, hi + 1) if s not in present]

    def realized_return(self, month: str) -> np.ndarray:
        """Return realized during ``month``, i.e. the previous row's fwd_return."""
        prev = self.row(format_month(parse_month(month) - 1))
        if prev is None:
            return np.full(len(self.stocks), np.nan)
        return self.fwd_return[prev].copy()

    def cross_section(self, month: str) -> np.ndarray:
        return self.descriptors[self._rows[month]]

    def copy(self) -> "PanelDataset":
        return PanelDataset(list(self.months), list(self.stocks), self.descriptors.copy(),
                            self.fwd_return.copy(), self.observed.copy(), self.standardized,
                            None if self.imputed is None else self.imputed.copy())


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return "" if not math.isfinite(x) else repr(float(x))


def emit_panel(panel: PanelDataset, path) -> None:
    """Write observed rows sorted by (date, stock_id)."""
    order = sorted(range(len(panel.stocks)), key=lambda j: panel.stocks[j])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PANEL_COLUMNS)
        for i, month in enumerate(panel.months):
            for j in order:
                if not panel.observed[i, j]:
                    continue
                writer.writerow([month, panel.stocks[j],
                                 *(_fmt(v) for v in panel.descriptors[i, j]),
                                 _fmt(panel.fwd_return[i, j])])


def _parse_float(cell: str, line: int, column: str) -> float:
    cell = cell.strip()
    if cell == "":
        return math.nan
    try:
        value = float(cell)
    except ValueError:
        raise PanelFormatError(f"line {line}: cannot parse {column}={cell!r} as a number") from None
    if not math.isfinite(value):
        raise PanelFormatError(f"line {line}: {column} must be finite or empty, got {cell!r}")
    return value


def load_panel(path, standardized: bool = True) -> PanelDataset:
    """Read and validate a panel CSV.

    Raises PanelFormatError on unparseable cells (with line number),
    duplicate (date, stock_id) keys and unexpected or missing columns.
    Calendar gaps between months are allowed and logged.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise PanelFormatError(f"{path}: empty file") from None
        unexpected = [h for h in header if h not in PANEL_COLUMNS]
        missing = [c for c in PANEL_COLUMNS if c not in header]
        if unexpected or missing:
            raise PanelFormatError(
                f"schema mismatch: unexpected columns {unexpected}, missing columns {missing}")
        pos = {h: header.index(h) for h in PANEL_COLUMNS}
        records = {}
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise PanelFormatError(f"line {line}: expected {len(header)} fields, got {len(rec)}")
            month = rec[pos["date"]].strip()
            try:
                parse_month(month)
            except ValueError as exc:
                raise PanelFormatError(f"line {line}: {exc}") from None
            stock = rec[pos["stock_id"]].strip()
            if not stock:
                raise PanelFormatError(f"line {line}: empty stock_id")
            key = (month, stock)
            if key in records:
                raise PanelFormatError(f"line {line}: duplicate row for date={month}, stock_id={stock}")
            desc = [_parse_float(rec[pos[n]], line, n) for n in DESCRIPTOR_NAMES]
            records[key] = (desc, _parse_float(rec[pos["fwd_return"]], line, "fwd_return"))

    months = sorted({m for m, _ in records}, key=parse_month)
    stocks = sorted({s for _, s in records})
    rows = {m: i for i, m in enumerate(months)}
    cols = {s: j for j, s in enumerate(stocks)}
    T, N = len(months), len(stocks)
    descriptors = np.full((T, N, N_DESCRIPTORS), np.nan)
    fwd = np.full((T, N), np.nan)
    observed = np.zeros((T, N), dtype=bool)
    for (m, s), (desc, r) in records.items():
        i, j = rows[m], cols[s]
        descriptors[i, j] = desc
        fwd[i, j] = r
        observed[i, j] = True
    panel = PanelDataset(months, stocks, descriptors, fwd, observed, standardized)
    gaps = panel.gaps()
    if gaps:
        logger.warning("%s: %d calendar month(s) missing, first %s", path, len(gaps), gaps[0])
    return panel


# ---------------------------------------------------------------------------
# Panels from raw series
# ---------------------------------------------------------------------------


def standardize_panel(panel: PanelDataset) -> PanelDataset:
    """Cross-sectionally standardize every month of a raw panel.

    Columns that cannot be standardized in a month (fewer than two values
    or constant) are left missing for that month.
    """
    out = panel.copy()
    imputed = np.zeros(panel.descriptors.shape, dtype=bool)
    for i, month in enumerate(panel.months):
        obs = panel.observed[i]
        if obs.sum() == 0:
            continue
        block = panel.descriptors[i][obs]
        for k, name in enumerate(DESCRIPTOR_NAMES):
            col = np.full(len(panel.stocks), np.nan)
            try:
                z, mask = standardize_cross_section(block[:, k], names=[name])
            except DegenerateColumnError as exc:
                logger.debug("%s: %s left missing (%s)", month, name, exc)
            else:
                col[obs] = z
                imputed[i, obs, k] = mask
            out.descriptors[i, :, k] = col
    out.standardized = True
    out.imputed = imputed
    return out


def panel_from_raw(series: list[RawStockSeries], standardize: bool = True) -> PanelDataset:
    """Compute all descriptors for every stock and month of raw series.

    All series must share one month index. ``fwd_return`` at month t is
    the stock's return at t + 1.
    """
    if not series:
        raise InvalidSpecError("need at least one stock series")
    months = list(series[0].months)
    for s in series[1:]:
        if list(s.months) != months:
            raise InvalidSpecError(f"{s.stock_id}: month index differs from {series[0].stock_id}")
    T, N = len(months), len(series)
    desc = np.full((T, N, N_DESCRIPTORS), np.nan)
    fwd = np.full((T, N), np.nan)
    for j, s in enumerate(series):
        for i, m in enumerate(months):
            desc[i, j] = compute_descriptors(s, m)
        fwd[:-1, j] = s.monthly_returns[1:]
    observed = np.ones((T, N), dtype=bool)
    panel = PanelDataset(months, [s.stock_id for s in series], desc, fwd, observed, standardized=False)
    return standardize_panel(panel) if standardize else panel


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

GROUND_TRUTHS = ("linear", "nonlinear")

LINEAR_COEFFICIENTS = {
    "ROE": 0.010,
    "PBR": 0.008,
    "12-1MOM": 0.006,
    "60VOL": -0.005,
    "CAP": -0.004,
}
LINEAR_INTERCEPT = 0.0

# value saturation, momentum x quality interaction, penalty on squared risk
NONLINEAR_CONSTANTS = {"c_value": 0.01, "c_interaction": 0.04, "c_risk": 0.02}
NONLINEAR_TERMS = {"value": "PBR", "momentum": "12-1MOM", "quality": "ROE", "risk": "60VOL"}


@dataclass(frozen=True)
class GroundTruth:
    """Expected next-month return as a function of current descriptors."""

    kind: str
    intercept: float = 0.0
    coefficients: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    terms: dict = field(default_factory=dict)

    @classmethod
    def linear(cls) -> "GroundTruth":
        return cls("linear", LINEAR_INTERCEPT, dict(LINEAR_COEFFICIENTS))

    @classmethod
    def nonlinear(cls) -> "GroundTruth":
        return cls("nonlinear", constants=dict(NONLINEAR_CONSTANTS), terms=dict(NONLINEAR_TERMS))

    @property
    def coefficient_vector(self) -> np.ndarray:
        beta = np.zeros(N_DESCRIPTORS)
        for name, c in self.coefficients.items():
            beta[Descriptor(name).index] = c
        return beta

    def __call__(self, descriptors) -> np.ndarray:
        """Evaluate on an array whose last axis holds the 16 descriptors."""
        x = np.asarray(descriptors, dtype=np.float64)
        if self.kind == "linear":
            return self.intercept + x @ self.coefficient_vector
        col = {k: x[..., Descriptor(name).index] for k, name in self.terms.items()}
        c = self.constants
        return (c["c_value"] * np.tanh(2.0 * col["value"])
                + c["c_interaction"] * col["momentum"] * col["quality"]
                - c["c_risk"] * col["risk"] ** 2)

    def to_dict(self) -> dict:
        doc = asdict(self)
        if self.kind == "linear":
            doc["formula"] = "intercept + sum(coefficients[d] * d)"
        else:
            doc["formula"] = ("c_value*tanh(2*value) + c_interaction*momentum*quality"
                              " - c_risk*risk**2")
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "GroundTruth":
        doc = {k: v for k, v in doc.items() if k != "formula"}
        return cls(**doc)


@dataclass(frozen=True)
class SynthSpec:
    n_stocks: int = 500
    n_months: int = 120
    ground_truth: str = "nonlinear"
    noise_sigma: float = 0.05
    seed: int = 0
    start_month: str = "2000-01"
    persistence: float = 0.9

    def validate(self, walk_forward: bool = False) -> None:
        if self.n_stocks < 2:
            raise InvalidSpecError("n_stocks must be at least 2")
        if self.n_months < 1:
            raise InvalidSpecError("n_months must be positive")
        if walk_forward and self.n_months < MIN_WALK_FORWARD_MONTHS:
            raise InvalidSpecError(
                f"n_months={self.n_months} is below the walk-forward minimum of "
                f"{MIN_WALK_FORWARD_MONTHS} (60 training sets + 12 lag months + 1 target)")
        if self.ground_truth not in GROUND_TRUTHS:
            raise InvalidSpecError(f"ground_truth must be one of {GROUND_TRUTHS}")
        if not self.noise_sigma >= 0:
            raise InvalidSpecError("noise_sigma must be >= 0")
        if self.seed < 0:
            raise InvalidSpecError("seed must be unsigned")
        if not 0.0 <= self.persistence < 1.0:
            raise InvalidSpecError("persistence must lie in [0, 1)")
        parse_month(self.start_month)

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        return cls(**json.loads(Path(path).read_text()))


def generate_synthetic(spec: SynthSpec) -> tuple[PanelDataset, GroundTruth]:
    """Synthetic standardized panel with a known return-generating function.

    Each descriptor follows an independent AR(1) path per stock, and every
    month is then standardized across stocks. ``fwd_return`` is the ground
    truth evaluated on the stored descriptors plus Gaussian noise.
    """
    spec.validate()
    T, N, phi = spec.n_months, spec.n_stocks, spec.persistence
    desc_seq, noise_seq = np.random.SeedSequence(spec.seed).spawn(2)
    rng = np.random.default_rng(desc_seq)
    raw = np.empty((T, N, N_DESCRIPTORS))
    raw[0] = rng.standard_normal((N, N_DESCRIPTORS))
    innovation = math.sqrt(1.0 - phi * phi)
    for t in range(1, T):
        raw[t] = phi * raw[t - 1] + innovation * rng.standard_normal((N, N_DESCRIPTORS))
    desc = np.empty_like(raw)
    for t in range(T):
        desc[t], _ = standardize_cross_section(raw[t], names=DESCRIPTOR_NAMES)

    truth = GroundTruth.linear() if spec.ground_truth == "linear" else GroundTruth.nonlinear()
    fwd = truth(desc)
    if spec.noise_sigma > 0:
        fwd = fwd + spec.noise_sigma * np.random.default_rng(noise_seq).standard_normal((T, N))
    start = parse_month(spec.start_month)
    months = [format_month(start + t) for t in range(T)]
    width = max(4, len(str(N)))
    stocks = [f"S{j:0{width}d}" for j in range(1, N + 1)]
    panel = PanelDataset(months, stocks, desc, fwd, np.ones((T, N), dtype=bool), standardized=True,
                         imputed=np.zeros((T, N, N_DESCRIPTORS), dtype=bool))
    return panel, truth


__all__ = [
    "DESCRIPTORS",
    "GroundTruth",
    "MIN_WALK_FORWARD_MONTHS",
    "PANEL_COLUMNS",
    "PanelDataset",
    "SynthSpec",
    "emit_panel",
    "generate_synthetic",
    "load_panel",
    "panel_from_raw",
    "standardize_panel",
]
