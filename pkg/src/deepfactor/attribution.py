"""Factor-level views of relevance scores and of predictions.

Relevance cells are grouped by the factor of their descriptor (every lag of
a descriptor belongs to the same factor). Percentages use absolute
relevance so that they are non-negative and sum to 100.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import DegenerateAttributionError, DimensionMismatchError, EmptyInputError
from .factors import DESCRIPTOR_NAMES, N_DESCRIPTORS, FactorMap
from .lrp import RelevanceVector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FactorAttribution:
    per_factor: dict[str, float]
    scope: str = ""

    def to_dict(self) -> dict:
        return {"scope": self.scope, "per_factor": dict(self.per_factor)}

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def write_csv(self, path) -> None:
        """Plot-ready (factor, percentage) table."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["factor", "percentage"])
            for name, pct in self.per_factor.items():
                writer.writerow([name, repr(float(pct))])


@dataclass(frozen=True)
class FactorCorrelation:
    per_factor: dict[str, tuple[float, float]]
    per_descriptor: dict[str, tuple[float, float]] = field(default_factory=dict)
    excluded: tuple[str, ...] = ()

    def spearman(self, factor: str) -> float:
        return self.per_factor[factor][0]

    def kendall(self, factor: str) -> float:
        return self.per_factor[factor][1]

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "per_factor": {f: {"spearman": clean(s), "kendall": clean(k)}
                           for f, (s, k) in self.per_factor.items()},
            "per_descriptor": {d: {"spearman": s, "kendall": k}
                               for d, (s, k) in self.per_descriptor.items()},
            "excluded": list(self.excluded),
        }


def _as_array(relevance) -> np.ndarray:
    if isinstance(relevance, RelevanceVector):
        return np.asarray(relevance.per_input, dtype=np.float64)
    return np.asarray(relevance, dtype=np.float64).reshape(-1)


def aggregate_stock(relevance, factor_map: FactorMap | None = None, scope: str = "",
                    n_cells: int | None = None) -> FactorAttribution:
    """Percentage of total absolute relevance carried by each factor."""
    factor_map = factor_map or FactorMap()
    r = _as_array(relevance)
    if n_cells is not None and r.size != n_cells:
        raise DimensionMismatchError(f"relevance has {r.size} cells, expected {n_cells}")
    if r.size == 0 or r.size % N_DESCRIPTORS:
        raise DimensionMismatchError(
            f"relevance length {r.size} is not a positive multiple of {N_DESCRIPTORS}")
    mass = factor_map.cell_indicator(r.size) @ np.abs(r)
    total = mass.sum()
    if not total > 0:
        raise DegenerateAttributionError("total absolute relevance is zero")
    pct = 100.0 * mass / total
    return FactorAttribution(dict(zip(factor_map.factors, pct.tolist())), scope)


def aggregate_portfolio(relevances, factor_map: FactorMap | None = None,
                        scope: str = "portfolio:Q1") -> FactorAttribution:
    """Average relevance vectors element-wise, then aggregate by factor."""
    arrays = [_as_array(r) for r in relevances]
    if not arrays:
        raise EmptyInputError("portfolio has no stocks")
    if len({a.size for a in arrays}) != 1:
        raise DimensionMismatchError("relevance vectors have different lengths")
    return aggregate_stock(np.mean(arrays, axis=0), factor_map, scope)


def factor_correlations(predictions, descriptors, factor_map: FactorMap | None = None
                        ) -> FactorCorrelation:
    """Spearman and Kendall tau-b of each descriptor against predictions.

    Per factor, the plain mean over its descriptors. Descriptors that are
    constant across stocks are excluded from the mean; a factor with no
    usable descriptor gets NaN.
    """
    factor_map = factor_map or FactorMap()
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    D = np.asarray(descriptors, dtype=np.float64)
    if D.ndim != 2 or D.shape != (p.size, N_DESCRIPTORS):
        raise DimensionMismatchError(f"descriptors must be ({p.size}, {N_DESCRIPTORS}), got {D.shape}")
    if p.size < 3:
        raise EmptyInputError("need at least 3 stocks")
    if np.ptp(p) == 0:
        raise DegenerateAttributionError("predictions are constant; rank correlation undefined")

    per_desc: dict[str, tuple[float, float]] = {}
    excluded = []
    for k, name in enumerate(DESCRIPTOR_NAMES):
        col = D[:, k]
        if np.ptp(col) == 0:
            logger.warning("%s is constant across stocks; excluded from its factor mean", name)
            excluded.append(name)
            continue
        rho = stats.spearmanr(col, p).statistic
        tau = stats.kendalltau(col, p, variant="b").statistic
        per_desc[name] = (float(rho), float(tau))

    per_factor = {}
    for f in factor_map.factors:
        vals = [per_desc[DESCRIPTOR_NAMES[k]] for k in factor_map.members(f)
                if DESCRIPTOR_NAMES[k] in per_desc]
        if vals:
            per_factor[f] = (float(np.mean([v[0] for v in vals])), float(np.mean([v[1] for v in vals])))
        else:
            per_factor[f] = (math.nan, math.nan)
    return FactorCorrelation(per_factor, per_desc, tuple(excluded))
