"""Deep factor model: neural return model with LRP factor attribution."""

from .attribution import (
    FactorAttribution,
    FactorCorrelation,
    aggregate_portfolio,
    aggregate_stock,
    factor_correlations,
)
from .backtest import (
    BacktestReport,
    MonthResult,
    WalkForwardConfig,
    long_short_return,
    quantile_assign,
    summarize,
    walk_forward,
)
from .baseline import LinearModel, linear_predict, ols_fit
from .data import (
    GroundTruth,
    PanelDataset,
    SynthSpec,
    emit_panel,
    generate_synthetic,
    load_panel,
    panel_from_raw,
    standardize_panel,
)
from .factors import (
    DESCRIPTORS,
    FACTORS,
    Descriptor,
    FactorMap,
    RawStockSeries,
    Sample,
    SampleSet,
    build_samples,
    compute_descriptor,
    standardize_cross_section,
)
from .lrp import RelevanceVector, propagate_layer, relevance
from .net import (
    ForwardTrace,
    Network,
    NetworkSpec,
    TrainConfig,
    backward,
    forward,
    init_network,
    loss_mse,
    predict,
    train,
)

__version__ = "0.1.0"
