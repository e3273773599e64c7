"""Layer-wise relevance propagation for :class:`~deepfactor.net.Network`.

The prediction is taken as the relevance of the output neuron and pushed
down one layer at a time. Each lower neuron ``i`` receives the share
``w_ji * a_i / d_j`` of every upper neuron's relevance ``R_j``, where
``d_j = sum_k w_jk * a_k + b_j`` is the upper neuron's pre-activation.

The bias share ``b_j / d_j`` and whatever the epsilon stabilizer removes are
not handed to any input; they are accumulated in ``bias_absorbed`` so that::

    sum(per_input) + bias_absorbed == predicted

holds to rounding error for every network.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, ZeroDenominatorError
from .net import ForwardTrace, Network

DEFAULT_STABILIZER = 1e-9


@dataclass(frozen=True)
class RelevanceVector:
    per_input: np.ndarray
    predicted: float
    bias_absorbed: float
    # relevance per layer, output layer first and input layer last
    layers: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def conservation_error(self) -> float:
        return float(abs(self.per_input.sum() + self.bias_absorbed - self.predicted))

    def __len__(self):
        return len(self.per_input)


def _sign(x):
    # sign(0) is taken as +1 so that a positive stabilizer always moves the
    # denominator away from zero
    return np.where(x >= 0, 1.0, -1.0)


def propagate_layer(weights, lower_activations, upper_relevance, stabilizer=0.0, bias=None):
    """Redistribute one layer's relevance onto the layer below.

    Parameters
    ----------
    weights : (n_upper, n_lower) array
    lower_activations : (n_lower,) array
        Inputs the layer saw in the forward pass.
    upper_relevance : (n_upper,) array
    stabilizer : float
        Epsilon added to each denominator with the denominator's sign.
    bias : (n_upper,) array, optional
        Layer bias; zero if omitted.

    Returns
    -------
    lower_relevance : (n_lower,) array
    bias_leak : float
        Relevance not passed down (bias share plus stabilizer loss).
    """
    W = np.asarray(weights, dtype=np.float64)
    a = np.asarray(lower_activations, dtype=np.float64).reshape(-1)
    R = np.asarray(upper_relevance, dtype=np.float64).reshape(-1)
    if W.ndim != 2 or W.shape != (R.size, a.size):
        raise DimensionMismatchError(
            f"weights {W.shape} incompatible with {a.size} lower / {R.size} upper neurons")
    b = np.zeros(R.size) if bias is None else np.asarray(bias, dtype=np.float64).reshape(-1)
    if b.shape != R.shape:
        raise DimensionMismatchError(f"bias length {b.size}, expected {R.size}")
    if stabilizer < 0:
        raise ValueError("stabilizer must be >= 0")
    if not np.all(np.isfinite(R)):
        raise ValueError("upper relevance must be finite")

    d = W @ a + b
    if stabilizer == 0.0:
        if np.any(d == 0.0):
            j = int(np.flatnonzero(d == 0.0)[0])
            raise ZeroDenominatorError(
                f"denominator of upper neuron {j} is exactly zero; use stabilizer > 0")
        denom = d
    else:
        denom = d + stabilizer * _sign(d)
    ratio = R / denom
    lower = a * (W.T @ ratio)
    leak = float(np.dot(ratio, b + (denom - d)))
    return lower, leak


def relevance(net: Network, trace: ForwardTrace, stabilizer: float = DEFAULT_STABILIZER,
              output_index: int = 0) -> RelevanceVector:
    """Decompose one prediction of ``net`` into per-input relevance scores."""
    if len(trace.activations) != net.n_layers:
        raise DimensionMismatchError("trace does not belong to this network")
    predicted = float(trace.outputs[output_index])
    top = np.zeros(net.output_dim)
    top[output_index] = predicted
    R = top
    layers = [R]
    absorbed = 0.0
    for i in range(net.n_layers - 1, -1, -1):
        layer = net.layers[i]
        R, leak = propagate_layer(layer.weights, trace.activations[i], R, stabilizer, layer.bias)
        absorbed += leak
        layers.append(R)
    return RelevanceVector(per_input=R, predicted=predicted, bias_absorbed=absorbed, layers=layers)


def write_relevance_csv(path, rows, column_names):
    """Write relevance rows as ``stock_id, predicted, bias_absorbed, <cells...>``.

    ``rows`` is an iterable of ``(stock_id, RelevanceVector)``.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stock_id", "predicted", "bias_absorbed", *column_names])
        for stock_id, rv in rows:
            if len(rv) != len(column_names):
                raise DimensionMismatchError("relevance length does not match column names")
            writer.writerow([stock_id, repr(rv.predicted), repr(rv.bias_absorbed),
                             *(repr(float(v)) for v in rv.per_input)])


def read_relevance_csv(path):
    """Inverse of :func:`write_relevance_csv`; returns (column_names, rows)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for rec in reader:
            rows.append((rec[0], RelevanceVector(
                per_input=np.array([float(v) for v in rec[3:]]),
                predicted=float(rec[1]),
                bias_absorbed=float(rec[2]),
            )))
    return header[3:], rows
