"""Dense ReLU regression network trained by backpropagation and Adam.

Weight matrices follow the ``W @ z + b`` convention: rows are fan-out,
columns are fan-in. Hidden layers use ReLU, the output layer is the
identity so that predicted returns can be negative. Everything runs in
float64.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    InvalidSpecError,
    TrainingDivergedError,
)

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu",)


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int = 1
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    @property
    def dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.output_dim]

    def validate(self, allow_no_hidden: bool = False) -> None:
        if not self.hidden_dims and not allow_no_hidden:
            raise InvalidSpecError("hidden_dims must be non-empty")
        if any(int(d) <= 0 for d in self.dims):
            raise InvalidSpecError(f"all layer widths must be positive, got {self.dims}")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpecError(f"unsupported activation {self.activation!r}")
        if self.seed < 0:
            raise InvalidSpecError("seed must be unsigned")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_adam: float = 1e-8
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise InvalidSpecError("learning_rate must be > 0")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise InvalidSpecError(f"{name} must lie in (0, 1), got {value}")
        if not self.epsilon_adam > 0:
            raise InvalidSpecError("epsilon_adam must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidSpecError("epochs and batch_size must be positive")


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray
    bias: np.ndarray


class Network:
    """Immutable stack of affine layers.

    A network built by hand may have no hidden layer at all (a plain affine
    model); :func:`init_network` always produces at least one.
    """

    def __init__(self, layers, spec: NetworkSpec | None = None):
        frozen = []
        for w, b in ((layer.weights, layer.bias) if isinstance(layer, Layer) else layer
                     for layer in layers):
            w = np.array(w, dtype=np.float64, ndmin=2)
            b = np.array(b, dtype=np.float64).reshape(-1)
            w.flags.writeable = False
            b.flags.writeable = False
            frozen.append(Layer(w, b))
        if not frozen:
            raise InvalidSpecError("a network needs at least one layer")
        self.layers: tuple[Layer, ...] = tuple(frozen)
        dims = [self.layers[0].weights.shape[1]] + [layer.weights.shape[0] for layer in self.layers]
        if spec is None:
            spec = NetworkSpec(dims[0], tuple(dims[1:-1]), dims[-1])
        self.spec = spec
        self._check()

    def _check(self) -> None:
        expected = self.spec.dims
        if len(expected) != len(self.layers) + 1:
            raise DimensionMismatchError(
                f"spec has {len(expected) - 1} layers, network has {len(self.layers)}")
        for i, layer in enumerate(self.layers):
            shape = (expected[i + 1], expected[i])
            if layer.weights.shape != shape:
                raise DimensionMismatchError(
                    f"layer {i}: weight shape {layer.weights.shape}, expected {shape}")
            if layer.bias.shape != (expected[i + 1],):
                raise DimensionMismatchError(
                    f"layer {i}: bias length {layer.bias.shape[0]}, expected {expected[i + 1]}")
            if not (np.all(np.isfinite(layer.weights)) and np.all(np.isfinite(layer.bias))):
                raise InvalidSpecError(f"layer {i} has non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    @property
    def output_dim(self) -> int:
        return self.spec.output_dim

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def weights(self) -> list[np.ndarray]:
        return [layer.weights for layer in self.layers]

    @property
    def biases(self) -> list[np.ndarray]:
        return [layer.bias for layer in self.layers]

    def with_layers(self, layers) -> "Network":
        return Network(layers, self.spec)

    def equals(self, other: "Network") -> bool:
        """Bitwise parameter equality."""
        if self.n_layers != other.n_layers:
            return False
        return all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        spec = asdict(self.spec)
        spec["hidden_dims"] = list(spec["hidden_dims"])
        return {
            "spec": spec,
            "layers": [{"w": layer.weights.tolist(), "b": layer.bias.tolist()}
                       for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Network":
        spec = NetworkSpec(**doc["spec"])
        spec.validate(allow_no_hidden=True)
        return cls([(layer["w"], layer["b"]) for layer in doc["layers"]], spec)

    def save(self, path) -> None:
        # json writes floats with repr(), the shortest round-trip decimal
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Network":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __repr__(self):
        return f"Network(dims={self.spec.dims})"


@dataclass(frozen=True)
class ForwardTrace:
    """Per-layer record of one forward pass.

    ``activations[l]`` is the input fed to layer ``l`` (so ``activations[0]``
    is x itself) and ``pre_activations[l]`` is ``W[l] @ activations[l] + b[l]``.
    """

    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]

    @property
    def outputs(self) -> np.ndarray:
        return self.pre_activations[-1]

    @property
    def output(self) -> float:
        return float(self.pre_activations[-1][0])


@dataclass
class Gradients:
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    """Subgradient of ReLU; defined as 0 at exactly 0."""
    return (x > 0).astype(np.float64)


def init_network(spec: NetworkSpec) -> Network:
    """He-uniform weights (bound sqrt(6 / fan_in)) and zero biases."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    dims = spec.dims
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        layers.append((rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return Network(layers, spec)


def forward(net: Network, x) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise DimensionMismatchError(f"expected input of length {net.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    pre, acts = [], [x]
    a = x
    last = net.n_layers - 1
    for i, layer in enumerate(net.layers):
        z = layer.weights @ a + layer.bias
        pre.append(z)
        if i < last:
            a = relu(z)
            acts.append(a)
    return ForwardTrace(pre, acts)


def predict(net: Network, X) -> np.ndarray:
    """Batch forward pass; returns shape (n,) for scalar-output networks."""
    a = np.asarray(X, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != net.input_dim:
        raise DimensionMismatchError(f"expected (n, {net.input_dim}) inputs, got {a.shape}")
    last = net.n_layers - 1
    for i, layer in enumerate(net.layers):
        a = a @ layer.weights.T + layer.bias
        if i < last:
            a = np.maximum(a, 0.0)
    return a[:, 0] if net.output_dim == 1 else a


def loss_mse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise EmptyInputError("loss_mse needs at least one pair")
    if p.shape != t.shape:
        raise DimensionMismatchError(f"length mismatch: {p.size} vs {t.size}")
    d = p - t
    return float(np.dot(d, d) / d.size)


def backward(net: Network, trace: ForwardTrace, target) -> Gradients:
    """Gradient of the per-sample squared error ``sum((f(x) - target)^2)``."""
    if len(trace.pre_activations) != net.n_layers or len(trace.activations) != net.n_layers:
        raise DimensionMismatchError("trace does not belong to this network")
    for layer, a, z in zip(net.layers, trace.activations, trace.pre_activations):
        if a.shape != (layer.weights.shape[1],) or z.shape != (layer.weights.shape[0],):
            raise DimensionMismatchError("trace shapes do not match network layers")
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if target.shape != (net.output_dim,):
        raise DimensionMismatchError(f"target must have {net.output_dim} entries")

    grads_w = [None] * net.n_layers
    grads_b = [None] * net.n_layers
    delta = 2.0 * (trace.outputs - target)
    for i in range(net.n_layers - 1, -1, -1):
        grads_w[i] = np.outer(delta, trace.activations[i])
        grads_b[i] = delta.copy()
        if i > 0:
            delta = (net.layers[i].weights.T @ delta) * relu_grad(trace.pre_activations[i - 1])
    return Gradients(grads_w, grads_b)


class _FlatParams:
    """All parameters in one contiguous vector with per-layer views.

    Adam then runs as a handful of vector operations per step instead of a
    loop over layers.
    """

    def __init__(self, net: Network):
        dims = net.spec.dims
        sizes = [o * i + o for i, o in zip(dims[:-1], dims[1:])]
        self.theta = np.empty(sum(sizes))
        self.grad = np.zeros_like(self.theta)
        self.w, self.b, self.gw, self.gb = [], [], [], []
        offset = 0
        for layer in net.layers:
            o, i = layer.weights.shape
            for store, gstore, n, shape in ((self.w, self.gw, o * i, (o, i)), (self.b, self.gb, o, (o,))):
                store.append(self.theta[offset:offset + n].reshape(shape))
                gstore.append(self.grad[offset:offset + n].reshape(shape))
                offset += n
        for dst, layer in zip(self.w, net.layers):
            dst[...] = layer.weights
        for dst, layer in zip(self.b, net.layers):
            dst[...] = layer.bias

    def layers(self):
        return [(w.copy(), b.copy()) for w, b in zip(self.w, self.b)]


class Adam:
    """Adam on a flat parameter vector, updated in place."""

    def __init__(self, n: int, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self._buf = np.empty(n)

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        b1, b2, buf = self.beta1, self.beta2, self._buf
        self.m *= b1
        self.m += (1.0 - b1) * grad
        np.multiply(grad, grad, out=buf)
        buf *= 1.0 - b2
        self.v *= b2
        self.v += buf
        # theta -= lr * m_hat / (sqrt(v_hat) + eps)
        np.sqrt(self.v, out=buf)
        buf *= 1.0 / np.sqrt(1.0 - b2 ** self.t)
        buf += self.eps
        np.divide(self.m, buf, out=buf)
        buf *= self.lr / (1.0 - b1 ** self.t)
        theta -= buf


def train(net: Network, X, y, config: TrainConfig | None = None) -> Network:
    """Fit ``net`` to (X, y) with shuffled mini-batch Adam on the MSE loss.

    The input network is left untouched; a new Network is returned. Runs
    exactly ``config.epochs`` passes with no early stopping.
    """
    config = config or TrainConfig()
    config.validate()
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise EmptyInputError("train needs at least one sample")
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise DimensionMismatchError(f"expected (n, {net.input_dim}) inputs, got {X.shape}")
    y = np.asarray(y, dtype=np.float64).reshape(len(X), -1)
    if y.shape[1] != net.output_dim:
        raise DimensionMismatchError(f"targets must have {net.output_dim} columns")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data contains non-finite values")

    params = _FlatParams(net)
    opt = Adam(params.theta.size, config.learning_rate, config.beta1, config.beta2,
               config.epsilon_adam)
    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    last = net.n_layers - 1
    W, B, GW, GB = params.w, params.b, params.gw, params.gb

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sse = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            a = X[idx]
            acts = [a]
            for i in range(last + 1):
                z = a @ W[i].T
                z += B[i]
                if i < last:
                    np.maximum(z, 0.0, out=z)
                    acts.append(z)
                a = z
            resid = a - y[idx]
            batch_sse = float(np.vdot(resid, resid))
            if not np.isfinite(batch_sse):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch starting at {start}; "
                    f"try a smaller learning rate (currently {config.learning_rate})")
            sse += batch_sse
            delta = resid * (2.0 / len(idx))
            for i in range(last, -1, -1):
                np.matmul(delta.T, acts[i], out=GW[i])
                np.sum(delta, axis=0, out=GB[i])
                if i > 0:
                    delta = delta @ W[i]
                    # activations are post-ReLU, so a > 0 exactly where pre-activation > 0
                    delta *= acts[i] > 0
            opt.step(params.theta, params.grad)
        logger.debug("epoch %d train mse %.6g", epoch, sse / n)

    if not np.all(np.isfinite(params.theta)):
        raise TrainingDivergedError("parameters became non-finite during training")
    return Network(params.layers(), net.spec)
