"""Small differentiable classifiers with NLL loss and analytic gradients.

Two model kinds are supported:

* ``softmax_linear``: ``logits = x @ W.T + b`` with ``W`` of shape (C, d).
* ``mlp1``: ``h = tanh(x @ W1.T + b1)``, ``logits = h @ W2.T + b2``.

Flat parameter order is ``[W1, b1, W2, b2]`` (weights row-major), so the
last layer always occupies the tail of :func:`full_grad`.  All losses and
gradients use the mean over the batch.
"""
from dataclasses import dataclass, field

import numpy as np

KINDS = ("softmax_linear", "mlp1")


class InvalidInput(ValueError):
    pass


@dataclass
class ModelParams:
    kind: str
    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    W1: np.ndarray = field(default=None, repr=False)
    b1: np.ndarray = field(default=None, repr=False)
    W2: np.ndarray = field(default=None, repr=False)
    b2: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown model kind {self.kind!r}")
        d, c, h = self.input_dim, self.num_classes, self.hidden_dim
        if d < 1 or c < 2:
            raise InvalidInput("input_dim must be >= 1 and num_classes >= 2")
        if self.kind == "mlp1":
            if h < 1:
                raise InvalidInput("mlp1 needs hidden_dim >= 1")
            _check_shape(self.W1, (h, d), "W1")
            _check_shape(self.b1, (h,), "b1")
            _check_shape(self.W2, (c, h), "W2")
        else:
            self.hidden_dim = 0
            self.W1 = self.b1 = None
            _check_shape(self.W2, (c, d), "W2")
        _check_shape(self.b2, (c,), "b2")

    @property
    def feature_dim(self):
        return self.hidden_dim if self.kind == "mlp1" else self.input_dim

    @property
    def last_layer_size(self):
        return self.num_classes * (self.feature_dim + 1)

    @property
    def size(self):
        return sum(a.size for a in self.arrays())

    def arrays(self):
        if self.kind == "mlp1":
            return [self.W1, self.b1, self.W2, self.b2]
        return [self.W2, self.b2]

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec):
        """New params of the same shape filled from ``vec``."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise InvalidInput(f"expected flat vector of length {self.size}, got {vec.shape}")
        out, pos = [], 0
        for a in self.arrays():
            out.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        if self.kind == "mlp1":
            W1, b1, W2, b2 = out
        else:
            W1 = b1 = None
            W2, b2 = out
        return ModelParams(self.kind, self.input_dim, self.num_classes, self.hidden_dim, W1, b1, W2, b2)

    def copy(self):
        return self.with_flat(self.flat())


def _check_shape(a, shape, name):
    if a is None:
        raise InvalidInput(f"{name} missing")
    a = np.asarray(a)
    if a.shape != shape:
        raise InvalidInput(f"{name} has shape {a.shape}, expected {shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} has non-finite entries")


def init_params(kind, input_dim, num_classes, hidden_dim=32, seed=0, scale=None):
    """Random initialisation (zero biases, Glorot-ish weights)."""
    rng = np.random.default_rng(seed)
    if kind == "mlp1":
        s1 = scale if scale is not None else 1.0 / np.sqrt(input_dim)
        s2 = scale if scale is not None else 1.0 / np.sqrt(hidden_dim)
        return ModelParams(kind, input_dim, num_classes, hidden_dim,
                           W1=rng.normal(0.0, s1, (hidden_dim, input_dim)),
                           b1=np.zeros(hidden_dim),
                           W2=rng.normal(0.0, s2, (num_classes, hidden_dim)),
                           b2=np.zeros(num_classes))
    s = scale if scale is not None else 0.01
    return ModelParams(kind, input_dim, num_classes,
                       W2=rng.normal(0.0, s, (num_classes, input_dim)),
                       b2=np.zeros(num_classes))


def zero_params(kind, input_dim, num_classes, hidden_dim=0):
    return init_params(kind, input_dim, num_classes, hidden_dim=hidden_dim or 1, scale=0.0)


def _check_batch(params, X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[0] == 0:
        raise InvalidInput("empty batch")
    if X.shape[1] != params.input_dim:
        raise InvalidInput(f"features have dim {X.shape[1]}, model expects {params.input_dim}")
    y = y.reshape(-1).astype(np.int64)
    if y.shape[0] != X.shape[0]:
        raise InvalidInput("features and labels differ in length")
    if y.min() < 0 or y.max() >= params.num_classes:
        raise InvalidInput("label out of range")
    return X, y


def features(params, X):
    """Input of the last layer: ``X`` itself or the tanh hidden layer."""
    if params.kind == "mlp1":
        return np.tanh(X @ params.W1.T + params.b1)
    return X


def logits(params, X):
    return features(params, X) @ params.W2.T + params.b2


def log_softmax(z):
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def softmax_delta(params, X, y):
    """(features, softmax(logits) - onehot(y)) for every row."""
    F = features(params, X)
    z = F @ params.W2.T + params.b2
    P = np.exp(log_softmax(z))
    P[np.arange(len(y)), y] -= 1.0
    return F, P


def per_example_nll(params, X, y):
    X, y = _check_batch(params, X, y)
    return -log_softmax(logits(params, X))[np.arange(len(y)), y]


def nll_loss(params, X, y):
    """Mean negative log-likelihood of the true class."""
    return float(per_example_nll(params, X, y).mean())


def last_layer_grad(params, X, y):
    X, y = _check_batch(params, X, y)
    F, delta = softmax_delta(params, X, y)
    n = len(y)
    return np.concatenate([(delta.T @ F).ravel(), delta.sum(axis=0)]) / n


def weighted_full_grad(params, X, y, coef):
    """Gradient of ``sum_i coef_i * nll_i`` over all parameters.

    :func:`full_grad` is this with unit coefficients divided by ``n``; the
    trainer divides by the weight sum instead.
    """
    F, delta = softmax_delta(params, X, y)
    delta = delta * coef[:, None]
    gW2 = delta.T @ F
    gb2 = delta.sum(axis=0)
    if params.kind != "mlp1":
        return np.concatenate([gW2.ravel(), gb2])
    dH = (delta @ params.W2) * (1.0 - F * F)
    gW1 = dH.T @ X
    gb1 = dH.sum(axis=0)
    return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])


def full_grad(params, X, y):
    X, y = _check_batch(params, X, y)
    n = len(y)
    return weighted_full_grad(params, X, y, np.ones(n)) / n


def last_layer_slice(params):
    """Slice of the flat parameter vector holding the last layer."""
    return slice(params.size - params.last_layer_size, params.size)
