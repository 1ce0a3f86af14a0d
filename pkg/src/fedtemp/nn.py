"""Fixed-graph MLP: forward/backward with temperature-scaled softmax cross-entropy.

Parameters live in one flat vector.  Layer ``i`` with shape ``(rows, cols)``
occupies ``rows * cols`` weights (row-major, ``x @ W``) followed by ``cols``
biases.  Hidden layers use ReLU; the last layer is linear (logits).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DomainError

REFERENCE_SHAPES = ((784, 256), (256, 10))


def n_params(shapes) -> int:
    return sum(r * c + c for r, c in shapes)


@dataclass(frozen=True, eq=False)
class ModelParams:
    values: np.ndarray
    shapes: tuple
    activation: str = "relu"

    def __post_init__(self):
        shapes = tuple((int(r), int(c)) for r, c in self.shapes)
        object.__setattr__(self, "shapes", shapes)
        values = np.asarray(self.values)
        if values.ndim != 1:
            raise ConfigurationError("values must be a flat vector")
        object.__setattr__(self, "values", values)
        if not shapes:
            raise ConfigurationError("at least one layer is required")
        for (_, c), (r, _) in zip(shapes[:-1], shapes[1:]):
            if c != r:
                raise ConfigurationError(f"layer widths do not chain: {shapes}")
        if values.size != n_params(shapes):
            raise ConfigurationError(
                f"expected {n_params(shapes)} values for shapes {shapes}, got {values.size}"
            )
        if self.activation != "relu":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")
        if not np.all(np.isfinite(values)):
            raise DomainError("parameters must be finite")

    @property
    def n_in(self) -> int:
        return self.shapes[0][0]

    @property
    def n_out(self) -> int:
        return self.shapes[-1][1]

    def layers(self):
        """``[(W, b), ...]`` as views into ``values``."""
        return _split(self.values, self.shapes)

    def with_values(self, values) -> "ModelParams":
        return ModelParams(values, self.shapes, self.activation)

    def copy(self) -> "ModelParams":
        return self.with_values(self.values.copy())


def _split(flat, shapes):
    out = []
    pos = 0
    for r, c in shapes:
        W = flat[pos:pos + r * c].reshape(r, c)
        pos += r * c
        b = flat[pos:pos + c]
        pos += c
        out.append((W, b))
    return out


def init_params(shapes, stream, dtype=np.float32) -> ModelParams:
    """Fan-in scaled uniform init: every weight and bias of a layer ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    chunks = []
    for r, c in shapes:
        bound = 1.0 / np.sqrt(r)
        chunks.append(stream.uniform(-bound, bound, r * c + c))
    return ModelParams(np.concatenate(chunks).astype(dtype), tuple(shapes))


def forward(params: ModelParams, X):
    """Logits and last hidden activation for a sample (1-D) or a batch (2-D).

    For a single-layer net the "penultimate" activation is the input itself.
    """
    X = np.asarray(X)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.n_in:
        raise ConfigurationError(
            f"input width {X.shape[-1]} does not match first layer {params.n_in}"
        )
    h = X.astype(params.values.dtype, copy=False)
    layers = params.layers()
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0)
    W, b = layers[-1]
    z = h @ W + b
    if single:
        return z[0], h[0]
    return z, h


def _check_tau(tau):
    if not tau > 0:
        raise DomainError(f"temperature must be positive, got {tau}")


def _check_logits(z):
    z = np.asarray(z)
    if z.shape[-1] < 2:
        raise DomainError("need at least two classes")
    if not np.all(np.isfinite(z)):
        raise DomainError("logits must be finite")
    return z


def log_softmax(z, tau=1.0):
    _check_tau(tau)
    z = _check_logits(z) / tau
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z, tau=1.0):
    """Temperature-scaled softmax along the last axis (max-subtracted)."""
    _check_tau(tau)
    z = _check_logits(z) / tau
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _check_labels(y, C):
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.integer):
        raise DomainError("labels must be integers")
    if np.any(y < 0) or np.any(y >= C):
        raise DomainError(f"label out of range [0, {C})")
    return y


def ce_loss(z, y, tau=1.0):
    """``-log softmax(z / tau)[y]``; per-sample array when ``z`` is a batch."""
    logp = log_softmax(z, tau)
    y = _check_labels(y, logp.shape[-1])
    if logp.ndim == 1:
        return -float(logp[y])
    return -np.take_along_axis(logp, y[:, None], axis=1)[:, 0]


def ce_logit_grad(z, y, tau=1.0):
    """``(softmax(z / tau) - onehot(y)) / tau``."""
    p = softmax(z, tau)
    y = _check_labels(y, p.shape[-1])
    if p.ndim == 1:
        p[y] -= 1.0
    else:
        p[np.arange(p.shape[0]), y] -= 1.0
    return p / tau


def ce_logit_hessian(z, tau=1.0):
    """``(diag(p) - p p^T) / tau**2`` with ``p = softmax(z / tau)``; independent of the label."""
    p = softmax(np.asarray(z, dtype=np.float64), tau)
    if p.ndim != 1:
        raise DomainError("hessian is defined for a single logit vector")
    return (np.diag(p) - np.outer(p, p)) / tau**2


def mean_loss(params: ModelParams, X, y, tau=1.0) -> float:
    z, _ = forward(params, X)
    return float(np.mean(ce_loss(np.atleast_2d(z), np.atleast_1d(y), tau)))


def backward(params: ModelParams, X, y, tau=1.0) -> np.ndarray:
    """Gradient of the batch-mean temperature-scaled cross-entropy, flat like ``params.values``."""
    X = np.asarray(X)
    y = np.atleast_1d(np.asarray(y))
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[0] == 0:
        raise DomainError("empty batch")
    if X.shape[0] != y.shape[0]:
        raise ConfigurationError("features and labels disagree in length")
    if X.shape[1] != params.n_in:
        raise ConfigurationError(
            f"input width {X.shape[1]} does not match first layer {params.n_in}"
        )
    dtype = params.values.dtype
    layers = params.layers()
    acts = [X.astype(dtype, copy=False)]
    for W, b in layers[:-1]:
        acts.append(np.maximum(acts[-1] @ W + b, 0))
    W, b = layers[-1]
    z = acts[-1] @ W + b
    dz = ce_logit_grad(z, y, tau).astype(dtype, copy=False) / X.shape[0]

    grad = np.empty_like(params.values)
    gl = _split(grad, params.shapes)
    for i in range(len(layers) - 1, -1, -1):
        gW, gb = gl[i]
        np.matmul(acts[i].T, dz, out=gW)
        gb[:] = dz.sum(axis=0)
        if i:
            dz = (dz @ layers[i][0].T) * (acts[i] > 0)
    return grad


def sgd_step(params: ModelParams, grad, lr: float) -> ModelParams:
    grad = np.asarray(grad)
    if grad.shape != params.values.shape:
        raise ConfigurationError(
            f"gradient layout {grad.shape} does not match parameters {params.values.shape}"
        )
    if not lr > 0:
        raise DomainError("learning rate must be positive")
    return params.with_values(params.values - params.values.dtype.type(lr) * grad)
