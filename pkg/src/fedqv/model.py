"""A small MLP classifier trained with plain mini-batch SGD on flat parameters.

Parameter layout, layer by layer: the weight matrix of shape
``(n_in, n_out)`` flattened row-major, followed by the ``n_out`` biases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_vector


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or activation."""


@dataclass(frozen=True)
class ModelSpec:
    layer_sizes: tuple
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("layer_sizes needs >= 2 positive entries")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def dim(self) -> int:
        return sum(a * b + b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))


@dataclass(frozen=True)
class TrainConfig:
    local_epochs: int = 5
    learning_rate: float = 0.01
    batch_size: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be >= 0")
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValueError("learning_rate must be finite and >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def unpack(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of ``params`` as a list of ``(W, b)`` pairs."""
    if params.shape != (spec.dim,):
        raise ValueError(f"expected {spec.dim} parameters, got {params.shape}")
    layers, pos = [], 0
    for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        w = params[pos:pos + n_in * n_out].reshape(n_in, n_out)
        pos += n_in * n_out
        b = params[pos:pos + n_out]
        pos += n_out
        layers.append((w, b))
    return layers


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.dim)
    for w, _ in unpack(spec, params):
        limit = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        w[...] = rng.uniform(-limit, limit, size=w.shape)
    return params


def _forward(spec, layers, x):
    acts = [x]
    h = x
    last = len(layers) - 1
    # overflow is reported by the callers as DivergenceError, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for i, (w, b) in enumerate(layers):
            h = h @ w + b
            if i < last and spec.activation == "relu":
                h = np.maximum(h, 0.0)
            acts.append(h)
    return acts


def logits(spec: ModelSpec, params, features) -> np.ndarray:
    params = as_vector(params)
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return _forward(spec, unpack(spec, params), x)[-1]


def predict(spec: ModelSpec, params, features) -> np.ndarray:
    # argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(logits(spec, params, features), axis=1)


def loss_and_grad(spec: ModelSpec, params, batch) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over ``batch = (features, labels)`` and its gradient."""
    params = as_vector(params)
    x, y = batch
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("batch must be non-empty")
    layers = unpack(spec, params)
    acts = _forward(spec, layers, x)
    z = acts[-1]
    if not np.all(np.isfinite(z)):
        raise DivergenceError("non-finite logits")
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(n), y]))

    delta = np.exp(z - log_norm[:, None])
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grad = np.empty_like(params)
    grads = unpack(spec, grad)
    for i in range(len(layers) - 1, -1, -1):
        gw, gb = grads[i]
        gw[...] = acts[i].T @ delta
        gb[...] = delta.sum(axis=0)
        if i:
            delta = delta @ layers[i][0].T
            if spec.activation == "relu":
                delta = delta * (acts[i] > 0)
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise DivergenceError("non-finite loss or gradient")
    return loss, grad


def local_train(spec: ModelSpec, start, data, cfg: TrainConfig,
                grad_mask: np.ndarray | None = None) -> np.ndarray:
    """``cfg.local_epochs`` epochs of shuffled mini-batch SGD from ``start``.

    ``grad_mask`` (0/1 per coordinate) projects every step onto a coordinate
    subset; it is used by the Neurotoxin attack.
    """
    params = np.array(as_vector(start), copy=True)
    x, y = data.features, data.labels
    n = len(data)
    if n == 0:
        raise ValueError("local data must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    bs = cfg.batch_size
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, bs):
            idx = order[lo:lo + bs]
            _, grad = loss_and_grad(spec, params, (x[idx], y[idx]))
            if grad_mask is not None:
                grad = grad * grad_mask
            params -= cfg.learning_rate * grad
    return params


def mean_loss(spec: ModelSpec, params, data) -> float:
    """Mean cross-entropy on ``data`` (forward pass only)."""
    z = logits(spec, params, data.features)
    if not np.all(np.isfinite(z)):
        raise DivergenceError("non-finite logits")
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(log_norm - z[np.arange(len(data)), data.labels]))


def evaluate(spec: ModelSpec, params, testset) -> float:
    """Top-1 accuracy on ``testset``."""
    if len(testset) == 0:
        raise ValueError("testset must be non-empty")
    return float(np.mean(predict(spec, params, testset.features) == testset.labels))
