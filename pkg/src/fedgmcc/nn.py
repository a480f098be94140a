"""Small fixed-architecture MLPs on flat weight vectors.

Every model is a ReLU MLP with a softmax head. Weights live in one flat
float64 array so that weight-space geometry (curves, averages, distances)
is plain vector arithmetic. Layer ``i`` occupies a contiguous slice holding
its ``(out, in)`` matrix in row-major order followed by its bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Input or weight dimensions do not match the architecture."""


@dataclass(frozen=True)
class ModelArch:
    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if sizes[-1] < 2:
            raise ValueError("output layer needs at least 2 classes")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [(o, i) for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:])]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.shapes)

    def init(self, seed: int) -> np.ndarray:
        """Per-layer uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
        rng = np.random.default_rng(seed)
        parts = []
        for out_dim, in_dim in self.shapes:
            bound = 1.0 / np.sqrt(in_dim)
            parts.append(rng.uniform(-bound, bound, size=out_dim * in_dim + out_dim))
        return np.concatenate(parts)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n_params)


def unflatten(arch: ModelArch, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``(W, b)`` per layer into the flat vector (no copies)."""
    w = check_weights(arch, w)
    layers = []
    pos = 0
    for out_dim, in_dim in arch.shapes:
        W = w[pos:pos + out_dim * in_dim].reshape(out_dim, in_dim)
        pos += out_dim * in_dim
        b = w[pos:pos + out_dim]
        pos += out_dim
        layers.append((W, b))
    return layers


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in layers])


def check_weights(arch: ModelArch, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != arch.n_params:
        raise ShapeError(f"expected {arch.n_params} weights, got shape {w.shape}")
    return w


def check_inputs(arch: ModelArch, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ShapeError(f"expected inputs with {arch.input_dim} columns, got shape {x.shape}")
    if x.shape[0] < 1:
        raise ShapeError("empty input batch")
    return x


def check_labels(arch: ModelArch, x: np.ndarray, y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise ShapeError(f"{x.shape[0]} inputs but labels of shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= arch.n_classes):
        raise ShapeError(f"labels must lie in [0, {arch.n_classes})")
    return y.astype(np.int64, copy=False)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(layers, x):
    """Return output probabilities and the cached layer inputs/pre-activations."""
    acts = [x]
    pres = []
    a = x
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        z = a @ W.T + b
        pres.append(z)
        if i < last:
            a = np.maximum(z, 0.0)
            acts.append(a)
    return softmax(pres[-1]), acts, pres


def _backward(layers, acts, pres, dlogits) -> np.ndarray:
    grads = []
    delta = dlogits
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads.append((delta.T @ acts[i], delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ W) * (pres[i - 1] > 0)
    return flatten(grads[::-1])


def forward(arch: ModelArch, w, x) -> np.ndarray:
    """Row-stochastic class probabilities for each input row."""
    probs, _, _ = _forward(unflatten(arch, w), check_inputs(arch, x))
    return probs


def predict(arch: ModelArch, w, x) -> np.ndarray:
    return forward(arch, w, x).argmax(axis=1)


def accuracy(arch: ModelArch, w, x, y) -> float:
    x = check_inputs(arch, x)
    y = check_labels(arch, x, y)
    return float(np.mean(predict(arch, w, x) == y))


def cross_entropy_loss(arch: ModelArch, w, x, y) -> float:
    x = check_inputs(arch, x)
    y = check_labels(arch, x, y)
    p = forward(arch, w, x)
    return float(-np.mean(np.log(np.maximum(p[np.arange(len(y)), y], LOG_FLOOR))))


def mse_output_loss(arch: ModelArch, w_a, w_b, probe) -> float:
    """Mean over probe rows of the squared distance between the two output vectors."""
    probe = check_inputs(arch, probe)
    d = forward(arch, w_a, probe) - forward(arch, w_b, probe)
    return float(np.mean(np.sum(d * d, axis=1)))


def softmax_vjp(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. probabilities back to the logits."""
    return p * (g - np.sum(p * g, axis=1, keepdims=True))


def grad_loss(arch: ModelArch, w, x, y=None, kind: str = "ce", target=None) -> np.ndarray:
    """Gradient of a loss w.r.t. all weights.

    ``kind="ce"`` is mean cross-entropy against labels ``y``. ``kind="mse"``
    is the output-space MSE between ``w`` and fixed ``target`` outputs on
    inputs ``x``; ``target`` is either a weight vector or an ``(n, C)`` array
    of probabilities.
    """
    layers = unflatten(arch, w)
    x = check_inputs(arch, x)
    p, acts, pres = _forward(layers, x)
    n = x.shape[0]
    if kind == "ce":
        y = check_labels(arch, x, y)
        dlogits = _ce_dlogits(p, y)
    elif kind == "mse":
        if target is None:
            raise ValueError("mse gradient needs target weights or outputs")
        t = np.asarray(target, dtype=np.float64)
        if t.ndim == 1:
            t = forward(arch, t, x)
        if t.shape != p.shape:
            raise ShapeError(f"target outputs {t.shape} vs model outputs {p.shape}")
        dlogits = softmax_vjp(p, 2.0 * (p - t) / n)
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return _backward(layers, acts, pres, dlogits)


def _ce_dlogits(p, y):
    """Logit gradient of the floored mean cross-entropy.

    Rows whose true-class probability sits below the log floor contribute a
    constant to the loss, so their gradient is zero.
    """
    n = len(y)
    idx = np.arange(n)
    d = p.copy()
    d[idx, y] -= 1.0
    d[p[idx, y] < LOG_FLOOR] = 0.0
    return d / n


def loss_and_grad_ce(arch: ModelArch, w, x, y) -> tuple[float, np.ndarray]:
    layers = unflatten(arch, w)
    p, acts, pres = _forward(layers, x)
    idx = np.arange(len(y))
    loss = float(-np.mean(np.log(np.maximum(p[idx, y], LOG_FLOOR))))
    return loss, _backward(layers, acts, pres, _ce_dlogits(p, y))


def sgd_train(
    arch: ModelArch,
    w0,
    x,
    y,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    proximal: tuple[float, np.ndarray] | None = None,
) -> np.ndarray:
    """Mini-batch SGD on mean cross-entropy.

    ``proximal=(mu, anchor)`` adds ``mu * ||w - anchor||^2`` to the objective;
    each step is a proximal-gradient step on that term.
    Batches come from a seeded per-epoch shuffle; the last short batch is kept.
    """
    x = check_inputs(arch, x)
    y = check_labels(arch, x, y)
    w = check_weights(arch, w0).copy()
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    if proximal is not None:
        mu, anchor = proximal
        if mu < 0:
            raise ValueError("proximal mu must be non-negative")
        anchor = check_weights(arch, anchor)
    rng = np.random.default_rng(seed)
    n = x.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            _, g = loss_and_grad_ce(arch, w, x[idx], y[idx])
            if proximal is not None and mu > 0:
                # the quadratic term is taken implicitly so huge mu stays stable
                w = (w - lr * g + 2.0 * lr * mu * anchor) / (1.0 + 2.0 * lr * mu)
            else:
                w -= lr * g
    return w
