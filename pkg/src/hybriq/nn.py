"""Minimal dense feed-forward network substrate.

Float64 parameters, ReLU or identity activations, mean-squared-error and
softmax cross-entropy losses, plain mini-batch gradient descent. Everything
is seeded and single-threaded so training is bit-reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FrozenNetwork, PersistenceError, ShapeMismatch

RELU = "relu"
IDENTITY = "identity"
_ACT_CODES = {RELU: 0, IDENTITY: 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


@dataclass
class TrainConfig:
    loss: str = "mse"  # "mse" | "cross_entropy"
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.loss not in ("mse", "cross_entropy"):
            raise ValueError(f"unknown loss {self.loss!r}")


class FeedForwardNet:
    def __init__(self, sizes, activations=None, seed: int = 0):
        if len(sizes) < 2:
            raise ShapeMismatch("need at least an input and an output layer")
        self.sizes = [int(s) for s in sizes]
        n_layers = len(self.sizes) - 1
        if activations is None:
            activations = [RELU] * (n_layers - 1) + [IDENTITY]
        if len(activations) != n_layers:
            raise ShapeMismatch("one activation per layer required")
        for a in activations:
            if a not in _ACT_CODES:
                raise ShapeMismatch(f"unknown activation {a!r}")
        self.activations = list(activations)
        self.frozen = False
        rng = np.random.Generator(np.random.PCG64(seed))
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes, self.sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    def freeze(self) -> None:
        self.frozen = True

    def unfreeze(self) -> None:
        self.frozen = False

    # -- forward / backward --------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        out, _ = self._forward_cache(x.reshape(1, -1) if single else x)
        return out[0] if single else out

    def _forward_cache(self, X: np.ndarray):
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ShapeMismatch(
                f"input shape {X.shape} incompatible with input dim {self.input_dim}"
            )
        acts = [X]
        pre = []
        h = X
        for W, b, act in zip(self.weights, self.biases, self.activations):
            z = h @ W + b
            pre.append(z)
            h = np.maximum(z, 0.0) if act == RELU else z
            acts.append(h)
        return h, (acts, pre)

    def _backward(self, cache, grad_out: np.ndarray):
        """Backpropagate an upstream gradient on the output.

        Returns (per-layer (dW, db) list, gradient wrt the input batch).
        """
        acts, pre = cache
        grads = [None] * len(self.weights)
        g = np.asarray(grad_out, dtype=np.float64)
        for li in range(len(self.weights) - 1, -1, -1):
            if self.activations[li] == RELU:
                g = g * (pre[li] > 0.0)
            grads[li] = (acts[li].T @ g, g.sum(axis=0))
            g = g @ self.weights[li].T
        return grads, g

    def apply_gradients(self, grads, learning_rate: float) -> None:
        if self.frozen:
            raise FrozenNetwork("cannot update a frozen network")
        for (dW, db), W, b in zip(grads, self.weights, self.biases):
            W -= learning_rate * dW
            b -= learning_rate * db

    # -- introspection --------------------------------------------------------

    def parameter_bytes(self) -> bytes:
        """Concatenated raw parameter bytes, for byte-equality checks."""
        return b"".join(
            [w.tobytes() for w in self.weights] + [b.tobytes() for b in self.biases]
        )

    def copy(self) -> "FeedForwardNet":
        clone = FeedForwardNet(self.sizes, self.activations, seed=0)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        clone.frozen = self.frozen
        return clone

    # -- persistence -----------------------------------------------------------

    MAGIC = b"HFFN"
    VERSION = 1

    def save(self, path) -> None:
        parts = [
            self.MAGIC,
            struct.pack("<IIB", self.VERSION, len(self.sizes), int(self.frozen)),
            struct.pack(f"<{len(self.sizes)}I", *self.sizes),
            bytes(_ACT_CODES[a] for a in self.activations),
        ]
        for W, b in zip(self.weights, self.biases):
            parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))

    @classmethod
    def load(cls, path) -> "FeedForwardNet":
        with open(path, "rb") as fh:
            buf = fh.read()
        if buf[:4] != cls.MAGIC:
            raise PersistenceError(f"{path}: not a model file")
        version, n_sizes, frozen = struct.unpack_from("<IIB", buf, 4)
        if version != cls.VERSION:
            raise PersistenceError(f"{path}: unsupported model version {version}")
        offset = 4 + struct.calcsize("<IIB")
        sizes = struct.unpack_from(f"<{n_sizes}I", buf, offset)
        offset += 4 * n_sizes
        acts = [_ACT_NAMES[c] for c in buf[offset : offset + n_sizes - 1]]
        offset += n_sizes - 1
        net = cls(sizes, acts, seed=0)
        for li, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            n = fan_in * fan_out * 8
            net.weights[li] = (
                np.frombuffer(buf[offset : offset + n], dtype="<f8")
                .reshape(fan_in, fan_out)
                .copy()
            )
            offset += n
            n = fan_out * 8
            net.biases[li] = np.frombuffer(buf[offset : offset + n], dtype="<f8").copy()
            offset += n
        net.frozen = bool(frozen)
        return net


# -- losses -------------------------------------------------------------------


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean over every element; returns (loss, d loss / d pred)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray):
    """Softmax cross entropy against integer class labels."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(
            f"logits {logits.shape} incompatible with labels {labels.shape}"
        )
    probs = softmax(logits)
    n = logits.shape[0]
    picked = probs[np.arange(n), labels.astype(np.int64)]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    grad = probs
    grad[np.arange(n), labels.astype(np.int64)] -= 1.0
    return loss, grad / n


def _loss_fn(name: str):
    return mse_loss if name == "mse" else cross_entropy_loss


# -- training -------------------------------------------------------------------


def train(net: FeedForwardNet, inputs, targets, config: TrainConfig):
    """Mini-batch gradient descent; returns the per-epoch mean loss curve."""
    if net.frozen:
        raise FrozenNetwork("cannot train a frozen network")
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if config.loss == "mse":
        Y = np.asarray(targets, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y.reshape(-1, 1)
        if Y.shape != (X.shape[0], net.output_dim):
            raise ShapeMismatch(f"targets {Y.shape} vs output dim {net.output_dim}")
    else:
        Y = np.asarray(targets).astype(np.int64)
        if Y.ndim != 1 or Y.shape[0] != X.shape[0]:
            raise ShapeMismatch("cross entropy expects one integer label per row")
        if Y.min() < 0 or Y.max() >= net.output_dim:
            raise ShapeMismatch("label outside the output range")
    loss = _loss_fn(config.loss)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    n = X.shape[0]
    batch = max(1, min(config.batch_size, n))
    curve = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            out, cache = net._forward_cache(X[idx])
            value, grad = loss(out, Y[idx])
            grads, _ = net._backward(cache, grad)
            net.apply_gradients(grads, config.learning_rate)
            epoch_losses.append(value)
        curve.append(float(np.mean(epoch_losses)))
    return curve


def gradient_check(net: FeedForwardNet, inputs, targets, loss: str = "mse",
                   tolerance: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Step 1e-5; the relative-error denominator is floored at 1e-3 so that
    coordinates whose true gradient is essentially zero do not dominate
    through finite-difference roundoff.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be > 0")
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if loss == "mse":
        Y = np.asarray(targets, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y.reshape(1, -1) if Y.shape[0] == net.output_dim else Y.reshape(-1, 1)
    else:
        Y = np.asarray(targets).astype(np.int64)
    loss_fn = _loss_fn(loss)

    out, cache = net._forward_cache(X)
    _, grad_out = loss_fn(out, Y)
    analytic, _ = net._backward(cache, grad_out)

    def loss_at() -> float:
        value, _ = loss_fn(net._forward_cache(X)[0], Y)
        return value

    h = 1e-5
    worst = 0.0
    for li in range(len(net.weights)):
        for kind, param in (("w", net.weights[li]), ("b", net.biases[li])):
            ana = analytic[li][0] if kind == "w" else analytic[li][1]
            flat = param.reshape(-1)
            ana_flat = np.asarray(ana).reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                plus = loss_at()
                flat[i] = orig - h
                minus = loss_at()
                flat[i] = orig
                numeric = (plus - minus) / (2.0 * h)
                denom = max(abs(ana_flat[i]), abs(numeric), 1e-3)
                worst = max(worst, abs(ana_flat[i] - numeric) / denom)
    return worst
