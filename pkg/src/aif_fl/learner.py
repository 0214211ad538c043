"""Two-hidden-layer ReLU MLP with softmax output, trained by plain mini-batch SGD."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

LOSS_FLOOR = 1e-12


@dataclass(frozen=True)
class MlpArch:
    input_dim: int
    hidden_dims: tuple[int, int] = (64, 32)
    n_classes: int = 5

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if len(self.hidden_dims) != 2:
            raise ValueError("exactly two hidden layers are supported")
        if min(self.input_dim, self.n_classes, *self.hidden_dims) < 1:
            raise ValueError("all layer sizes must be >= 1")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.n_classes]


@dataclass(eq=False)
class MlpParams:
    """Weights ``W[i]`` have shape (fan_in, fan_out); activations are row vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def shapes(self) -> list[tuple[int, ...]]:
        return [a.shape for a in self.arrays()]


@dataclass(eq=False)
class TrainReport:
    final_params: MlpParams
    duration: float
    mean_loss: float
    epoch_losses: list[float]


def init_mlp(arch: MlpArch, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(params: MlpParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"expected {params.weights[0].shape[0]} features, got {X.shape[1]}")
    return X


def forward(params: MlpParams, X: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per input row."""
    h = _check_input(params, X)
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.maximum(h @ W + b, 0.0)
    return _softmax(h @ params.weights[-1] + params.biases[-1])


def cross_entropy(params: MlpParams, X: np.ndarray, y: np.ndarray) -> float:
    p = forward(params, X)
    return float(-np.mean(np.log(np.maximum(p[np.arange(len(y)), y], LOSS_FLOOR))))


def backprop_gradients(params: MlpParams, X: np.ndarray, y: np.ndarray) -> tuple[MlpParams, float]:
    """Exact gradients of mean cross-entropy over the batch, and that loss."""
    X = _check_input(params, X)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("batch is empty")
    acts = [X]
    h = X
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    p = _softmax(h @ params.weights[-1] + params.biases[-1])
    n = len(y)
    rows = np.arange(n)
    loss = float(-np.mean(np.log(np.maximum(p[rows, y], LOSS_FLOOR))))

    delta = p.copy()
    delta[rows, y] -= 1.0
    delta /= n
    gw: list[np.ndarray] = [None] * len(params.weights)
    gb: list[np.ndarray] = [None] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (acts[i] > 0)
    return MlpParams(gw, gb), loss


class TimingProvider:
    """Round-duration source: wall clock, or a deterministic cost model."""

    def __init__(self, synthetic: Callable[[int, int, int], float] | None = None):
        self.synthetic = synthetic

    @property
    def mode(self) -> str:
        return "measured" if self.synthetic is None else "synthetic"


def train_epochs(
    params: MlpParams,
    X: np.ndarray,
    y: np.ndarray,
    batch_size: int,
    learning_rate: float,
    epochs: int,
    timing: TimingProvider | None = None,
    seed: int = 0,
) -> TrainReport:
    """Mini-batch SGD on cross-entropy; a seeded permutation per epoch, short last batch kept."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    if n == 0:
        raise ValueError("training set is empty")
    timing = timing or TimingProvider()
    rng = np.random.default_rng(seed)
    model = params.copy()
    epoch_losses: list[float] = []
    start = time.perf_counter()
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            grads, loss = backprop_gradients(model, X[idx], y[idx])
            total += loss * len(idx)
            if learning_rate:
                for w, g in zip(model.weights, grads.weights):
                    w -= learning_rate * g
                for b, g in zip(model.biases, grads.biases):
                    b -= learning_rate * g
        epoch_losses.append(total / n)
    elapsed = time.perf_counter() - start
    duration = elapsed if timing.synthetic is None else float(timing.synthetic(n, batch_size, epochs))
    mean_loss = float(np.mean(epoch_losses)) if epoch_losses else 0.0
    return TrainReport(model, duration, mean_loss, epoch_losses)


def evaluate(params: MlpParams, X: np.ndarray, y: np.ndarray) -> float:
    """Accuracy of argmax predictions (ties to the lowest class index)."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("dataset is empty")
    return float(np.mean(np.argmax(forward(params, X), axis=1) == y))


def fedavg(models: Sequence[tuple[MlpParams, int]]) -> MlpParams:
    """Sample-count-weighted mean of client parameters."""
    if not models:
        raise ValueError("nothing to aggregate")
    shapes = models[0][0].shapes()
    for p, _ in models[1:]:
        if p.shapes() != shapes:
            raise ValueError("client models have different architectures")
    # canonical client order makes the float sums independent of list order
    models = sorted(models, key=lambda m: (m[1], b"".join(a.tobytes() for a in m[0].arrays())))
    counts = np.array([n for _, n in models], dtype=float)
    if np.any(counts < 0) or counts.sum() <= 0:
        raise ValueError("sample counts must be nonnegative with a positive total")
    w = counts / counts.sum()

    def avg(arrays: list[np.ndarray]) -> np.ndarray:
        # offsets from the first client keep identical inputs exactly fixed
        ref = arrays[0]
        return ref + np.tensordot(w, np.stack([a - ref for a in arrays]), axes=1)

    n_layers = len(models[0][0].weights)
    return MlpParams(
        [avg([p.weights[i] for p, _ in models]) for i in range(n_layers)],
        [avg([p.biases[i] for p, _ in models]) for i in range(n_layers)],
    )


def save_params(path, params: MlpParams) -> None:
    arrays = {f"a{i}": a for i, a in enumerate(params.arrays())}
    np.savez(path, **arrays)


def load_params(path) -> MlpParams:
    with np.load(path) as data:
        arrays = [data[f"a{i}"] for i in range(len(data.files))]
    return MlpParams(arrays[0::2], arrays[1::2])
