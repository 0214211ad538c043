"""Seeded radial-basis-function stream with drifting centroids.

Each sample picks a centroid with probability proportional to its weight and
offsets the centroid center by ``r * u`` (``u`` a uniform unit vector,
``r ~ |Normal(0, std_dev)|``). After every sample all centers move by
``drift_speed`` along their own unit drift direction.

Every sample consumes exactly one ``standard_normal(n_features + 2)`` block
from the sampling generator, so drawing a batch advances the generator the
same way as drawing its samples one at a time. Centers are kept in closed
form (base + draws * speed * direction) for the same reason.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr


@dataclass(frozen=True)
class RbfParams:
    n_features: int = 10
    n_classes: int = 5
    n_centroids: int = 50
    drift_speed: float = 0.0
    model_seed: int = 0
    sample_seed: int = 0

    def __post_init__(self):
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.n_centroids < self.n_classes:
            raise ValueError("n_centroids must be >= n_classes")
        if self.drift_speed < 0:
            raise ValueError("drift_speed must be nonnegative")


@dataclass(frozen=True, eq=False)
class Centroid:
    center: np.ndarray
    class_label: int
    std_dev: float
    weight: float
    drift_direction: np.ndarray


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int


@dataclass(eq=False)
class StreamState:
    params: RbfParams
    base_centers: np.ndarray  # (n_centroids, n_features)
    labels: np.ndarray
    std_devs: np.ndarray
    weights: np.ndarray
    directions: np.ndarray
    rng_sample: np.random.Generator
    draws: int = 0
    _cum_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._cum_weights = np.cumsum(self.weights) / self.weights.sum()

    def centers_at(self, draws: int | np.ndarray) -> np.ndarray:
        offset = np.asarray(draws, dtype=float)[..., None, None] * self.params.drift_speed
        return self.base_centers + offset * self.directions

    @property
    def centers(self) -> np.ndarray:
        return self.centers_at(self.draws)

    @property
    def centroids(self) -> list[Centroid]:
        centers = self.centers
        return [
            Centroid(centers[i].copy(), int(self.labels[i]), float(self.std_devs[i]), float(self.weights[i]), self.directions[i].copy())
            for i in range(len(self.labels))
        ]


def new_stream(params: RbfParams) -> StreamState:
    rng = np.random.default_rng(params.model_seed)
    k, f = params.n_centroids, params.n_features
    centers = rng.uniform(0.0, 1.0, size=(k, f))
    labels = np.empty(k, dtype=np.int64)
    labels[: params.n_classes] = np.arange(params.n_classes)
    labels[params.n_classes:] = rng.integers(0, params.n_classes, size=k - params.n_classes)
    std_devs = rng.uniform(0.01, 0.1, size=k)
    weights = 1.0 - rng.random(size=k)  # in (0, 1]
    directions = rng.standard_normal((k, f))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    rng_sample = np.random.default_rng([params.sample_seed, 1])
    return StreamState(params, centers, labels, std_devs, weights, directions, rng_sample)


def _materialize(state: StreamState, z: np.ndarray, draw_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u0 = ndtr(z[:, 0])
    which = np.minimum(np.searchsorted(state._cum_weights, u0, side="right"), len(state.labels) - 1)
    radius = np.abs(z[:, 1]) * state.std_devs[which]
    direction = z[:, 2:]
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    direction = direction / np.where(norms > 0, norms, 1.0)
    centers = state.base_centers[which] + (draw_idx.astype(float) * state.params.drift_speed)[:, None] * state.directions[which]
    return centers + radius[:, None] * direction, state.labels[which]


def draw_arrays(state: StreamState, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` samples as a feature matrix and label vector."""
    if n < 1:
        raise ValueError("n must be >= 1")
    z = state.rng_sample.standard_normal((n, state.params.n_features + 2))
    idx = np.arange(state.draws, state.draws + n)
    X, y = _materialize(state, z, idx)
    state.draws += n
    return X, y


def next_sample(state: StreamState) -> Sample:
    X, y = draw_arrays(state, 1)
    return Sample(X[0], int(y[0]))


def draw_batch(state: StreamState, n: int) -> list[Sample]:
    X, y = draw_arrays(state, n)
    return [Sample(x, int(label)) for x, label in zip(X, y)]


def dump_batch_csv(path, X: np.ndarray, y: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(X.shape[1])] + ["label"])
        for row, label in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


@dataclass(frozen=True)
class QuantitySchedule:
    breakpoints: tuple[tuple[int, int], ...]

    def __post_init__(self):
        bps = tuple((int(r), int(n)) for r, n in self.breakpoints)
        object.__setattr__(self, "breakpoints", bps)
        if not bps or bps[0][0] != 1:
            raise ValueError("the first breakpoint must start at round 1")
        starts = [r for r, _ in bps]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("breakpoint start rounds must be strictly increasing")
        if any(n < 1 for _, n in bps):
            raise ValueError("samples per round must be positive")


# default lifelong schedule: the round volume doubles at round 50 and triples at round 100
LIFELONG_SCHEDULE = QuantitySchedule(((1, 5000), (50, 10000), (100, 15000)))


def samples_for_round(schedule: QuantitySchedule, round: int) -> int:
    if round < 1:
        raise ValueError("rounds start at 1")
    n = schedule.breakpoints[0][1]
    for start, count in schedule.breakpoints:
        if start <= round:
            n = count
    return n
