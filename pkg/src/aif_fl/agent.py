"""Active Inference agent that picks per-round training configurations.

Hidden states are joint metric bins (duration ratio x accuracy gap),
observations are joint SLO outcomes (time_ok, perf_ok), and a configuration
enters the world model as evidence. Expected free energy is

    efe = -pragmatic - info_gain

with ``pragmatic = sum_o p(o|c) log C(o)`` and ``info_gain`` the mutual
information between hidden metric states and SLO outcomes under ``c``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .bn_core import BayesNet, Dag, Variable, query_marginal
from .bn_learn import (
    HistoryDataset,
    StructureConstraints,
    fit_bayesian,
    role_constraints,
    structural_relearn,
    update_parameters,
)

BATCH_SIZES = (8, 32, 64, 256, 512)
LEARNING_RATES = (0.0005, 0.001, 0.005, 0.01)
DEFAULT_EPSILON = 1e-9
EFE_TIE_TOL = 1e-9
TIE_BREAKS = ("grid", "random")
LIFELONG_MARGIN = 0.02

# upper edges of the duration-ratio bins; the second edge is inclusive
DURATION_BIN_EDGES = (0.5, 1.0, 2.0)
ACCURACY_GAP_EDGES = (-0.05, 0.0)


@dataclass(frozen=True, order=True)
class ConfigPoint:
    batch_size: int
    learning_rate: float

    def __post_init__(self):
        if self.batch_size not in BATCH_SIZES:
            raise ValueError(f"batch size {self.batch_size} is not in the grid {BATCH_SIZES}")
        if self.learning_rate not in LEARNING_RATES:
            raise ValueError(f"learning rate {self.learning_rate} is not in the grid {LEARNING_RATES}")

    @property
    def index(self) -> int:
        return BATCH_SIZES.index(self.batch_size) * len(LEARNING_RATES) + LEARNING_RATES.index(self.learning_rate)

    def states(self) -> dict[str, int]:
        return {
            "batch_size": BATCH_SIZES.index(self.batch_size),
            "learning_rate": LEARNING_RATES.index(self.learning_rate),
        }


CONFIG_GRID: tuple[ConfigPoint, ...] = tuple(ConfigPoint(b, lr) for b in BATCH_SIZES for lr in LEARNING_RATES)


@dataclass(frozen=True)
class SloSpec:
    time_limit: float
    accuracy_target: float

    def __post_init__(self):
        if not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        # targets outside [0, 1] are allowed: they make the SLO trivially met or never met
        if not np.isfinite(self.accuracy_target):
            raise ValueError("accuracy_target must be finite")


@dataclass(frozen=True)
class SloOutcome:
    time_ok: int
    perf_ok: int

    @property
    def index(self) -> int:
        # (time_ok, perf_ok) time-major: (0,0), (0,1), (1,0), (1,1)
        return 2 * self.time_ok + self.perf_ok

    @classmethod
    def from_index(cls, i: int) -> "SloOutcome":
        return cls(i // 2, i % 2)


@dataclass(frozen=True)
class PreferenceVector:
    log_prefs: np.ndarray

    def __eq__(self, other):
        return isinstance(other, PreferenceVector) and np.array_equal(self.log_prefs, other.log_prefs)


@dataclass(frozen=True)
class MetricBins:
    duration_bin: int
    accuracy_bin: int

    N_DURATION = 4
    N_ACCURACY = 3

    @property
    def index(self) -> int:
        return self.duration_bin * self.N_ACCURACY + self.accuracy_bin


@dataclass(frozen=True)
class ObservationRecord:
    config: ConfigPoint
    metrics: MetricBins
    outcome: SloOutcome
    round: int

    def assignment(self) -> dict[str, int]:
        return {
            **self.config.states(),
            "duration_bin": self.metrics.duration_bin,
            "accuracy_bin": self.metrics.accuracy_bin,
            "time_ok": self.outcome.time_ok,
            "perf_ok": self.outcome.perf_ok,
        }


@dataclass(frozen=True)
class EfeBreakdown:
    config: ConfigPoint
    pragmatic: float
    info_gain: float
    efe: float
    expected_ig_at_map: float


def agent_variables() -> tuple[Variable, ...]:
    return (
        Variable("batch_size", len(BATCH_SIZES), "configuration"),
        Variable("learning_rate", len(LEARNING_RATES), "configuration"),
        Variable("duration_bin", MetricBins.N_DURATION, "system"),
        Variable("accuracy_bin", MetricBins.N_ACCURACY, "system"),
        Variable("time_ok", 2, "slo"),
        Variable("perf_ok", 2, "slo"),
    )


@dataclass
class AgentState:
    bn: BayesNet
    history: HistoryDataset
    slo_spec: SloSpec
    prefs: PreferenceVector
    constraints: StructureConstraints
    epsilon: float = DEFAULT_EPSILON
    alpha: float = 1.0
    lifelong: bool = False
    seed: int = 0
    config_counts: np.ndarray = field(default_factory=lambda: np.zeros(len(CONFIG_GRID), dtype=np.int64))
    # "grid": near-ties go to grid order; "random": to a seeded draw among them
    tie_break: str = "grid"
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"unknown tie_break {self.tie_break!r}")
        if self.rng is None:
            self.rng = np.random.default_rng([self.seed, 11])


def new_agent(
    slo_spec: SloSpec,
    prefs: PreferenceVector,
    *,
    epsilon: float = DEFAULT_EPSILON,
    alpha: float = 1.0,
    max_parents: int = 3,
    seed: int = 0,
    tie_break: str = "grid",
) -> AgentState:
    """Agent with an edgeless, uniform world model and an empty history."""
    variables = agent_variables()
    history = HistoryDataset(variables)
    bn = fit_bayesian(Dag(variables), None, alpha)
    return AgentState(
        bn=bn,
        history=history,
        slo_spec=slo_spec,
        prefs=prefs,
        constraints=role_constraints(variables, max_parents),
        epsilon=epsilon,
        alpha=alpha,
        seed=seed,
        tie_break=tie_break,
    )


# --------------------------------------------------------------------------
# preferences and metrics
# --------------------------------------------------------------------------


def make_preferences(time_pref: Sequence[float] = (0.001, 0.999), perf_pref: Sequence[float] = (0.001, 0.999)) -> PreferenceVector:
    """Joint log-preferences over SLO outcomes from per-SLO (unfulfilled, fulfilled) weights."""
    t = np.asarray(time_pref, dtype=float)
    p = np.asarray(perf_pref, dtype=float)
    if t.shape != (2,) or p.shape != (2,):
        raise ValueError("each SLO needs an (unfulfilled, fulfilled) weight pair")
    if np.any(t <= 0) or np.any(p <= 0):
        raise ValueError("preference weights must be positive")
    joint = np.outer(t / t.sum(), p / p.sum()).reshape(-1)
    joint = joint / joint.sum()
    return PreferenceVector(np.log(joint))


def discretize_metrics(duration: float, accuracy: float, spec: SloSpec) -> MetricBins:
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    ratio = duration / spec.time_limit
    if ratio < DURATION_BIN_EDGES[0]:
        d = 0
    elif ratio <= DURATION_BIN_EDGES[1]:
        d = 1
    elif ratio <= DURATION_BIN_EDGES[2]:
        d = 2
    else:
        d = 3
    gap = accuracy - spec.accuracy_target
    if gap < ACCURACY_GAP_EDGES[0]:
        a = 0
    elif gap < ACCURACY_GAP_EDGES[1]:
        a = 1
    else:
        a = 2
    return MetricBins(d, a)


# --------------------------------------------------------------------------
# EFE terms
# --------------------------------------------------------------------------


def _floor(p: np.ndarray, epsilon: float, axis: int | None = None) -> np.ndarray:
    if epsilon <= 0:
        return p
    p = np.maximum(p, epsilon)
    return p / p.sum(axis=axis, keepdims=axis is not None)


def predictive_densities(bn: BayesNet, config: ConfigPoint, epsilon: float = DEFAULT_EPSILON) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(q, A)``: q[s] = P(s | c) and A[o, s] = P(o | s, c).

    One joint query P(s, o | c) yields both; this equals querying q and then
    each A column with the metric state added as evidence. Without system
    vertices the hidden state collapses onto the outcome (A is the identity).
    """
    metric = bn.names_with_role("system")
    slo = bn.names_with_role("slo")
    evidence = config.states()
    if not metric:
        p_o = query_marginal(bn, slo, evidence).values.reshape(-1)
        return _floor(p_o, epsilon), np.eye(p_o.size)
    joint = query_marginal(bn, metric + slo, evidence).values
    n_s = int(np.prod(joint.shape[: len(metric)]))
    joint = joint.reshape(n_s, -1)  # [s, o]
    q = joint.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        A = np.where(q[:, None] > 0, joint / q[:, None], 1.0 / joint.shape[1]).T
    return _floor(q, epsilon), _floor(A, epsilon, axis=0)


def _kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """KL divergence of each row of ``p`` from ``q``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


def information_gain(q: np.ndarray, A: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Expected state information gain I(s; o) for likelihood A[o, s] and prior q[s]."""
    q = np.asarray(q, dtype=float)
    A = np.asarray(A, dtype=float)
    joint = A * q[None, :]
    p_o = joint.sum(axis=1)
    posterior = joint / p_o[:, None]
    expected = float(np.dot(p_o, _kl(posterior, q)))
    return max(expected, 0.0), p_o, posterior


def pragmatic_value(p_o: np.ndarray, prefs: PreferenceVector) -> float:
    return float(np.dot(p_o, prefs.log_prefs))


def compute_efe(bn: BayesNet, config: ConfigPoint, prefs: PreferenceVector, epsilon: float = DEFAULT_EPSILON) -> EfeBreakdown:
    q, A = predictive_densities(bn, config, epsilon)
    ig, p_o, posterior = information_gain(q, A)
    prag = pragmatic_value(p_o, prefs)
    o_star = int(np.argmax(p_o))
    at_map = float(_kl(posterior[o_star], q))
    return EfeBreakdown(config, prag, ig, -prag - ig, at_map)


def evaluate_configs(agent: AgentState) -> list[EfeBreakdown]:
    return [compute_efe(agent.bn, c, agent.prefs, agent.epsilon) for c in CONFIG_GRID]


def select_config(
    breakdowns: Sequence[EfeBreakdown],
    config_counts: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> EfeBreakdown:
    """Argmin EFE. Near-ties go to the least-tried config, then to ``rng`` (or grid order)."""
    best = min(b.efe for b in breakdowns)
    tied = [b for b in breakdowns if b.efe <= best + EFE_TIE_TOL]
    if config_counts is not None:
        fewest = min(int(config_counts[b.config.index]) for b in tied)
        tied = [b for b in tied if int(config_counts[b.config.index]) == fewest]
    if rng is None or len(tied) == 1:
        return tied[0]
    return tied[int(rng.integers(len(tied)))]


def choose(agent: AgentState, breakdowns: Sequence[EfeBreakdown]) -> EfeBreakdown:
    rng = agent.rng if agent.tie_break == "random" else None
    return select_config(breakdowns, agent.config_counts, rng)


def infer_best_config(agent: AgentState) -> tuple[ConfigPoint, float]:
    """Best configuration and its MAP-outcome information gain (the surprise threshold)."""
    choice = choose(agent, evaluate_configs(agent))
    return choice.config, choice.expected_ig_at_map


# --------------------------------------------------------------------------
# belief maintenance
# --------------------------------------------------------------------------


def observed_surprise(bn: BayesNet, obs: ObservationRecord, epsilon: float = DEFAULT_EPSILON) -> float:
    """KL from the prior over hidden metric states to the posterior given the observed outcome."""
    q, A = predictive_densities(bn, obs.config, epsilon)
    _, _, posterior = information_gain(q, A)
    return float(_kl(posterior[obs.outcome.index], q))


def config_reaches_slo(bn: BayesNet) -> bool:
    """True when some configuration vertex has a directed path to some SLO vertex."""
    return any(
        bn.dag.has_path(c, s)
        for c in bn.names_with_role("configuration")
        for s in bn.names_with_role("slo")
    )


class BeliefUpdate(NamedTuple):
    surprise: float
    relearned: bool


def update_beliefs(agent: AgentState, obs: ObservationRecord, expected_ig: float) -> BeliefUpdate:
    """Record ``obs`` and either relearn the structure or bump the counts.

    Structure is relearned when the observed surprise strictly exceeds the
    expected information gain. It is also relearned while the current graph
    gives configurations no path to the SLOs: such a graph predicts the same
    outcome for every configuration and has zero surprise by construction,
    so the strict test alone could never leave it.
    """
    if not agent.lifelong:
        raise RuntimeError("beliefs are only updated once the lifelong flag is set")
    surprise = observed_surprise(agent.bn, obs, agent.epsilon)
    agent.history.append(obs.assignment())
    if surprise > expected_ig or not config_reaches_slo(agent.bn):
        agent.bn = structural_relearn(agent.history, agent.constraints, agent.alpha, agent.seed)
        relearned = True
    else:
        agent.bn = update_parameters(agent.bn, obs.assignment())
        relearned = False
    agent.config_counts[obs.config.index] += 1
    return BeliefUpdate(surprise, relearned)


def maybe_set_lifelong(agent: AgentState, global_accuracy: float, round: int, warmup_cap: int) -> bool:
    if global_accuracy >= agent.slo_spec.accuracy_target - LIFELONG_MARGIN or round >= warmup_cap:
        agent.lifelong = True
    return agent.lifelong
