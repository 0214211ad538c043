"""In-process federated rounds: data handoff, config choice, local SGD, SLO checks, FedAvg."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from . import agent as aif
from .agent import (
    CONFIG_GRID,
    AgentState,
    ConfigPoint,
    EfeBreakdown,
    ObservationRecord,
    SloOutcome,
    SloSpec,
)
from .bn_core import bn_to_text
from .learner import MlpArch, MlpParams, TimingProvider, evaluate, fedavg, init_mlp, train_epochs
from .stream import QuantitySchedule, RbfParams, StreamState, draw_arrays, new_stream, samples_for_round

if TYPE_CHECKING:
    from .experiment import ExperimentSpec

POLICY_KINDS = ("aif", "random", "fixed")


@dataclass(frozen=True)
class DeviceProfile:
    name: str = "default"
    c0: float = 0.1  # seconds per mini-batch
    c1: float = 1e-4  # seconds per sample

    def __post_init__(self):
        if self.c0 < 0 or self.c1 < 0:
            raise ValueError("device costs must be nonnegative")


@dataclass(frozen=True)
class Policy:
    kind: str
    config: ConfigPoint | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {self.kind!r}")
        if (self.kind == "fixed") != (self.config is not None):
            raise ValueError("exactly the fixed policy carries a configuration")

    @property
    def label(self) -> str:
        return self.kind


def synthetic_duration(profile: DeviceProfile, n_samples: int, batch_size: int, epochs: int) -> float:
    return epochs * (math.ceil(n_samples / batch_size) * profile.c0 + n_samples * profile.c1)


def make_timing(profile: DeviceProfile, mode: str = "synthetic") -> TimingProvider:
    if mode == "measured":
        return TimingProvider()
    if mode != "synthetic":
        raise ValueError(f"unknown timing mode {mode!r}")
    return TimingProvider(lambda n, bs, ep: synthetic_duration(profile, n, bs, ep))


def check_slo(duration: float, val_accuracy: float, spec: SloSpec) -> SloOutcome:
    return SloOutcome(int(duration <= spec.time_limit), int(val_accuracy >= spec.accuracy_target))


@dataclass
class ClientState:
    id: int
    stream: StreamState
    agent: AgentState
    device: DeviceProfile
    policy: Policy
    run_seed: int = 0
    timing_mode: str = "synthetic"
    train_set: tuple[np.ndarray, np.ndarray] | None = None
    validation_set: tuple[np.ndarray, np.ndarray] | None = None
    model: MlpParams | None = None
    rng_policy: np.random.Generator = None

    def __post_init__(self):
        if self.rng_policy is None:
            self.rng_policy = np.random.default_rng([self.run_seed, self.id, 7])


@dataclass(frozen=True)
class RoundRecord:
    round: int
    client_id: int
    policy: str
    config: ConfigPoint
    duration: float
    val_accuracy: float
    time_ok: int
    perf_ok: int
    expected_ig: float | None
    observed_ig: float | None
    relearned: bool
    lifelong: bool


@dataclass
class RoundResult:
    global_model: MlpParams
    records: list[RoundRecord]
    global_accuracy: float
    efe: dict[int, list[EfeBreakdown]] = field(default_factory=dict)
    relearned_bns: dict[int, str] = field(default_factory=dict)


def _choose(client: ClientState) -> tuple[ConfigPoint, float | None, list[EfeBreakdown] | None]:
    kind = client.policy.kind
    if kind == "fixed":
        return client.policy.config, None, None
    if kind == "random":
        return CONFIG_GRID[int(client.rng_policy.integers(len(CONFIG_GRID)))], None, None
    breakdowns = aif.evaluate_configs(client.agent)
    choice = aif.choose(client.agent, breakdowns)
    return choice.config, choice.expected_ig_at_map, breakdowns


def _shuffle_seed(client: ClientState, round: int) -> int:
    return int(np.random.SeedSequence([client.run_seed, client.id, round]).generate_state(1)[0])


def run_round(
    clients: Sequence[ClientState],
    global_model: MlpParams,
    round: int,
    slo: SloSpec,
    schedule: QuantitySchedule,
    *,
    epochs: int = 3,
    warmup_cap: int = 10,
) -> RoundResult:
    """One federated round over every client, then aggregation and the lifelong gate."""
    if round < 1:
        raise ValueError("rounds start at 1")
    n_new = samples_for_round(schedule, round)
    records: list[RoundRecord] = []
    updates: list[tuple[MlpParams, int]] = []
    result = RoundResult(global_model, records, 0.0)

    for client in clients:
        if client.validation_set is None:
            client.train_set = draw_arrays(client.stream, n_new)
        else:
            client.train_set = client.validation_set
        client.validation_set = draw_arrays(client.stream, n_new)

        config, threshold, breakdowns = _choose(client)
        if breakdowns is not None:
            result.efe[client.id] = breakdowns

        X, y = client.train_set
        report = train_epochs(
            global_model, X, y, config.batch_size, config.learning_rate, epochs,
            make_timing(client.device, client.timing_mode), seed=_shuffle_seed(client, round),
        )
        client.model = report.final_params
        acc = evaluate(client.model, *client.validation_set)
        outcome = check_slo(report.duration, acc, slo)

        lifelong = client.agent.lifelong
        surprise = None
        relearned = False
        if lifelong and client.policy.kind == "aif":
            obs = ObservationRecord(config, aif.discretize_metrics(report.duration, acc, slo), outcome, round)
            update = aif.update_beliefs(client.agent, obs, threshold)
            surprise, relearned = update.surprise, update.relearned
            if relearned:
                result.relearned_bns[client.id] = bn_to_text(client.agent.bn)

        records.append(RoundRecord(
            round, client.id, client.policy.label, config, report.duration, acc,
            outcome.time_ok, outcome.perf_ok,
            threshold if lifelong else None, surprise, relearned, lifelong,
        ))
        updates.append((client.model, len(y)))

    new_global = fedavg(updates)
    global_acc = float(np.mean([evaluate(new_global, *c.validation_set) for c in clients]))
    for client in clients:
        aif.maybe_set_lifelong(client.agent, global_acc, round, warmup_cap)
    result.global_model = new_global
    result.global_accuracy = global_acc
    return result


# --------------------------------------------------------------------------
# accounting
# --------------------------------------------------------------------------


def _bits(records: Iterable[RoundRecord], slo: str) -> list[float]:
    out = []
    for r in records:
        if not r.lifelong:
            continue
        if slo == "time":
            out.append(float(r.time_ok))
        elif slo == "perf":
            out.append(float(r.perf_ok))
        elif slo == "both":
            out.append((r.time_ok + r.perf_ok) / 2.0)
        else:
            raise ValueError(f"unknown SLO {slo!r}")
    return out


def cumulative_fulfillment(records: Sequence[RoundRecord], slo: str = "time") -> float:
    """Fraction of post-lifelong rounds that fulfilled ``slo`` ("time", "perf" or "both")."""
    if not records:
        raise ValueError("no records")
    bits = _bits(records, slo)
    if not bits:
        raise ValueError("no rounds after the lifelong flag was set")
    return sum(bits) / len(bits)


def cumulative_curve(records: Sequence[RoundRecord], slo: str = "time") -> dict[int, float]:
    """Round -> cumulative fulfillment so far, for post-lifelong rounds of one client."""
    curve: dict[int, float] = {}
    total = 0.0
    count = 0
    for r in sorted(records, key=lambda r: r.round):
        if not r.lifelong:
            continue
        total += _bits([r], slo)[0]
        count += 1
        curve[r.round] = total / count
    return curve


# --------------------------------------------------------------------------
# whole runs
# --------------------------------------------------------------------------


@dataclass
class RunTrace:
    run_seed: int
    records: list[RoundRecord] = field(default_factory=list)
    efe: list[tuple[int, int, EfeBreakdown]] = field(default_factory=list)
    snapshots: list[tuple[int, int, str]] = field(default_factory=list)
    global_accuracy: list[float] = field(default_factory=list)


def build_clients(spec: "ExperimentSpec", run_seed: int, policies: Sequence[Policy] | None = None) -> list[ClientState]:
    policies = list(policies or spec.policies)
    prefs = aif.make_preferences(spec.time_pref, spec.perf_pref)
    clients = []
    for c in range(spec.n_clients):
        # shared centroids (one learning task per run), client-specific sampling
        params = RbfParams(
            spec.stream.n_features, spec.stream.n_classes, spec.stream.n_centroids,
            spec.stream.drift_speed, model_seed=run_seed, sample_seed=run_seed * 1000 + c,
        )
        agent = aif.new_agent(
            spec.slo, prefs, epsilon=spec.epsilon, alpha=spec.alpha,
            max_parents=spec.max_parents, seed=run_seed * 1000 + c, tie_break=spec.tie_break,
        )
        clients.append(ClientState(
            c, new_stream(params), agent, spec.devices[c], policies[c],
            run_seed=run_seed, timing_mode=spec.timing,
        ))
    return clients


def run_simulation(
    spec: "ExperimentSpec",
    run_seed: int,
    policies: Sequence[Policy] | None = None,
    n_rounds: int | None = None,
) -> RunTrace:
    clients = build_clients(spec, run_seed, policies)
    arch = MlpArch(spec.stream.n_features, tuple(spec.hidden_dims), spec.stream.n_classes)
    model = init_mlp(arch, run_seed)
    trace = RunTrace(run_seed)
    for t in range(1, (n_rounds or spec.n_rounds) + 1):
        res = run_round(clients, model, t, spec.slo, spec.schedule, epochs=spec.epochs, warmup_cap=spec.warmup_cap)
        model = res.global_model
        trace.records.extend(res.records)
        for cid, bds in sorted(res.efe.items()):
            trace.efe.extend((t, cid, b) for b in bds)
        for cid, text in sorted(res.relearned_bns.items()):
            trace.snapshots.append((t, cid, text))
        trace.global_accuracy.append(res.global_accuracy)
    return trace


def mean_fulfillment_at(records: Sequence[RoundRecord], horizon: int) -> float:
    """Mean over clients of both-SLO cumulative fulfillment over rounds <= horizon."""
    by_client: dict[int, list[RoundRecord]] = {}
    for r in records:
        if r.round <= horizon:
            by_client.setdefault(r.client_id, []).append(r)
    values = []
    for recs in by_client.values():
        bits = _bits(recs, "both")
        values.append(sum(bits) / len(bits) if bits else 0.0)
    return float(np.mean(values)) if values else 0.0


def find_fixed_optimal(spec: "ExperimentSpec", horizon: int, run_seeds: Sequence[int] | None = None) -> ConfigPoint:
    """Grid config with the best mean cumulative fulfillment at ``horizon`` under a fixed policy."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    seeds = list(run_seeds) if run_seeds is not None else spec.run_seeds
    best, best_score = CONFIG_GRID[0], -1.0
    for config in CONFIG_GRID:
        policy = [Policy("fixed", config)] * spec.n_clients
        scores = [
            mean_fulfillment_at(run_simulation(spec, s, policy, n_rounds=min(horizon, spec.n_rounds)).records, horizon)
            for s in seeds
        ]
        score = float(np.mean(scores))
        if score > best_score:
            best, best_score = config, score
    return best
