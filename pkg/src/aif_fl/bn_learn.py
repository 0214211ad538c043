"""Structure and parameter learning for discrete Bayesian networks.

Structure search is a deterministic greedy hill climb over single-edge
add / remove / reverse moves scored by BIC. Parameters are Dirichlet
posterior pseudo-counts (symmetric prior ``alpha`` plus empirical counts), so
incremental and batch fits agree exactly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .bn_core import BayesNet, Cpd, Dag, Variable

GAIN_TIE_TOL = 1e-9


class EmptyDatasetError(ValueError):
    pass


class IncompleteObservationError(ValueError):
    pass


@dataclass
class HistoryDataset:
    """Complete discrete observations, one int row per record, columns in order."""

    columns: tuple[Variable, ...]
    rows: np.ndarray = None

    def __post_init__(self):
        self.columns = tuple(self.columns)
        if self.rows is None:
            self.rows = np.zeros((0, len(self.columns)), dtype=np.int64)
        self.rows = np.asarray(self.rows, dtype=np.int64).reshape(-1, len(self.columns))
        cards = np.array([c.cardinality for c in self.columns])
        if self.rows.size and (np.any(self.rows < 0) or np.any(self.rows >= cards)):
            raise ValueError("row contains a state index outside its column's cardinality")

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.names.index(name)]

    def row_from_assignment(self, obs: Mapping[str, int]) -> np.ndarray:
        missing = [n for n in self.names if n not in obs]
        if missing:
            raise IncompleteObservationError(f"observation is missing {missing}")
        row = np.array([int(obs[n]) for n in self.names], dtype=np.int64)
        for c, s in zip(self.columns, row):
            if not 0 <= s < c.cardinality:
                raise ValueError(f"state {s} out of range for {c.name!r}")
        return row

    def append(self, obs: Mapping[str, int]) -> None:
        self.rows = np.vstack([self.rows, self.row_from_assignment(obs)[None, :]])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.names)
            w.writerows(self.rows.tolist())

    @classmethod
    def from_csv(cls, path, columns: Sequence[Variable]) -> "HistoryDataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            idx = [header.index(c.name) for c in columns]
            rows = [[int(r[i]) for i in idx] for r in reader]
        return cls(tuple(columns), np.array(rows, dtype=np.int64).reshape(-1, len(columns)))


@dataclass(frozen=True)
class StructureConstraints:
    forbidden_edges: frozenset[tuple[str, str]] = frozenset()
    max_parents: int = 3
    priority_children: frozenset[str] = frozenset()

    def allows(self, parent: str, child: str) -> bool:
        return (parent, child) not in self.forbidden_edges


def role_constraints(variables: Sequence[Variable], max_parents: int = 3) -> StructureConstraints:
    """Configuration vertices get no incoming edges; SLO vertices are prioritized children."""
    forbidden = {
        (p.name, c.name)
        for c in variables if c.role == "configuration"
        for p in variables if p.name != c.name
    }
    priority = frozenset(v.name for v in variables if v.role == "slo")
    return StructureConstraints(frozenset(forbidden), max_parents, priority)


# --------------------------------------------------------------------------
# scoring
# --------------------------------------------------------------------------


def _family_counts(data: HistoryDataset, child: str, parents: Sequence[str]) -> np.ndarray:
    """Counts table of shape (child_card, n_parent_configs), parents row-major."""
    names = data.names
    child_var = data.columns[names.index(child)]
    idx = np.zeros(len(data), dtype=np.int64)
    n_cols = 1
    for p in parents:
        var = data.columns[names.index(p)]
        idx = idx * var.cardinality + data.rows[:, names.index(p)]
        n_cols *= var.cardinality
    flat = data.rows[:, names.index(child)] * n_cols + idx
    return np.bincount(flat, minlength=child_var.cardinality * n_cols).reshape(child_var.cardinality, n_cols)


def local_bic(data: HistoryDataset, child: str, parents: Sequence[str]) -> float:
    counts = _family_counts(data, child, parents).astype(float)
    n = len(data)
    col_tot = counts.sum(axis=0, keepdims=True)
    nz = counts > 0
    loglik = float(np.sum(counts[nz] * np.log((counts / np.where(col_tot > 0, col_tot, 1.0))[nz])))
    free_params = (counts.shape[0] - 1) * counts.shape[1]
    return loglik - 0.5 * free_params * math.log(n)


def score_bic(dag: Dag, data: HistoryDataset) -> float:
    """BIC of ``dag`` on ``data``: maximum-likelihood log-likelihood minus (k/2) ln N."""
    if len(data) == 0:
        raise EmptyDatasetError("BIC needs at least one row")
    missing = set(dag.names) - set(data.names)
    if missing:
        raise ValueError(f"dag variables {sorted(missing)} are not data columns")
    return sum(local_bic(data, n, dag.parents(n)) for n in dag.names)


# --------------------------------------------------------------------------
# hill climb
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Move:
    op: str  # "add" | "remove" | "reverse"
    parent: str
    child: str

    def resulting_edge(self) -> tuple[str, str] | None:
        if self.op == "add":
            return (self.parent, self.child)
        if self.op == "reverse":
            return (self.child, self.parent)
        return None

    def affected_child(self) -> str:
        # the vertex that gains a parent (or loses one, for removals)
        return self.parent if self.op == "reverse" else self.child


@dataclass(frozen=True)
class MoveRecord:
    move: Move
    score_before: float
    score_after: float


@dataclass
class _ScoreCache:
    data: HistoryDataset
    table: dict = field(default_factory=dict)

    def __call__(self, child: str, parents: Iterable[str]) -> float:
        key = (child, frozenset(parents))
        if key not in self.table:
            ordered = [n for n in self.data.names if n in key[1]]
            self.table[key] = local_bic(self.data, child, ordered)
        return self.table[key]


def _candidate_moves(dag: Dag, constraints: StructureConstraints) -> list[Move]:
    names = dag.names
    moves: list[Move] = []
    for u in names:
        for v in names:
            if u == v:
                continue
            if (u, v) in dag.edges:
                moves.append(Move("remove", u, v))
                if constraints.allows(v, u) and len(dag.parents(u)) < constraints.max_parents:
                    trial = dag.with_edges((dag.edges - {(u, v)}) | {(v, u)})
                    if trial.is_acyclic():
                        moves.append(Move("reverse", u, v))
            elif (v, u) not in dag.edges:
                if constraints.allows(u, v) and len(dag.parents(v)) < constraints.max_parents:
                    # adding u->v creates a cycle iff v already reaches u
                    if not dag.has_path(v, u):
                        moves.append(Move("add", u, v))
    return moves


def _gain(dag: Dag, move: Move, score) -> float:
    u, v = move.parent, move.child
    pv = set(dag.parents(v))
    if move.op == "add":
        return score(v, pv | {u}) - score(v, pv)
    if move.op == "remove":
        return score(v, pv - {u}) - score(v, pv)
    pu = set(dag.parents(u))
    return score(v, pv - {u}) + score(u, pu | {v}) - score(v, pv) - score(u, pu)


def _apply(dag: Dag, move: Move) -> Dag:
    edges = set(dag.edges)
    if move.op == "add":
        edges.add((move.parent, move.child))
    elif move.op == "remove":
        edges.discard((move.parent, move.child))
    else:
        edges.discard((move.parent, move.child))
        edges.add((move.child, move.parent))
    return dag.with_edges(edges)


def hill_climb(
    data: HistoryDataset,
    constraints: StructureConstraints,
    seed: int = 0,
    log: list[MoveRecord] | None = None,
    max_iter: int = 1000,
) -> Dag:
    """Greedy BIC hill climb from the empty graph.

    Accepts the best strictly improving move each step. Candidates whose
    gains tie within ``GAIN_TIE_TOL`` are ordered by: affected child in
    ``constraints.priority_children`` first, then lexicographic
    (parent, child) of the edge involved, then operation name. The search
    has no random component; ``seed`` is accepted for interface stability.
    """
    if len(data) == 0:
        raise EmptyDatasetError("hill climb needs at least one row")
    dag = Dag(data.columns, frozenset())
    score = _ScoreCache(data)
    current = sum(score(n, ()) for n in dag.names)
    for _ in range(max_iter):
        best: tuple | None = None
        for move in _candidate_moves(dag, constraints):
            g = _gain(dag, move, score)
            if not g > 0:
                continue
            edge = move.resulting_edge() or (move.parent, move.child)
            rank = (0 if move.affected_child() in constraints.priority_children else 1, edge, move.op)
            if best is None or g > best[0] + GAIN_TIE_TOL * max(1.0, abs(best[0])):
                best = (g, rank, move)
            elif abs(g - best[0]) <= GAIN_TIE_TOL * max(1.0, abs(best[0])) and rank < best[1]:
                best = (max(g, best[0]), rank, move)
        if best is None:
            break
        move = best[2]
        dag = _apply(dag, move)
        new = sum(score(n, dag.parents(n)) for n in dag.names)
        if log is not None:
            log.append(MoveRecord(move, current, new))
        current = new
    return dag


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


def fit_bayesian(dag: Dag, data: HistoryDataset | None, alpha: float = 1.0) -> BayesNet:
    """Dirichlet posterior counts: ``alpha`` plus empirical family counts."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    cpds = {}
    for v in dag.vertices:
        parents = tuple(dag.variable(p) for p in dag.parents(v.name))
        n_cols = int(np.prod([p.cardinality for p in parents], dtype=int))
        counts = np.full((v.cardinality, n_cols), float(alpha))
        if data is not None and len(data):
            counts = counts + _family_counts(data, v.name, [p.name for p in parents])
        cpds[v.name] = Cpd(v, parents, counts)
    return BayesNet(dag, cpds)


def update_parameters(bn: BayesNet, obs: Mapping[str, int]) -> BayesNet:
    """Return a copy of ``bn`` with the one count cell per CPD selected by ``obs`` incremented."""
    missing = [n for n in bn.dag.names if n not in obs]
    if missing:
        raise IncompleteObservationError(f"observation is missing {missing}")
    cpds = {}
    for name, cpd in bn.cpds.items():
        counts = cpd.counts.copy()
        col = cpd.parent_index([obs[p.name] for p in cpd.parents])
        counts[int(obs[name]), col] += 1.0
        cpds[name] = Cpd(cpd.child, cpd.parents, counts)
    return BayesNet(bn.dag, cpds)


def structural_relearn(
    data: HistoryDataset,
    constraints: StructureConstraints,
    alpha: float = 1.0,
    seed: int = 0,
) -> BayesNet:
    """Discard the old structure: hill climb on the full history, then refit."""
    dag = hill_climb(data, constraints, seed)
    return fit_bayesian(dag, data, alpha)
