"""Discrete Bayesian networks with exact inference by variable elimination.

Table conventions (kept fixed so traces are bit-reproducible):

* State indices are dense integers ``0 .. cardinality - 1``.
* A :class:`Factor` stores ``values`` as an ndarray with one axis per scope
  variable, in scope order (row-major, first variable most significant).
* A :class:`Cpd` stores ``counts`` with shape ``(child_card, n_parent_configs)``.
  The joint parent configuration index is row-major over ``parents`` in the
  order given, so the first parent is the most significant digit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product as iproduct
from typing import Iterable, Mapping, Sequence

import numpy as np

ROLES = ("configuration", "slo", "system")
NORMALIZATION_TOL = 1e-9


class ZeroEvidenceProbability(ValueError):
    """The evidence has probability zero under the model."""


@dataclass(frozen=True)
class Variable:
    name: str
    cardinality: int
    role: str = "system"


@dataclass(frozen=True)
class Dag:
    vertices: tuple[Variable, ...]
    edges: frozenset[tuple[str, str]] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "edges", frozenset(self.edges))

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.vertices]

    def variable(self, name: str) -> Variable:
        for v in self.vertices:
            if v.name == name:
                return v
        raise KeyError(name)

    def parents(self, name: str) -> list[str]:
        """Parents of ``name`` in vertex order."""
        ps = {p for p, c in self.edges if c == name}
        return [n for n in self.names if n in ps]

    def children(self, name: str) -> list[str]:
        cs = {c for p, c in self.edges if p == name}
        return [n for n in self.names if n in cs]

    def topological_order(self) -> list[str] | None:
        """Kahn's algorithm with vertex-order tie breaking; None if cyclic."""
        indeg = {n: 0 for n in self.names}
        for p, c in self.edges:
            if c in indeg:
                indeg[c] += 1
        order: list[str] = []
        ready = [n for n in self.names if indeg[n] == 0]
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in self.children(n):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        return order if len(order) == len(self.names) else None

    def is_acyclic(self) -> bool:
        return self.topological_order() is not None

    def has_path(self, src: str, dst: str) -> bool:
        stack, seen = [src], set()
        while stack:
            n = stack.pop()
            if n == dst:
                return True
            if n in seen:
                continue
            seen.add(n)
            stack.extend(self.children(n))
        return False

    def ancestors(self, names: Iterable[str]) -> set[str]:
        """``names`` together with all of their ancestors."""
        out: set[str] = set()
        stack = list(names)
        while stack:
            n = stack.pop()
            if n in out:
                continue
            out.add(n)
            stack.extend(self.parents(n))
        return out

    def with_edges(self, edges: Iterable[tuple[str, str]]) -> "Dag":
        return Dag(self.vertices, frozenset(edges))


@dataclass(frozen=True, eq=False)
class Cpd:
    """Conditional table P(child | parents) backed by Dirichlet pseudo-counts."""

    child: Variable
    parents: tuple[Variable, ...]
    counts: np.ndarray
    # counts were given as literal probabilities; columns must then sum to 1
    literal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=float))

    @property
    def parent_cards(self) -> tuple[int, ...]:
        return tuple(p.cardinality for p in self.parents)

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.counts.sum(axis=0, keepdims=True)

    def parent_index(self, states: Sequence[int]) -> int:
        idx = 0
        for s, card in zip(states, self.parent_cards):
            idx = idx * card + int(s)
        return idx

    def to_factor(self) -> "Factor":
        shape = (self.child.cardinality, *self.parent_cards)
        return Factor((self.child, *self.parents), self.probabilities.reshape(shape))

    @classmethod
    def from_probabilities(cls, child: Variable, parents: Sequence[Variable], table) -> "Cpd":
        """Build a CPD whose counts equal the given probabilities."""
        table = np.asarray(table, dtype=float)
        n_cols = int(np.prod([p.cardinality for p in parents], dtype=int))
        return cls(child, tuple(parents), table.reshape(child.cardinality, n_cols), literal=True)


@dataclass(frozen=True, eq=False)
class BayesNet:
    dag: Dag
    cpds: Mapping[str, Cpd] = field(default_factory=dict)

    @property
    def variables(self) -> tuple[Variable, ...]:
        return self.dag.vertices

    def variable(self, name: str) -> Variable:
        return self.dag.variable(name)

    def names_with_role(self, role: str) -> list[str]:
        return [v.name for v in self.dag.vertices if v.role == role]


@dataclass(frozen=True, eq=False)
class Factor:
    scope: tuple[Variable, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scope", tuple(self.scope))
        values = np.asarray(self.values, dtype=float)
        shape = tuple(v.cardinality for v in self.scope)
        if values.shape != shape:
            raise ValueError(f"factor values shape {values.shape} does not match scope {shape}")
        object.__setattr__(self, "values", values)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.scope]

    def normalized(self) -> "Factor":
        return Factor(self.scope, self.values / self.values.sum())


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


def validate(bn: BayesNet) -> list[str]:
    """Return one human-readable entry per broken invariant; [] if sound."""
    problems: list[str] = []
    dag = bn.dag
    seen: set[str] = set()
    for v in dag.vertices:
        if v.name in seen:
            problems.append(f"duplicate variable name {v.name!r}")
        seen.add(v.name)
        if v.cardinality < 2:
            problems.append(f"variable {v.name!r} has cardinality {v.cardinality} < 2")
        if v.role not in ROLES:
            problems.append(f"variable {v.name!r} has unknown role {v.role!r}")
    for p, c in sorted(dag.edges):
        if p == c:
            problems.append(f"self-loop on {p!r}")
        if p not in seen or c not in seen:
            problems.append(f"edge {p!r}->{c!r} references an unknown vertex")
    if not dag.is_acyclic():
        problems.append("acyclicity violation: the edge set contains a directed cycle")

    for v in dag.vertices:
        cpd = bn.cpds.get(v.name)
        if cpd is None:
            problems.append(f"missing CPD for {v.name!r}")
            continue
        if cpd.child != v:
            problems.append(f"CPD for {v.name!r} has a mismatched child variable")
        if [p.name for p in cpd.parents] != dag.parents(v.name):
            problems.append(
                f"CPD parents of {v.name!r} {[p.name for p in cpd.parents]} differ from DAG parents {dag.parents(v.name)}"
            )
        expected = (v.cardinality, int(np.prod(cpd.parent_cards, dtype=int)))
        if cpd.counts.shape != expected:
            problems.append(f"CPD of {v.name!r} has shape {cpd.counts.shape}, expected {expected}")
            continue
        if np.any(cpd.counts < 0) or not np.all(np.isfinite(cpd.counts)):
            problems.append(f"CPD of {v.name!r} has negative or non-finite counts")
            continue
        totals = cpd.counts.sum(axis=0)
        if np.any(totals <= 0):
            problems.append(f"normalization violation: CPD of {v.name!r} has an all-zero column")
        elif cpd.literal:
            for j in np.flatnonzero(np.abs(totals - 1.0) > NORMALIZATION_TOL):
                problems.append(
                    f"normalization violation: CPD of {v.name!r} column {int(j)} sums to {totals[j]:.12g}"
                )
    extra = set(bn.cpds) - seen
    for name in sorted(extra):
        problems.append(f"CPD for {name!r} has no vertex in the DAG")
    return problems


# --------------------------------------------------------------------------
# factor algebra
# --------------------------------------------------------------------------


def _check_consistent(scopes: Iterable[tuple[Variable, ...]]) -> None:
    cards: dict[str, int] = {}
    for scope in scopes:
        for v in scope:
            if cards.setdefault(v.name, v.cardinality) != v.cardinality:
                raise ValueError(f"dimension mismatch for variable {v.name!r}")


def factor_product(f1: Factor, f2: Factor) -> Factor:
    _check_consistent([f1.scope, f2.scope])
    names1 = f1.names
    scope = list(f1.scope) + [v for v in f2.scope if v.name not in names1]
    label = {v.name: i for i, v in enumerate(scope)}
    values = np.einsum(
        f1.values, [label[n] for n in names1],
        f2.values, [label[n] for n in f2.names],
        list(range(len(scope))),
    )
    return Factor(tuple(scope), values)


def factor_marginalize(f: Factor, var: str | Variable) -> Factor:
    name = var.name if isinstance(var, Variable) else var
    axis = f.names.index(name)
    return Factor(f.scope[:axis] + f.scope[axis + 1:], f.values.sum(axis=axis))


def factor_reduce(f: Factor, evidence: Mapping[str, int]) -> Factor:
    """Slice ``f`` at the evidence states of variables in its scope and drop them."""
    values = f.values
    scope = list(f.scope)
    for name, state in evidence.items():
        if name not in [v.name for v in scope]:
            continue
        axis = [v.name for v in scope].index(name)
        if not 0 <= state < scope[axis].cardinality:
            raise ValueError(f"state {state} out of range for {name!r}")
        values = np.take(values, state, axis=axis)
        scope.pop(axis)
    return Factor(tuple(scope), values)


# --------------------------------------------------------------------------
# inference
# --------------------------------------------------------------------------


def min_degree_order(factors: Sequence[Factor], eliminate: Iterable[str]) -> list[str]:
    """Greedy min-degree elimination order over the factors' interaction graph."""
    nbrs: dict[str, set[str]] = {}
    for f in factors:
        for v in f.names:
            nbrs.setdefault(v, set()).update(n for n in f.names if n != v)
    remaining = set(eliminate)
    order: list[str] = []
    while remaining:
        var = min(remaining, key=lambda n: (len(nbrs.get(n, ())), n))
        around = nbrs.pop(var, set())
        for n in around:
            nbrs[n].discard(var)
            nbrs[n].update(around - {n})
        remaining.discard(var)
        order.append(var)
    return order


def _check_query(bn: BayesNet, targets: Sequence[str], evidence: Mapping[str, int]) -> None:
    if not targets:
        raise ValueError("targets must be nonempty")
    names = set(bn.dag.names)
    for n in list(targets) + list(evidence):
        if n not in names:
            raise ValueError(f"unknown variable {n!r}")
    if set(targets) & set(evidence):
        raise ValueError("targets and evidence variables must be disjoint")
    if len(set(targets)) != len(targets):
        raise ValueError("duplicate target variables")
    for n, s in evidence.items():
        if not 0 <= int(s) < bn.variable(n).cardinality:
            raise ValueError(f"evidence state {s} out of range for {n!r}")


def joint_unnormalized(
    bn: BayesNet,
    targets: Sequence[str],
    evidence: Mapping[str, int] | None = None,
    elimination_order: Sequence[str] | None = None,
) -> Factor:
    """Unnormalized P(targets, evidence) by variable elimination."""
    evidence = dict(evidence or {})
    targets = list(targets)
    _check_query(bn, targets, evidence)

    # nodes outside the ancestral set of the query are barren and sum to one
    relevant = bn.dag.ancestors([*targets, *evidence])
    factors = [factor_reduce(bn.cpds[n].to_factor(), evidence) for n in bn.dag.names if n in relevant]
    to_eliminate = [n for n in bn.dag.names if n in relevant and n not in targets and n not in evidence]
    if elimination_order is None:
        order = min_degree_order(factors, to_eliminate)
    else:
        order = [n for n in elimination_order if n in to_eliminate]
        if sorted(order) != sorted(to_eliminate):
            raise ValueError("elimination order must cover every non-query variable")

    for var in order:
        involved = [f for f in factors if var in f.names]
        if not involved:
            continue
        factors = [f for f in factors if var not in f.names]
        prod = involved[0]
        for f in involved[1:]:
            prod = factor_product(prod, f)
        factors.append(factor_marginalize(prod, var))

    result = Factor((), np.array(1.0))
    for f in factors:
        result = factor_product(result, f)
    # add any target not touched by a factor (cannot happen for ancestral sets, kept for safety)
    for t in targets:
        if t not in result.names:
            v = bn.variable(t)
            result = factor_product(result, Factor((v,), np.ones(v.cardinality)))
    perm = [result.names.index(t) for t in targets]
    return Factor(tuple(bn.variable(t) for t in targets), np.transpose(result.values, perm))


def query_marginal(
    bn: BayesNet,
    targets: Sequence[str],
    evidence: Mapping[str, int] | None = None,
    elimination_order: Sequence[str] | None = None,
) -> Factor:
    """P(targets | evidence) as a normalized factor with scope in ``targets`` order."""
    joint = joint_unnormalized(bn, targets, evidence, elimination_order)
    total = joint.values.sum()
    if not total > 0:
        raise ZeroEvidenceProbability(f"evidence {dict(evidence or {})} has probability zero")
    return Factor(joint.scope, joint.values / total)


def map_query(
    bn: BayesNet,
    targets: Sequence[str],
    evidence: Mapping[str, int] | None = None,
) -> dict[str, int]:
    """Most probable joint assignment of ``targets`` given ``evidence``.

    Ties go to the smallest joint state index with targets sorted by name.
    """
    ordered = sorted(targets)
    post = query_marginal(bn, ordered, evidence)
    flat = int(np.argmax(post.values.reshape(-1)))
    states = np.unravel_index(flat, post.values.shape)
    return {n: int(s) for n, s in zip(ordered, states)}


def enumerate_joint(bn: BayesNet) -> np.ndarray:
    """Full joint table by brute-force product over every assignment.

    Axes follow ``bn.dag.names``. Independent of the elimination code path;
    used as a test oracle on small networks.
    """
    names = bn.dag.names
    cards = [bn.variable(n).cardinality for n in names]
    joint = np.empty(cards)
    probs = {n: bn.cpds[n].probabilities for n in names}
    pidx = {n: [names.index(p.name) for p in bn.cpds[n].parents] for n in names}
    for assignment in iproduct(*(range(c) for c in cards)):
        p = 1.0
        for i, n in enumerate(names):
            cpd = bn.cpds[n]
            col = cpd.parent_index([assignment[j] for j in pidx[n]])
            p *= probs[n][assignment[i], col]
        joint[assignment] = p
    return joint


# --------------------------------------------------------------------------
# text serialization
# --------------------------------------------------------------------------


def bn_to_text(bn: BayesNet) -> str:
    lines = ["# bayesnet v1"]
    for v in bn.dag.vertices:
        lines.append(f"variable {v.name} {v.cardinality} {v.role}")
    for p, c in sorted(bn.dag.edges):
        lines.append(f"edge {p} {c}")
    for v in bn.dag.vertices:
        cpd = bn.cpds[v.name]
        parents = " ".join(p.name for p in cpd.parents)
        lines.append(f"cpd {v.name} | {parents}".rstrip())
        for row in cpd.counts:
            lines.append("  " + " ".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def bn_from_text(text: str) -> BayesNet:
    variables: list[Variable] = []
    edges: set[tuple[str, str]] = set()
    cpd_rows: dict[str, list[list[float]]] = {}
    cpd_parents: dict[str, list[str]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, *rest = line.split()
        if head == "variable":
            name, card, role = rest
            variables.append(Variable(name, int(card), role))
        elif head == "edge":
            edges.add((rest[0], rest[1]))
        elif head == "cpd":
            current = rest[0]
            cpd_parents[current] = rest[2:] if len(rest) > 1 else []
            cpd_rows[current] = []
        elif current is not None:
            cpd_rows[current].append([float(x) for x in line.split()])
        else:
            raise ValueError(f"line {lineno}: unexpected content {line!r}")
    dag = Dag(tuple(variables), frozenset(edges))
    cpds = {
        name: Cpd(dag.variable(name), tuple(dag.variable(p) for p in cpd_parents[name]), np.array(rows))
        for name, rows in cpd_rows.items()
    }
    return BayesNet(dag, cpds)
