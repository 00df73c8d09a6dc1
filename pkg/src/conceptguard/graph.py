"""Bipartite factor graph over concept and category variables.

Variable ids: concept ``j`` is ``j``; category ``k`` is ``M + k``.  Each
factor stores its formula as a truth table indexed by the bits of its
neighbour variables (bit ``b`` of the row index is neighbour ``b``), so a
potential evaluation is a handful of shifts and a lookup.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rules import CONCEPT, Rule, RuleSchema, truth_table

BINARIZE_THRESHOLD = 0.5


@dataclass(frozen=True)
class Factor:
    id: int
    rule: Rule
    weight: float
    neighbors: tuple[int, ...]
    table: tuple[bool, ...]

    @property
    def family(self) -> str:
        return self.rule.family

    def concept_neighbors(self, num_concepts: int) -> tuple[int, ...]:
        return tuple(v for v in self.neighbors if v < num_concepts)

    def holds(self, values) -> bool:
        row = 0
        for bit, v in enumerate(self.neighbors):
            if values[v]:
                row |= 1 << bit
        return self.table[row]


@dataclass(frozen=True)
class Assignment:
    """Binary concept vector plus a single active category.

    ``values`` is the full length ``M + K`` bit vector with the category
    block one-hot; it is what factors index into.
    """

    values: tuple[int, ...]
    num_concepts: int

    @classmethod
    def from_parts(cls, concepts: Sequence[int], category: int, num_categories: int) -> "Assignment":
        concepts = tuple(int(bool(b)) for b in concepts)
        if not 0 <= category < num_categories:
            raise ValueError(f"category {category} outside 0..{num_categories - 1}")
        onehot = [0] * num_categories
        onehot[category] = 1
        return cls(concepts + tuple(onehot), len(concepts))

    @property
    def concepts(self) -> tuple[int, ...]:
        return self.values[: self.num_concepts]

    @property
    def category_vector(self) -> tuple[int, ...]:
        return self.values[self.num_concepts :]

    @property
    def category(self) -> int:
        return self.category_vector.index(1)

    def flipped(self, concept_ids) -> "Assignment":
        vals = list(self.values)
        for j in concept_ids:
            vals[j] ^= 1
        return Assignment(tuple(vals), self.num_concepts)


class FactorGraph:
    """Immutable factor graph; build with :func:`build_graph`."""

    def __init__(self, schema: RuleSchema, factors: Sequence[Factor]):
        self.schema = schema
        self.factors = tuple(factors)
        n_vars = schema.num_concepts + schema.num_categories
        adjacency: list[list[int]] = [[] for _ in range(n_vars)]
        for f in self.factors:
            for v in f.neighbors:
                adjacency[v].append(f.id)
        self.var_to_factors = tuple(tuple(a) for a in adjacency)
        self._neighborhoods = tuple(
            frozenset(g for v in f.neighbors for g in self.var_to_factors[v]) | {f.id}
            for f in self.factors
        )
        self._ordered = tuple(tuple(sorted(n)) for n in self._neighborhoods)
        self.weights = np.array([f.weight for f in self.factors], dtype=float)

    @property
    def num_concepts(self) -> int:
        return self.schema.num_concepts

    @property
    def num_categories(self) -> int:
        return self.schema.num_categories

    @property
    def num_variables(self) -> int:
        return self.num_concepts + self.num_categories

    def __len__(self) -> int:
        return len(self.factors)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def concept_var(self, j: int) -> int:
        return j

    def category_var(self, k: int) -> int:
        return self.num_concepts + k

    def neighbor_factors(self, factor_id: int) -> frozenset[int]:
        return self._neighborhoods[factor_id]

    def neighbor_order(self, factor_id: int) -> tuple[int, ...]:
        """``neighbor_factors`` as an ascending tuple (fixed summation order)."""
        return self._ordered[factor_id]

    def subgraph(self, factor_ids) -> "FactorGraph":
        """Graph restricted to ``factor_ids`` (renumbered in the given order)."""
        keep = [self.factors[i] for i in factor_ids]
        rules = [f.rule for f in keep]
        return build_graph(rules, self.schema, [f.weight for f in keep])

    def with_weights(self, weights) -> "FactorGraph":
        return build_graph([f.rule for f in self.factors], self.schema, weights)

    def potentials(self, assignment: Assignment) -> np.ndarray:
        vals = assignment.values
        return np.fromiter((f.holds(vals) for f in self.factors), dtype=bool, count=len(self.factors))

    def potentials_batch(self, values: np.ndarray) -> np.ndarray:
        """Potentials for many full bit vectors at once: ``(n, V) -> (n, N)`` bool."""
        values = np.asarray(values, dtype=np.int64)
        out = np.empty((values.shape[0], len(self.factors)), dtype=bool)
        for f in self.factors:
            row = np.zeros(values.shape[0], dtype=np.int64)
            for bit, v in enumerate(f.neighbors):
                row |= values[:, v] << bit
            out[:, f.id] = np.asarray(f.table, dtype=bool)[row]
        return out


def build_graph(rules: Sequence[Rule], schema: RuleSchema, weights) -> FactorGraph:
    """One factor per rule, neighbours = the distinct variables of its formula."""
    weights = [float(w) for w in weights]
    if len(weights) != len(rules):
        raise ValueError(f"{len(weights)} weights for {len(rules)} rules")
    factors = []
    m = schema.num_concepts
    for i, (rule, w) in enumerate(zip(rules, weights)):
        if not 0.0 <= w <= 1.0 or w != w:
            raise ValueError(f"weight {w} of rule {rule.id} outside [0, 1]")
        vars_ = rule.variables
        ids = []
        for kind, idx in vars_:
            bound = m if kind == CONCEPT else schema.num_categories
            if idx >= bound:
                raise ValueError(f"rule {rule.id} references {kind}{idx} outside schema")
            ids.append(idx if kind == CONCEPT else m + idx)
        factors.append(Factor(i, rule, w, tuple(ids), tuple(truth_table(rule.formula, vars_))))
    return FactorGraph(schema, factors)


def evaluate_potential(graph: FactorGraph, factor_id: int, assignment: Assignment) -> bool:
    return graph.factors[factor_id].holds(assignment.values)


def neighbor_factors(graph: FactorGraph, factor_id: int) -> frozenset[int]:
    """Factors sharing at least one variable with ``factor_id``, itself included."""
    return graph.neighbor_factors(factor_id)


def binarize(activation, predicted_category: int, num_categories: int) -> Assignment:
    """Threshold activations strictly above 0.5 and one-hot the predicted category."""
    act = np.asarray(activation, dtype=float)
    if act.ndim != 1:
        raise ValueError("activation must be a vector")
    if np.any(~np.isfinite(act)) or np.any(act < 0.0) or np.any(act > 1.0):
        raise ValueError("concept activations must lie in [0, 1]")
    bits = (act > BINARIZE_THRESHOLD).astype(int)
    return Assignment.from_parts(bits.tolist(), predicted_category, num_categories)
