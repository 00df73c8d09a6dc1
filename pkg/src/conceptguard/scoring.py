"""Weighted rule satisfaction, conditional probability and the identification test."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .graph import Assignment, FactorGraph, binarize

ENUMERATION_CAP = 20

EXACT = "exact"
ALL_SATISFIED = "all_satisfied"

COMPREHENSIBLE = "comprehensible"
LOGIC_ERROR = "logic_error"


class EnumerationCapError(RuntimeError):
    """Raised when exact enumeration over 2^M concept assignments is refused."""


@dataclass(frozen=True)
class ScoreReport:
    satisfaction: float
    total_weight: float
    max_satisfaction: float
    ratio: float
    lsm: float
    log_partition: float | None = None
    conditional_probability: float | None = None
    verdict: str | None = None


def _check_cap(m: int, cap: int):
    if m > cap:
        raise EnumerationCapError(
            f"{m} concepts exceeds enumeration cap {cap}; use ratio-based identification"
        )


@lru_cache(maxsize=8)
def concept_grid(m: int) -> np.ndarray:
    """All 2^m concept bit vectors; row ``r`` has bit ``j`` of ``r`` in column ``j``."""
    rows = np.arange(1 << m, dtype=np.int64)
    grid = ((rows[:, None] >> np.arange(m, dtype=np.int64)) & 1).astype(np.int8)
    grid.setflags(write=False)
    return grid


def category_worlds(graph: FactorGraph, category: int) -> np.ndarray:
    """Full bit vectors for every concept assignment with ``category`` fixed."""
    m, k = graph.num_concepts, graph.num_categories
    grid = concept_grid(m)
    worlds = np.zeros((grid.shape[0], m + k), dtype=np.int8)
    worlds[:, :m] = grid
    worlds[:, m + category] = 1
    return worlds


def world_potentials(graph: FactorGraph, category: int, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """``(2^M, N)`` potential table over every concept assignment at ``category``."""
    _check_cap(graph.num_concepts, cap)
    return graph.potentials_batch(category_worlds(graph, category))


def satisfaction_weight(graph: FactorGraph, assignment: Assignment) -> float:
    """S = sum_i w_i psi_i."""
    vals = assignment.values
    return math.fsum(f.weight for f in graph.factors if f.holds(vals))


def log_partition(graph: FactorGraph, category: int, cap: int = ENUMERATION_CAP) -> float:
    if len(graph) == 0:
        return graph.num_concepts * math.log(2.0)
    scores = world_potentials(graph, category, cap) @ graph.weights
    return float(logsumexp(scores))


def conditional_probability(graph: FactorGraph, assignment: Assignment, cap: int = ENUMERATION_CAP) -> float:
    """P(concepts | category) = exp(S) / sum over all concept assignments of exp(S)."""
    _check_cap(graph.num_concepts, cap)
    s = satisfaction_weight(graph, assignment)
    return math.exp(s - log_partition(graph, assignment.category, cap))


def max_satisfaction(graph: FactorGraph, category: int, mode: str = ALL_SATISFIED, cap: int = ENUMERATION_CAP) -> float:
    if mode == ALL_SATISFIED:
        return graph.total_weight
    if mode != EXACT:
        raise ValueError(f"unknown max-satisfaction mode {mode!r}")
    if len(graph) == 0:
        return 0.0
    scores = world_potentials(graph, category, cap) @ graph.weights
    return float(scores.max())


def is_comprehensible(s: float, s_max: float, threshold: float) -> bool:
    # exp(S) > d * exp(S_max), shared partition cancels; reaching the bound always passes
    if s >= s_max:
        return True
    return math.exp(s - s_max) > threshold


def identify(
    graph: FactorGraph,
    activation,
    predicted_category: int,
    threshold: float = 0.9,
    mode: str = ALL_SATISFIED,
    cap: int = ENUMERATION_CAP,
) -> str:
    """Return ``COMPREHENSIBLE`` or ``LOGIC_ERROR`` for an explanation."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    a = binarize(activation, predicted_category, graph.num_categories)
    return identify_assignment(graph, a, threshold, mode, cap)


def identify_assignment(graph, assignment, threshold=0.9, mode=ALL_SATISFIED, cap=ENUMERATION_CAP) -> str:
    s = satisfaction_weight(graph, assignment)
    s_max = max_satisfaction(graph, assignment.category, mode, cap)
    return COMPREHENSIBLE if is_comprehensible(s, s_max, threshold) else LOGIC_ERROR


def instance_lsm(graph: FactorGraph, assignment: Assignment) -> float:
    """exp(S - W): 1 when every rule holds (or all weights are zero)."""
    return math.exp(satisfaction_weight(graph, assignment) - graph.total_weight)


def score(
    graph: FactorGraph,
    assignment: Assignment,
    threshold: float = 0.9,
    mode: str = ALL_SATISFIED,
    cap: int = ENUMERATION_CAP,
    exact_probability: bool = False,
) -> ScoreReport:
    s = satisfaction_weight(graph, assignment)
    w = graph.total_weight
    s_max = max_satisfaction(graph, assignment.category, mode, cap)
    log_z = prob = None
    if exact_probability:
        log_z = log_partition(graph, assignment.category, cap)
        prob = math.exp(s - log_z)
    return ScoreReport(
        satisfaction=s,
        total_weight=w,
        max_satisfaction=s_max,
        ratio=math.exp(min(0.0, s - s_max)),
        lsm=math.exp(s - w),
        log_partition=log_z,
        conditional_probability=prob,
        verdict=COMPREHENSIBLE if is_comprehensible(s, s_max, threshold) else LOGIC_ERROR,
    )
