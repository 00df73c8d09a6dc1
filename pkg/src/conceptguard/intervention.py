"""Interactive intervention switch: repair logic-violating explanations.

For every violated factor, each nonempty subset of its concept variables is a
candidate flip.  Its gain is the weighted change of potentials over the
factor and every factor sharing a variable with it.  The best case of each
violated factor becomes a candidate; candidates are applied greedily by
descending gain onto a working assignment, never touching a concept twice,
and the rectified activation keeps untouched concepts at their original
values.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .graph import Assignment, FactorGraph, binarize
from .scoring import ALL_SATISFIED, ENUMERATION_CAP, LOGIC_ERROR, identify_assignment

_EPS = 1e-12


@dataclass(frozen=True)
class InterventionCase:
    factor_id: int
    flip_set: tuple[int, ...]
    gain: float = 0.0


@dataclass(frozen=True)
class RepairConfig:
    max_passes: int = 3
    threshold: float = 0.9
    mode: str = ALL_SATISFIED
    force: bool = False
    cap: int = ENUMERATION_CAP


@dataclass
class InterventionPlan:
    applied_cases: list[InterventionCase]
    z: np.ndarray
    mask: np.ndarray
    rectified: np.ndarray
    cases_per_pass: list[int] = field(default_factory=list)

    @property
    def cases_evaluated(self) -> int:
        return sum(self.cases_per_pass)

    @property
    def flipped(self) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.mask)]

    @property
    def is_empty(self) -> bool:
        return not self.applied_cases


def enumerate_cases(graph: FactorGraph, factor_id: int) -> list[InterventionCase]:
    """All 2^p - 1 nonempty flip subsets of the factor's p concept variables.

    Smaller subsets come first, so ties in gain favour the least intrusive
    intervention.  Category-only factors yield no cases.
    """
    concepts = graph.factors[factor_id].concept_neighbors(graph.num_concepts)
    return [
        InterventionCase(factor_id, subset)
        for size in range(1, len(concepts) + 1)
        for subset in itertools.combinations(concepts, size)
    ]


def potential_difference(
    graph: FactorGraph, assignment: Assignment, case: InterventionCase, psi=None
) -> float:
    """Weighted change of potentials over the factor's neighbourhood.

    Only factors touching a flipped variable can change, so the sum runs
    over those members of the neighbourhood; the rest contribute exactly 0.
    ``psi`` may carry the current potentials to skip re-evaluating them.
    """
    after = assignment.flipped(case.flip_set).values
    before = assignment.values
    factors = graph.factors
    hood = graph.neighbor_factors(case.factor_id)
    touched = sorted({j for v in case.flip_set for j in graph.var_to_factors[v] if j in hood})
    gain = 0.0
    for j in touched:
        f = factors[j]
        was = psi[j] if psi is not None else f.holds(before)
        gain += f.weight * (int(f.holds(after)) - int(was))
    return gain


def best_case(
    graph: FactorGraph, assignment: Assignment, factor_id: int, psi=None
) -> tuple[InterventionCase | None, int]:
    """Highest-gain case of one factor and the number of cases scored."""
    best = None
    cases = enumerate_cases(graph, factor_id)
    for case in cases:
        s = potential_difference(graph, assignment, case, psi)
        if best is None or s > best.gain + _EPS:
            best = InterventionCase(case.factor_id, case.flip_set, s)
    return best, len(cases)


def repair_assignment(
    graph: FactorGraph, assignment: Assignment, max_passes: int = 3
) -> tuple[Assignment, list[InterventionCase], list[int]]:
    """Greedy repair on binary assignments; returns the working assignment,
    applied cases in order, and cases scored per pass."""
    working = assignment
    applied: list[InterventionCase] = []
    intervened: set[int] = set()
    per_pass: list[int] = []
    for _ in range(max_passes):
        candidates = []
        scored = 0
        psi = graph.potentials(working)
        for f in graph.factors:
            if psi[f.id]:
                continue
            cand, n = best_case(graph, working, f.id, psi)
            scored += n
            if cand is not None and cand.gain > _EPS:
                candidates.append(cand)
        per_pass.append(scored)
        if not candidates:
            break
        candidates.sort(key=lambda c: (-c.gain, c.factor_id))
        progress = False
        for cand in candidates:
            if intervened.intersection(cand.flip_set):
                continue
            if graph.factors[cand.factor_id].holds(working.values):
                continue
            s = potential_difference(graph, working, cand)
            if s <= _EPS:
                continue
            working = working.flipped(cand.flip_set)
            intervened.update(cand.flip_set)
            applied.append(InterventionCase(cand.factor_id, cand.flip_set, s))
            progress = True
        if not progress:
            break
    return working, applied, per_pass


def repair(graph: FactorGraph, activation, predicted_category: int, config: RepairConfig | None = None) -> InterventionPlan:
    """Rectify ``activation``: c_re = z * m + c * (1 - m)."""
    config = config or RepairConfig()
    act = np.asarray(activation, dtype=float)
    start = binarize(act, predicted_category, graph.num_categories)
    m = graph.num_concepts
    if not config.force:
        verdict = identify_assignment(graph, start, config.threshold, config.mode, config.cap)
        if verdict != LOGIC_ERROR:
            return InterventionPlan([], np.zeros(m, dtype=int), np.zeros(m, dtype=int), act.copy())
    working, applied, per_pass = repair_assignment(graph, start, config.max_passes)
    mask = np.zeros(m, dtype=int)
    for case in applied:
        mask[list(case.flip_set)] = 1
    z = np.asarray(working.concepts, dtype=int) * mask
    rectified = z * mask + act * (1 - mask)
    return InterventionPlan(applied, z, mask, rectified, per_pass)
