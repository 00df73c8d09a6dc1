"""Erasure, introduction and confounding attacks in concept-activation space.

An attack pushes selected concept activations just across the threshold
``gamma`` while the category prediction must stay fixed; any tentative flip
that changes the prediction is rolled back.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .synth import Instance, classifier_margin, predict_category

ERASURE = "erasure"
INTRODUCTION = "introduction"
CONFOUNDING = "confounding"
KINDS = (ERASURE, INTRODUCTION, CONFOUNDING)

DISPLACEMENT = 0.1


@dataclass(frozen=True)
class AttackSpec:
    kind: str = CONFOUNDING
    budget: int = 1
    gamma: float = 0.5
    seed: int = 0
    erase_targets: tuple[int, ...] | None = None
    introduce_targets: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.budget < 1:
            raise ValueError("attack budget must be at least 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.kind == ERASURE and self.introduce_targets:
            raise ValueError("erasure attacks take erase targets only")
        if self.kind == INTRODUCTION and self.erase_targets:
            raise ValueError("introduction attacks take introduce targets only")

    @property
    def erases(self) -> bool:
        return self.kind in (ERASURE, CONFOUNDING)

    @property
    def introduces(self) -> bool:
        return self.kind in (INTRODUCTION, CONFOUNDING)


@dataclass
class AttackResult:
    activation: np.ndarray
    erased: list[int]
    introduced: list[int]

    @property
    def achieved(self) -> int:
        return len(self.erased) + len(self.introduced)


Predictor = Callable[[np.ndarray], int]


def _pools(act: np.ndarray, spec: AttackSpec):
    active = [int(j) for j in np.flatnonzero(act > spec.gamma)]
    inactive = [int(j) for j in np.flatnonzero(act <= spec.gamma)]
    erase = []
    introduce = []
    if spec.erases:
        targets = active if spec.erase_targets is None else [j for j in spec.erase_targets if j in active]
        erase = targets
    if spec.introduces:
        targets = inactive if spec.introduce_targets is None else [j for j in spec.introduce_targets if j in inactive]
        introduce = targets
    return erase, introduce


def _pushed(act: np.ndarray, j: int, direction: str, gamma: float) -> np.ndarray:
    out = act.copy()
    if direction == ERASURE:
        out[j] = max(0.0, gamma - DISPLACEMENT)
    else:
        out[j] = min(1.0, gamma + DISPLACEMENT)
    return out


def attack(
    activation,
    predicted_category: int,
    spec: AttackSpec,
    predictor: Predictor,
    margin: Callable[[np.ndarray], float] | None = None,
) -> AttackResult:
    """Greedy budgeted attack preserving ``predictor``'s output.

    Candidates are ordered by how much classifier margin survives the flip
    (largest first; seeded shuffle breaks ties).  Confounding attacks
    alternate erasure and introduction while both pools have candidates.
    """
    act = np.asarray(activation, dtype=float).copy()
    rng = np.random.default_rng(spec.seed)
    erase_pool, intro_pool = _pools(act, spec)
    pools = {ERASURE: list(rng.permutation(erase_pool)), INTRODUCTION: list(rng.permutation(intro_pool))}
    order = [ERASURE, INTRODUCTION] if spec.kind == CONFOUNDING else [spec.kind]
    erased: list[int] = []
    introduced: list[int] = []
    turn = 0
    while len(erased) + len(introduced) < spec.budget:
        live = [d for d in order if pools[d]]
        if not live:
            break
        direction = order[turn % len(order)]
        if not pools[direction]:
            direction = live[0]
        turn += 1
        pool = pools[direction]
        if margin is not None:
            # stable sort keeps the shuffled order among equal margins
            pool.sort(key=lambda j: -margin(_pushed(act, int(j), direction, spec.gamma)))
        while pool:
            j = int(pool.pop(0))
            trial = _pushed(act, j, direction, spec.gamma)
            if predictor(trial) == predicted_category:
                act = trial
                (erased if direction == ERASURE else introduced).append(j)
                break
    return AttackResult(act, erased, introduced)


def attack_instance(instance: Instance, spec: AttackSpec, signatures, seed: int | None = None) -> tuple[Instance, AttackResult]:
    """Attack a synthetic instance against the nearest-signature predictor."""
    if seed is not None:
        spec = replace(spec, seed=seed)
    result = attack(
        instance.activation,
        instance.predicted_category,
        spec,
        lambda a: predict_category(a, signatures),
        lambda a: classifier_margin(a, signatures),
    )
    attacked = Instance(
        instance.true_concepts,
        instance.true_category,
        result.activation,
        instance.predicted_category,
        {
            "attack": spec.kind,
            "budget": spec.budget,
            "seed": spec.seed,
            "erased": result.erased,
            "introduced": result.introduced,
        },
    )
    return attacked, result


@dataclass
class SuccessReport:
    erased_crossed: dict[int, bool]
    introduced_crossed: dict[int, bool]
    prediction_unchanged: bool

    @property
    def success(self) -> bool:
        crossed = list(self.erased_crossed.values()) + list(self.introduced_crossed.values())
        return self.prediction_unchanged and bool(crossed) and all(crossed)


def attack_success_check(
    original,
    attacked,
    spec: AttackSpec,
    predictor: Predictor,
    erase_targets: Sequence[int] = (),
    introduce_targets: Sequence[int] = (),
) -> SuccessReport:
    """Which targeted concepts crossed ``gamma`` in the intended direction."""
    before = np.asarray(original, dtype=float)
    after = np.asarray(attacked, dtype=float)
    g = spec.gamma
    erased = {int(j): bool(before[j] > g and after[j] <= g) for j in erase_targets}
    introduced = {int(j): bool(before[j] <= g and after[j] > g) for j in introduce_targets}
    return SuccessReport(erased, introduced, predictor(after) == predictor(before))
