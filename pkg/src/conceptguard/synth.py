"""Synthetic concept-bottleneck benchmark.

Each category owns a fixed set of ``k`` concepts (its signature).  Instances
carry the signature as ground-truth explanation, a noisy activation from a
stand-in concept predictor, and a category predicted by nearest signature.
Rules are read off the signature table: every pairwise relation that holds
on all signatures is emitted, so clean instances satisfy every derived rule.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import BINARIZE_THRESHOLD
from .rules import (
    AND,
    IFF,
    NOT,
    OR,
    XOR,
    CATEGORY,
    CONCEPT,
    Connective,
    Literal,
    Rule,
)


class InfeasibleSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class CategorySignature:
    category: int
    concepts: frozenset[int]

    def indicator(self, num_concepts: int) -> np.ndarray:
        v = np.zeros(num_concepts, dtype=int)
        v[sorted(self.concepts)] = 1
        return v


@dataclass
class Instance:
    true_concepts: np.ndarray
    true_category: int
    activation: np.ndarray
    predicted_category: int
    provenance: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = {
            "true_concepts": [int(b) for b in self.true_concepts],
            "true_category": int(self.true_category),
            "activation": [float(a) for a in self.activation],
            "predicted_category": int(self.predicted_category),
        }
        if self.provenance:
            rec["provenance"] = self.provenance
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Instance":
        return cls(
            np.asarray(rec["true_concepts"], dtype=int),
            int(rec["true_category"]),
            np.asarray(rec["activation"], dtype=float),
            int(rec["predicted_category"]),
            dict(rec.get("provenance", {})),
        )


def hamming(a, b) -> int:
    return int(np.sum(np.asarray(a) != np.asarray(b)))


def _draw_signatures(K, M, k, rng, min_distance, attempts=200):
    """Random distinct k-subsets, greedily keeping pairwise distance >= min_distance."""
    pool = [frozenset(s) for s in itertools.combinations(range(M), k)]
    for _ in range(attempts):
        order = rng.permutation(len(pool))
        chosen: list[frozenset] = []
        for idx in order:
            cand = pool[idx]
            # |A ^ B| for equal-size sets is the Hamming distance of indicators
            if all(len(cand ^ s) >= min_distance for s in chosen):
                chosen.append(cand)
                if len(chosen) == K:
                    return chosen
    raise InfeasibleSchemaError(
        f"could not draw {K} signatures of size {k} over {M} concepts "
        f"with pairwise distance >= {min_distance}"
    )


def gen_signatures(K: int, M: int, k: int, seed: int, min_distance: int = 4) -> list[CategorySignature]:
    if K < 2 or M < 1:
        raise InfeasibleSchemaError("need K >= 2 categories and M >= 1 concepts")
    if not 1 <= k <= M:
        raise InfeasibleSchemaError(f"signature size {k} must lie in 1..{M}")
    if K > math.comb(M, k):
        raise InfeasibleSchemaError(f"only C({M},{k}) = {math.comb(M, k)} distinct signatures exist, need {K}")
    rng = np.random.default_rng(seed)
    sets = _draw_signatures(K, M, k, rng, max(1, min_distance))
    return [CategorySignature(j, s) for j, s in enumerate(sets)]


def simulate_concept_predictor(true_concepts, noise: float, rng) -> np.ndarray:
    """Active concepts land in [1 - noise, 1], inactive ones in [0, noise]."""
    if not 0.0 <= noise < BINARIZE_THRESHOLD:
        raise ValueError("noise must lie in [0, 0.5)")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    c = np.asarray(true_concepts, dtype=float)
    u = rng.uniform(0.0, noise, size=c.shape) if noise > 0 else np.zeros_like(c)
    return np.clip(np.where(c > 0, 1.0 - u, u), 0.0, 1.0)


def predict_category(activation, signatures: list[CategorySignature]) -> int:
    """Nearest signature in Hamming distance after binarising; lowest id wins ties."""
    act = np.asarray(activation, dtype=float)
    bits = (act > BINARIZE_THRESHOLD).astype(int)
    best, best_d = 0, None
    for sig in signatures:
        d = hamming(bits, sig.indicator(len(act)))
        if best_d is None or d < best_d:
            best, best_d = sig.category, d
    return best


def classifier_margin(activation, signatures: list[CategorySignature]) -> int:
    """Distance gap between the runner-up and the nearest signature."""
    bits = (np.asarray(activation) > BINARIZE_THRESHOLD).astype(int)
    ds = sorted(hamming(bits, s.indicator(len(bits))) for s in signatures)
    return ds[1] - ds[0]


def gen_dataset(
    K: int,
    M: int,
    k: int,
    n_samples: int,
    seed: int,
    noise: float = 0.1,
    min_distance: int = 4,
) -> tuple[list[CategorySignature], list[Instance]]:
    """Signatures plus ``n_samples`` instances with categories drawn uniformly."""
    signatures = gen_signatures(K, M, k, seed, min_distance)
    seeds = np.random.SeedSequence(seed).spawn(n_samples + 1)
    cat_rng = np.random.default_rng(seeds[0])
    categories = cat_rng.integers(0, K, size=n_samples)
    instances = []
    for i, y in enumerate(categories):
        truth = signatures[int(y)].indicator(M)
        act = simulate_concept_predictor(truth, noise, np.random.default_rng(seeds[i + 1]))
        instances.append(Instance(truth, int(y), act, predict_category(act, signatures)))
    return signatures, instances


def _lit(kind, idx, negated=False):
    return Literal(kind, idx, negated)


def derive_rules(signatures: list[CategorySignature], num_concepts: int, omission_rate: float = 0.0, seed: int = 0) -> tuple[Rule, ...]:
    """Rules that every signature satisfies, with random omission.

    Category-concept: ``c <-> yj`` when only category j uses c; otherwise
    ``NOT yj OR c`` for owners and ``NOT yj OR NOT c`` for the rest.
    Concept-concept: ``ca XOR cb`` when every signature has exactly one of
    the pair, ``NOT (ca AND cb)`` when none has both, ``ca <-> cb`` when
    they always appear together.  Each rule survives with probability
    ``1 - omission_rate``; survivors get confidence 1.0.
    """
    if not 0.0 <= omission_rate < 1.0:
        raise ValueError("omission_rate must lie in [0, 1)")
    members = [set() for _ in range(num_concepts)]
    for sig in signatures:
        for c in sig.concepts:
            members[c].add(sig.category)
    categories = [s.category for s in signatures]

    formulas = []
    for c in range(num_concepts):
        owners = members[c]
        if len(owners) == 1:
            (j,) = owners
            formulas.append(Connective(IFF, (_lit(CONCEPT, c), _lit(CATEGORY, j))))
            continue
        for j in categories:
            formulas.append(Connective(OR, (_lit(CATEGORY, j, True), _lit(CONCEPT, c, j not in owners))))

    for a, b in itertools.combinations(range(num_concepts), 2):
        both = members[a] & members[b]
        either = members[a] | members[b]
        if not both and len(either) == len(categories):
            formulas.append(Connective(XOR, (_lit(CONCEPT, a), _lit(CONCEPT, b))))
        elif not both:
            formulas.append(Connective(NOT, (Connective(AND, (_lit(CONCEPT, a), _lit(CONCEPT, b))),)))
        elif members[a] == members[b]:
            formulas.append(Connective(IFF, (_lit(CONCEPT, a), _lit(CONCEPT, b))))

    rng = np.random.default_rng(seed)
    keep = rng.random(len(formulas)) >= omission_rate
    kept = [f for f, k in zip(formulas, keep) if k]
    return tuple(Rule(i, f, confidence=1.0) for i, f in enumerate(kept))


def write_instances(path, instances) -> None:
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_record(), sort_keys=True) + "\n")


def read_instances(path) -> list[Instance]:
    with open(path) as fh:
        return [Instance.from_record(json.loads(line)) for line in fh if line.strip()]


def signatures_to_json(signatures) -> list[dict]:
    return [{"category": s.category, "concepts": sorted(s.concepts)} for s in signatures]


def signatures_from_json(data) -> list[CategorySignature]:
    return [CategorySignature(int(d["category"]), frozenset(int(c) for c in d["concepts"])) for d in data]
