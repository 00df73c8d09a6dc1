"""Metrics, accuracy bounds and end-to-end evaluation runs.

Percentages are on a 0-100 scale.  The pipeline per instance is
attack -> identify -> repair (flagged only) -> re-predict, with LSM always
measured against the full rule graph even when a reduced graph does the
identifying and repairing.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .attacks import AttackSpec, attack_instance
from .graph import FactorGraph, binarize
from .intervention import repair_assignment
from .rules import CATEGORY_CONCEPT, CONCEPT_CONCEPT
from .scoring import (
    ALL_SATISFIED,
    ENUMERATION_CAP,
    LOGIC_ERROR,
    identify_assignment,
    instance_lsm,
    satisfaction_weight,
)
from .synth import CategorySignature, Instance, predict_category

logger = logging.getLogger(__name__)

FAMILY_FILTERS = ("empty", "category", "concept", "both")


class BoundDomainError(ValueError):
    """A logarithm in a bound received a non-positive argument."""


# ---------------------------------------------------------------------------
# metrics

def e_acc(rectified: Sequence, true_concepts: Sequence) -> float:
    """Mean fraction of concepts whose binarised value matches the label, x100."""
    if len(rectified) == 0:
        raise ValueError("E-ACC of an empty dataset is undefined")
    scores = [
        np.mean((np.asarray(r, dtype=float) > 0.5).astype(int) == np.asarray(t, dtype=int))
        for r, t in zip(rectified, true_concepts)
    ]
    return 100.0 * float(np.mean(scores))


def p_acc(rectified: Sequence, true_categories: Sequence[int], predictor: Callable) -> float:
    if len(rectified) == 0:
        raise ValueError("P-ACC of an empty dataset is undefined")
    hits = [predictor(np.asarray(r, dtype=float)) == int(y) for r, y in zip(rectified, true_categories)]
    return 100.0 * float(np.mean(hits))


def detection_rates(clean_flags: Sequence[bool], attacked_flags: Sequence[bool]) -> tuple[float | None, float | None]:
    """(IR, SR): flagged share of attacked inputs, passed share of clean inputs."""
    ir = 100.0 * sum(map(bool, attacked_flags)) / len(attacked_flags) if attacked_flags else None
    sr = 100.0 * sum(not f for f in clean_flags) / len(clean_flags) if clean_flags else None
    return ir, sr


def lsm_mean(graph: FactorGraph, assignments: Sequence) -> float:
    if len(assignments) == 0:
        raise ValueError("LSM of an empty dataset is undefined")
    return 100.0 * float(np.mean([instance_lsm(graph, a) for a in assignments]))


# ---------------------------------------------------------------------------
# bounds

@dataclass(frozen=True)
class BoundInputs:
    """Factor characteristics for one concept/factor pair.

    ``L_*``/``U_*`` bracket the rates: T^P = P(psi=1 | v=c), T^N = P(psi=0 | v=1-c),
    F^N = P(psi=0 | v=c), F^P = P(psi=1 | v=1-c).
    """

    L_TP: float
    U_TP: float
    L_TN: float
    U_TN: float
    L_FN: float
    U_FN: float
    L_FP: float
    U_FP: float
    T_P: float
    T_N: float
    F_N: float
    F_P: float
    c: float = 1.0

    def __post_init__(self):
        for name in ("TP", "TN", "FN", "FP"):
            lo, hi = getattr(self, f"L_{name}"), getattr(self, f"U_{name}")
            rate = getattr(self, f"{name[0]}_{name[1]}")
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"need 0 <= L_{name} <= U_{name} <= 1, got {lo}, {hi}")
            if not lo - 1e-12 <= rate <= hi + 1e-12:
                raise ValueError(f"rate {name} = {rate} outside [L_{name}, U_{name}]")
        if not 0.0 <= self.c <= 1.0:
            raise ValueError("concept label must lie in [0, 1]")

    @classmethod
    def exact(cls, T_P, T_N, F_N, F_P, c=1.0) -> "BoundInputs":
        """Characteristics whose bounds coincide with the rates."""
        return cls(T_P, T_P, T_N, T_N, F_N, F_N, F_P, F_P, T_P, T_N, F_N, F_P, c)


def _xlog(coef: float, num: float, den: float, name: str) -> float:
    # 0 * log(anything) contributes nothing
    if coef == 0.0:
        return 0.0
    if den <= 0.0 or num <= 0.0:
        raise BoundDomainError(f"log argument {num}/{den} is not positive in term for {name}")
    return coef * math.log(num / den)


def lemma2_terms(b: BoundInputs) -> tuple[float, float]:
    c = b.c
    z1 = c * (
        _xlog(b.T_P, b.L_TP, 1 - b.U_FP, "T^P (L_TP, U_FP)")
        + _xlog(1 - b.T_P, 1 - b.U_TP, 1 - b.L_FP, "1-T^P (U_TP, L_FP)")
        - _xlog(b.F_N, b.U_TN, b.L_FN, "F^N (U_TN, L_FN)")
        + _xlog(1 - b.F_N, 1 - b.L_TN, 1 - b.U_FN, "1-F^N (L_TN, U_FN)")
    ) if c > 0 else 0.0
    z2 = (1 - c) * (
        _xlog(b.T_N, b.L_TN, b.U_FN, "T^N (L_TN, U_FN)")
        + _xlog(1 - b.T_N, 1 - b.U_TN, 1 - b.L_FN, "1-T^N (U_TN, L_FN)")
        - _xlog(b.F_P, b.U_TP, b.L_FP, "F^P (U_TP, L_FP)")
        + _xlog(1 - b.F_P, 1 - b.L_TP, 1 - b.U_FP, "1-F^P (L_TP, U_FP)")
    ) if c < 1 else 0.0
    return z1, z2


def lemma2_lower_bound(b: BoundInputs) -> float:
    """Z1 + Z2 - log(c^(1-2c) / (1-c)).

    For a binary label the log term is singular; c = 1 keeps only Z1 and
    c = 0 only Z2.  Fractional ``c`` is treated as a label prior.
    """
    z1, z2 = lemma2_terms(b)
    c = b.c
    if c in (0.0, 1.0):
        return z1 + z2
    return z1 + z2 - ((1 - 2 * c) * math.log(c) - math.log(1 - c))


def tau(U_T: float, L_F: float) -> float:
    """Per-factor range width log(U^T (1 - L^F) / (L^F (1 - U^T)))."""
    if not 0.0 < L_F < 1.0 or not 0.0 < U_T < 1.0:
        raise BoundDomainError(f"tau needs U^T, L^F in (0, 1); got U^T={U_T}, L^F={L_F}")
    return math.log(U_T * (1 - L_F) / (L_F * (1 - U_T)))


def theorem1_bound(lower_bounds: Sequence[float], taus: Sequence[Sequence[float]]) -> float:
    """prod over concepts of 1 - exp(-2 L_c^2 / sum_i tau_i^2), clamped to [0, 1].

    A non-positive L_c gives a vacuous factor of 0.
    """
    if len(lower_bounds) != len(taus):
        raise ValueError("need one tau list per concept")
    bound = 1.0
    for L, ts in zip(lower_bounds, taus):
        ts = list(ts)
        if any(t <= 0 for t in ts):
            raise ValueError("tau values must be positive")
        if L <= 0 or not ts:
            return 0.0
        denom = sum(t * t for t in ts)
        val = 1.0 - math.exp(-2.0 * L * L / denom)
        if not math.isfinite(val):
            raise BoundDomainError(f"non-finite theorem-1 factor for L={L}")
        bound *= val
    return min(1.0, max(0.0, bound))


def theorem2_bound(n_factors: int, theta_t: float, theta_f: float) -> float:
    """1 - exp(-2 N (theta_T - theta_F)); negative when theta_T < theta_F."""
    if not (0.0 <= theta_t <= 1.0 and 0.0 <= theta_f <= 1.0):
        raise ValueError("theta values must lie in [0, 1]")
    return 1.0 - math.exp(-2.0 * n_factors * (theta_t - theta_f))


@dataclass
class FactorCharacteristic:
    factor_id: int
    concept: int
    n_correct: int
    n_wrong: int
    T_P: float | None
    F_N: float | None
    T_N: float | None
    F_P: float | None

    @property
    def theta_t(self) -> float | None:
        return self.T_P

    @property
    def theta_f(self) -> float | None:
        return self.F_P


def estimate_characteristics(graph: FactorGraph, instances: Sequence[Instance]) -> list[FactorCharacteristic]:
    """Empirical conditional satisfaction rates per (factor, incident concept).

    The observed value of a concept is its binarised activation; it is
    "correct" when it equals the ground-truth label.  Empty cells are None.
    """
    m = graph.num_concepts
    assignments = [binarize(inst.activation, inst.predicted_category, graph.num_categories) for inst in instances]
    truth = np.array([inst.true_concepts for inst in instances], dtype=int).reshape(len(instances), m)
    observed = np.array([a.concepts for a in assignments], dtype=int).reshape(len(instances), m)
    psi = np.array([graph.potentials(a) for a in assignments], dtype=bool).reshape(len(instances), len(graph))
    out = []
    for f in graph.factors:
        for j in f.concept_neighbors(m):
            correct = observed[:, j] == truth[:, j]
            n_c, n_w = int(correct.sum()), int((~correct).sum())
            sat_c = int(psi[correct, f.id].sum())
            sat_w = int(psi[~correct, f.id].sum())
            tp = sat_c / n_c if n_c else None
            fp = sat_w / n_w if n_w else None
            out.append(
                FactorCharacteristic(
                    f.id, j, n_c, n_w,
                    tp, None if tp is None else 1 - tp,
                    None if fp is None else 1 - fp, fp,
                )
            )
    return out


def concept_theta(chars: Sequence[FactorCharacteristic], num_concepts: int) -> list[tuple[int, float | None, float | None]]:
    """Per concept: (number of supported factors, mean Theta^T, mean Theta^F)."""
    rows = []
    for j in range(num_concepts):
        cells = [ch for ch in chars if ch.concept == j and ch.T_P is not None and ch.F_P is not None]
        if not cells:
            rows.append((0, None, None))
            continue
        rows.append((len(cells), float(np.mean([ch.T_P for ch in cells])), float(np.mean([ch.F_P for ch in cells]))))
    return rows


# ---------------------------------------------------------------------------
# pipeline

@dataclass(frozen=True)
class PipelineConfig:
    threshold: float = 0.9
    mode: str = ALL_SATISFIED
    max_passes: int = 3
    repair: bool = True
    cap: int = ENUMERATION_CAP


@dataclass
class InstanceResult:
    index: int
    true_category: int
    predicted_category: int
    flagged: bool
    achieved_flips: int
    flips: list[int]
    gains: list[float]
    s_before: float
    s_after: float
    lsm_before: float
    lsm_after: float
    match_before: float
    match_after: float
    predicted_after: int
    rectified: list[float] = field(repr=False)
    rectified_bits: list[int] = field(repr=False)
    activation: list[float] = field(default_factory=list, repr=False)
    provenance: dict = field(default_factory=dict, repr=False)

    def attacked_instance(self, original: Instance) -> Instance:
        """The instance as the pipeline saw it (post-attack)."""
        return Instance(
            original.true_concepts,
            original.true_category,
            np.asarray(self.activation, dtype=float),
            original.predicted_category,
            dict(self.provenance),
        )


@dataclass
class MetricsReport:
    run: str
    budget: int | None
    count: int
    flagged: int
    lsm_before: float
    lsm: float
    e_acc_before: float
    e_acc: float
    p_acc_before: float
    p_acc: float
    ir: float | None
    sr: float | None
    passed: int | None = None
    zero_flip: int = 0

    def as_row(self) -> dict:
        return asdict(self)


def _seed_for(base: int, budget: int, index: int) -> int:
    return int(np.random.SeedSequence([base, budget, index]).generate_state(1)[0])


def process_instance(
    index: int,
    inst: Instance,
    graph: FactorGraph,
    eval_graph: FactorGraph,
    signatures: Sequence[CategorySignature],
    config: PipelineConfig,
    spec: AttackSpec | None,
) -> InstanceResult:
    achieved = 0
    if spec is not None:
        inst, res = attack_instance(inst, spec, signatures, seed=_seed_for(spec.seed, spec.budget, index))
        achieved = res.achieved
    k = graph.num_categories
    act = inst.activation
    start = binarize(act, inst.predicted_category, k)
    flagged = identify_assignment(graph, start, config.threshold, config.mode, config.cap) == LOGIC_ERROR
    applied = []
    rectified = np.asarray(act, dtype=float)
    if flagged and config.repair:
        working, applied, _ = repair_assignment(graph, start, config.max_passes)
        mask = np.zeros(graph.num_concepts, dtype=int)
        for case in applied:
            mask[list(case.flip_set)] = 1
        z = np.asarray(working.concepts, dtype=int)
        rectified = z * mask + rectified * (1 - mask)
    after = binarize(rectified, inst.predicted_category, k)
    truth = np.asarray(inst.true_concepts, dtype=int)
    return InstanceResult(
        index=index,
        true_category=inst.true_category,
        predicted_category=inst.predicted_category,
        flagged=flagged,
        achieved_flips=achieved,
        flips=[j for c in applied for j in c.flip_set],
        gains=[c.gain for c in applied],
        s_before=satisfaction_weight(eval_graph, start),
        s_after=satisfaction_weight(eval_graph, after),
        lsm_before=instance_lsm(eval_graph, start),
        lsm_after=instance_lsm(eval_graph, after),
        match_before=float(np.mean(np.asarray(start.concepts) == truth)),
        match_after=float(np.mean(np.asarray(after.concepts) == truth)),
        predicted_after=predict_category(rectified, signatures),
        rectified=[float(x) for x in rectified],
        rectified_bits=list(after.concepts),
        activation=[float(x) for x in act],
        provenance=dict(inst.provenance),
    )


def _guarded(index, inst, graph, eval_graph, signatures, config, spec) -> InstanceResult | None:
    try:
        return process_instance(index, inst, graph, eval_graph, signatures, config, spec)
    except Exception:  # one bad record must not sink a whole run
        logger.exception("instance %d failed; skipped", index)
        return None


_WORKER_STATE: dict = {}


def _init_worker(state):
    _WORKER_STATE.update(state)


def _worker(item):
    index, inst = item
    s = _WORKER_STATE
    return _guarded(index, inst, s["graph"], s["eval_graph"], s["signatures"], s["config"], s["spec"])


def run_instances(
    instances: Sequence[Instance],
    graph: FactorGraph,
    signatures: Sequence[CategorySignature],
    config: PipelineConfig,
    spec: AttackSpec | None = None,
    eval_graph: FactorGraph | None = None,
    workers: int = 1,
) -> list[InstanceResult]:
    """Run the pipeline over ``instances``; results come back in input order.

    Instances that raise are logged and dropped.  Every random draw is
    keyed by the instance index, so the worker count never changes results.
    """
    eval_graph = eval_graph if eval_graph is not None else graph
    items = list(enumerate(instances))
    if workers <= 1 or len(items) < 64:
        out = [_guarded(i, inst, graph, eval_graph, signatures, config, spec) for i, inst in items]
    else:
        state = dict(graph=graph, eval_graph=eval_graph, signatures=list(signatures), config=config, spec=spec)
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(state,)) as pool:
            out = list(pool.map(_worker, items, chunksize=max(1, len(items) // (4 * workers))))
    return [r for r in out if r is not None]


def summarize(run: str, budget: int | None, results: Sequence[InstanceResult], clean: bool) -> MetricsReport:
    n = len(results)
    flagged = sum(r.flagged for r in results)
    if n == 0:
        raise ValueError("cannot summarise an empty result set")
    mean = lambda xs: float(np.mean(xs))  # noqa: E731
    effective = [r for r in results if clean or r.achieved_flips > 0]
    ir, sr = detection_rates(
        [r.flagged for r in results] if clean else [],
        [] if clean else [r.flagged for r in effective],
    )
    return MetricsReport(
        run=run,
        budget=budget,
        count=n,
        flagged=flagged,
        lsm_before=100 * mean([r.lsm_before for r in results]),
        lsm=100 * mean([r.lsm_after for r in results]),
        e_acc_before=100 * mean([r.match_before for r in results]),
        e_acc=100 * mean([r.match_after for r in results]),
        p_acc_before=100 * mean([r.predicted_category == r.true_category for r in results]),
        p_acc=100 * mean([r.predicted_after == r.true_category for r in results]),
        ir=ir,
        sr=sr,
        passed=n - flagged if clean else None,
        zero_flip=0 if clean else n - len(effective),
    )


@dataclass
class ExperimentResult:
    reports: list[MetricsReport]
    instances: dict[str, list[InstanceResult]]
    timings: dict[str, float]


def run_experiment(
    graph: FactorGraph,
    signatures: Sequence[CategorySignature],
    instances: Sequence[Instance],
    budgets: Sequence[int],
    kind: str = "confounding",
    gamma: float = 0.5,
    attack_seed: int = 0,
    config: PipelineConfig | None = None,
    eval_graph: FactorGraph | None = None,
    include_clean: bool = True,
    workers: int = 1,
) -> ExperimentResult:
    """One clean row plus one attacked row per budget."""
    config = config or PipelineConfig()
    reports, detail, timings = [], {}, {}
    if include_clean:
        t0 = time.perf_counter()
        res = run_instances(instances, graph, signatures, config, None, eval_graph, workers)
        timings["clean"] = time.perf_counter() - t0
        reports.append(summarize("clean", None, res, clean=True))
        detail["clean"] = res
    for b in budgets:
        spec = AttackSpec(kind=kind, budget=int(b), gamma=gamma, seed=attack_seed)
        t0 = time.perf_counter()
        res = run_instances(instances, graph, signatures, config, spec, eval_graph, workers)
        timings[f"B={b}"] = time.perf_counter() - t0
        reports.append(summarize(f"{kind}", int(b), res, clean=False))
        detail[f"B={b}"] = res
    return ExperimentResult(reports, detail, timings)


def family_subset(graph: FactorGraph, family: str) -> list[int]:
    if family == "empty":
        return []
    if family == "both":
        return list(range(len(graph)))
    want = {"category": CATEGORY_CONCEPT, "concept": CONCEPT_CONCEPT}[family]
    return [f.id for f in graph.factors if f.family == want]


@dataclass
class SweepRow:
    kind: str
    setting: str
    repeat: int
    n_factors: int
    report: MetricsReport

    def as_row(self) -> dict:
        row = {"sweep": self.kind, "setting": self.setting, "repeat": self.repeat, "n_factors": self.n_factors}
        row.update(self.report.as_row())
        return row


def sweep_and_ablation(
    graph: FactorGraph,
    signatures: Sequence[CategorySignature],
    instances: Sequence[Instance],
    ratios: Sequence[float] = (0.25, 0.5, 0.75, 1.0),
    families: Sequence[str] = FAMILY_FILTERS,
    budget: int = 4,
    kind: str = "confounding",
    gamma: float = 0.5,
    attack_seed: int = 0,
    repeats: int = 5,
    seed: int = 0,
    config: PipelineConfig | None = None,
    workers: int = 1,
) -> list[SweepRow]:
    """Factor-subgraph ratio sweep and rule-family ablation at one budget.

    Each repeat redraws the random subgraph and the attack seed; LSM is
    always scored on the full ``graph``.
    """
    config = config or PipelineConfig()
    rows = []
    n = len(graph)
    for ratio in ratios:
        if not 0.0 < ratio <= 1.0:
            raise ValueError(f"ratio {ratio} outside (0, 1]")
        for r in range(repeats):
            rng = np.random.default_rng([seed, r, int(round(ratio * 1e6))])
            size = math.ceil(ratio * n)
            ids = sorted(int(i) for i in rng.choice(n, size=size, replace=False)) if size < n else list(range(n))
            sub = graph.subgraph(ids)
            spec = AttackSpec(kind=kind, budget=budget, gamma=gamma, seed=attack_seed + r)
            res = run_instances(instances, sub, signatures, config, spec, graph, workers)
            rows.append(SweepRow("ratio", f"{ratio:g}", r, len(ids), summarize(kind, budget, res, clean=False)))
    for fam in families:
        ids = family_subset(graph, fam)
        sub = graph.subgraph(ids)
        for r in range(repeats):
            spec = AttackSpec(kind=kind, budget=budget, gamma=gamma, seed=attack_seed + r)
            res = run_instances(instances, sub, signatures, config, spec, graph, workers)
            rows.append(SweepRow("family", fam, r, len(ids), summarize(kind, budget, res, clean=False)))
    return rows


def mean_by_setting(rows: Sequence[SweepRow], kind: str, metric: str) -> dict[str, float]:
    out: dict[str, list[float]] = {}
    for row in rows:
        if row.kind == kind:
            out.setdefault(row.setting, []).append(getattr(row.report, metric))
    return {k: float(np.mean(v)) for k, v in out.items()}


def concept_accuracy_vs_bound(
    graph: FactorGraph,
    attacked: Sequence[Instance],
    results: Sequence[InstanceResult],
) -> list[dict]:
    """Per-concept post-repair accuracy next to the factor-count bound."""
    m = graph.num_concepts
    chars = estimate_characteristics(graph, attacked)
    thetas = concept_theta(chars, m)
    truth = np.array([inst.true_concepts for inst in attacked], dtype=int).reshape(len(attacked), m)
    after = np.array([r.rectified_bits for r in results], dtype=int).reshape(len(results), m)
    rows = []
    for j, (n_j, th_t, th_f) in enumerate(thetas):
        acc = float(np.mean(after[:, j] == truth[:, j]))
        if n_j == 0:
            bound, ok_assumption = 0.0, False
        else:
            bound = theorem2_bound(n_j, th_t, th_f)
            ok_assumption = th_t > th_f
        rows.append(
            {
                "concept": j,
                "n_factors": n_j,
                "theta_t": th_t,
                "theta_f": th_f,
                "assumption_holds": ok_assumption,
                "bound": bound,
                "accuracy": acc,
                "meets_bound": acc >= bound - 0.02,
            }
        )
    return rows
