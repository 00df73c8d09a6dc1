from __future__ import annotations

import math

import numpy as np
import pytest

from conceptguard.attacks import AttackSpec
from conceptguard.evaluation import (
    BoundDomainError,
    BoundInputs,
    MetricsReport,
    PipelineConfig,
    concept_accuracy_vs_bound,
    concept_theta,
    detection_rates,
    e_acc,
    estimate_characteristics,
    family_subset,
    lemma2_lower_bound,
    lsm_mean,
    mean_by_setting,
    p_acc,
    run_experiment,
    run_instances,
    sweep_and_ablation,
    tau,
    theorem1_bound,
    theorem2_bound,
)
from conceptguard.graph import Assignment, build_graph
from conceptguard.rules import RuleSchema, parse_rules
from conceptguard.synth import Instance, derive_rules, gen_dataset, predict_category
from conceptguard.weights import prior_weights


@pytest.fixture(scope="module")
def bench():
    sigs, inst = gen_dataset(12, 10, 4, 120, seed=0)
    rules = derive_rules(sigs, 10)
    g = build_graph(rules, RuleSchema(10, 12), prior_weights(rules))
    return g, sigs, inst


class TestMetrics:
    def test_e_acc(self):
        t = [np.array([1, 0, 1, 0])] * 2
        assert e_acc([np.array([0.9, 0.1, 0.8, 0.2])] * 2, t) == 100.0
        ten = np.zeros(10)
        assert e_acc([np.eye(10)[0]] * 3, [ten] * 3) == pytest.approx(90.0)
        # mixed: 4/4, 3/4, 2/4, 0/4 -> mean 0.5625
        truth = [np.array([1, 1, 0, 0])] * 4
        rect = [
            np.array([1.0, 1.0, 0.0, 0.0]),
            np.array([1.0, 1.0, 0.9, 0.0]),
            np.array([0.2, 1.0, 0.9, 0.0]),
            np.array([0.0, 0.5, 1.0, 1.0]),
        ]
        assert e_acc(rect, truth) == pytest.approx(56.25)
        with pytest.raises(ValueError):
            e_acc([], [])

    def test_p_acc(self, bench):
        _, sigs, inst = bench
        pred = lambda a: predict_category(a, sigs)  # noqa: E731
        assert p_acc([i.true_concepts for i in inst], [i.true_category for i in inst], pred) == 100.0
        rect = [sigs[0].indicator(10), sigs[1].indicator(10), sigs[2].indicator(10)]
        assert p_acc(rect, [0, 1, 0], pred) == pytest.approx(200 / 3)
        with pytest.raises(ValueError):
            p_acc([], [], pred)

    def test_detection_rates(self):
        assert detection_rates([False] * 3, [True] * 4) == (100.0, 100.0)
        assert detection_rates([False, True], [True, False, False, False]) == (25.0, 50.0)
        assert detection_rates([], [True]) == (100.0, None)
        assert detection_rates([False], []) == (None, 100.0)

    def test_lsm_mean(self):
        g = build_graph(parse_rules("c0\nc1"), RuleSchema(2, 2), [0.3, 0.6])
        full = Assignment.from_parts([1, 1], 0, 2)
        one = Assignment.from_parts([1, 0], 0, 2)
        assert lsm_mean(g, [full, full]) == pytest.approx(100.0)
        assert lsm_mean(g, [one]) == pytest.approx(100 * math.exp(-0.6))
        assert lsm_mean(g, [full, one]) == pytest.approx(lsm_mean(g, [one, full]))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        rect = [rng.random(6) for _ in range(20)]
        truth = [rng.integers(0, 2, 6) for _ in range(20)]
        perm = rng.permutation(20)
        assert e_acc(rect, truth) == pytest.approx(e_acc([rect[i] for i in perm], [truth[i] for i in perm]))


def _lemma2_reference(T_P, T_N, F_N, F_P, L, U, c):
    """Direct transcription; a side whose coefficient is zero is not evaluated."""
    z1 = z2 = 0.0
    if c > 0:
        z1 = c * (
            T_P * math.log(L["TP"] / (1 - U["FP"]))
            + (1 - T_P) * math.log((1 - U["TP"]) / (1 - L["FP"]))
            - F_N * math.log(U["TN"] / L["FN"])
            + (1 - F_N) * math.log((1 - L["TN"]) / (1 - U["FN"]))
        )
    if c < 1:
        z2 = (1 - c) * (
            T_N * math.log(L["TN"] / U["FN"])
            + (1 - T_N) * math.log((1 - U["TN"]) / (1 - L["FN"]))
            - F_P * math.log(U["TP"] / L["FP"])
            + (1 - F_P) * math.log((1 - L["TP"]) / (1 - U["FP"]))
        )
    return z1, z2


class TestBounds:
    def test_lemma2_matches_reference(self):
        rates = dict(T_P=0.9, T_N=0.85, F_N=0.1, F_P=0.2)
        LU = {"TP": 0.9, "TN": 0.85, "FN": 0.1, "FP": 0.2}
        for c in (0.0, 1.0):
            z1, z2 = _lemma2_reference(*rates.values(), LU, LU, c)
            assert lemma2_lower_bound(BoundInputs.exact(c=c, **rates)) == pytest.approx(z1 + z2, rel=1e-12)

    def test_symmetric_closed_form(self):
        # T = 0.9, F = 0.1 everywhere: Z1 = -(0.1 + 0.1 + 0.9) log 9
        b = BoundInputs.exact(0.9, 0.9, 0.1, 0.1, c=1.0)
        assert lemma2_lower_bound(b) == pytest.approx(-1.1 * math.log(9))

    def test_fractional_label_keeps_log_term(self):
        b = BoundInputs.exact(0.9, 0.8, 0.1, 0.2, c=0.5)
        LU = {"TP": 0.9, "TN": 0.8, "FN": 0.1, "FP": 0.2}
        z1, z2 = _lemma2_reference(0.9, 0.8, 0.1, 0.2, LU, LU, 0.5)
        # c^(1-2c) / (1-c) at c = 1/2 is 1 / 0.5
        assert lemma2_lower_bound(b) == pytest.approx(z1 + z2 - math.log(2.0))

    def test_c_one_drops_z2(self):
        # the T^N/F^P side would hit log(0) here, yet c = 1 never evaluates it
        b = BoundInputs(0.8, 0.8, 0.5, 0.5, 0.2, 0.2, 0.0, 0.0, 0.8, 0.5, 0.2, 0.0, c=1.0)
        LU = {"TP": 0.8, "TN": 0.5, "FN": 0.2, "FP": 0.0}
        z1, z2 = _lemma2_reference(0.8, 0.5, 0.2, 0.0, LU, LU, 1.0)
        assert z2 == 0.0
        assert lemma2_lower_bound(b) == pytest.approx(z1)

    def test_domain_error_names_symbol(self):
        b = BoundInputs(0.9, 0.9, 0.9, 0.9, 0.1, 0.1, 1.0, 1.0, 0.9, 0.9, 0.1, 1.0, c=1.0)
        with pytest.raises(BoundDomainError, match="U_FP"):
            lemma2_lower_bound(b)

    def test_perfect_rates_hit_log_zero(self):
        with pytest.raises(BoundDomainError):
            lemma2_lower_bound(BoundInputs.exact(1.0, 1.0, 0.0, 0.0, c=1.0))

    def test_bound_inputs_invariants(self):
        with pytest.raises(ValueError):
            BoundInputs(0.9, 0.8, 0, 1, 0, 1, 0, 1, 0.85, 0.5, 0.5, 0.5)
        with pytest.raises(ValueError):
            BoundInputs(0.1, 0.2, 0, 1, 0, 1, 0, 1, 0.5, 0.5, 0.5, 0.5)

    def test_theorem1(self):
        assert theorem1_bound([1.0], [[1.0, 1.0]]) == pytest.approx(1 - math.exp(-1))
        assert theorem1_bound([0.0], [[1.0]]) == 0.0
        assert theorem1_bound([0.0, 2.0], [[1.0], [1.0]]) == 0.0
        a = theorem1_bound([1.0], [[1.0]])
        b = theorem1_bound([2.0], [[1.0]])
        assert theorem1_bound([1.0, 2.0], [[1.0], [1.0]]) == pytest.approx(a * b)
        with pytest.raises(ValueError):
            theorem1_bound([1.0], [[0.0]])

    def test_theorem1_monotone_and_bounded(self):
        prev = -1.0
        for L in np.linspace(0, 5, 51):
            v = theorem1_bound([L, 1.0], [[0.5, 1.0], [2.0]])
            assert 0.0 <= v <= 1.0
            assert v >= prev - 1e-15
            prev = v

    def test_tau(self):
        assert tau(0.9, 0.1) == pytest.approx(math.log(81))
        with pytest.raises(BoundDomainError):
            tau(1.0, 0.1)

    def test_theorem2(self):
        assert theorem2_bound(0, 0.9, 0.1) == 0.0
        assert theorem2_bound(25, 0.4, 0.4) == 0.0
        assert theorem2_bound(10, 0.7, 0.5) == pytest.approx(1 - math.exp(-4), abs=1e-12)
        assert theorem2_bound(10, 0.7, 0.5) == pytest.approx(0.98168, abs=1e-5)
        assert theorem2_bound(3, 0.2, 0.6) < 0
        vals = [theorem2_bound(n, 0.6, 0.55) for n in range(101)]
        assert all(b > a for a, b in zip(vals, vals[1:]))
        with pytest.raises(ValueError):
            theorem2_bound(1, 1.5, 0.0)


class TestCharacteristics:
    def test_always_satisfied_when_correct(self, bench):
        g, _, inst = bench
        chars = estimate_characteristics(g, inst[:40])
        assert all(ch.T_P == 1.0 for ch in chars)
        # clean data: no wrong concepts, so the F cells are empty
        assert all(ch.F_P is None and ch.T_N is None for ch in chars)

    def test_uniform_random_matches_enumeration(self):
        g = build_graph(parse_rules("c0 AND c1"), RuleSchema(2, 2), [1.0])
        rng = np.random.default_rng(0)
        data = [
            Instance(rng.integers(0, 2, 2), 0, rng.integers(0, 2, 2).astype(float) * 0.8 + 0.1, 0)
            for _ in range(4000)
        ]
        chars = estimate_characteristics(g, data)
        assert len(chars) == 2
        for ch in chars:
            assert ch.T_P == pytest.approx(0.25, abs=0.03)
            assert ch.F_P == pytest.approx(0.25, abs=0.03)

    def test_concept_theta_empty_cells(self):
        g = build_graph(parse_rules("c0 XOR c1"), RuleSchema(3, 2), [1.0])
        data = [Instance(np.array([1, 0, 0]), 0, np.array([0.9, 0.1, 0.1]), 0)]
        rows = concept_theta(estimate_characteristics(g, data), 3)
        assert rows[2] == (0, None, None)


class TestPipeline:
    def test_headline_shape(self, bench):
        g, sigs, inst = bench
        res = run_experiment(g, sigs, inst, [1, 2, 3, 4])
        assert len(res.reports) == 5
        clean = res.reports[0]
        assert clean.sr == 100.0 and clean.ir is None and clean.passed == clean.count
        for rep in res.reports[1:]:
            assert rep.ir >= 95.0
            assert rep.lsm > rep.lsm_before
            assert rep.e_acc >= rep.e_acc_before
            assert rep.p_acc >= rep.p_acc_before
            assert rep.flagged <= rep.count
            for v in (rep.lsm, rep.e_acc, rep.p_acc, rep.ir):
                assert 0.0 <= v <= 100.0

    def test_no_repair_passes_through(self, bench):
        g, sigs, inst = bench
        res = run_experiment(g, sigs, inst, [2], config=PipelineConfig(repair=False), include_clean=False)
        rep = res.reports[0]
        assert rep.lsm == pytest.approx(rep.lsm_before)
        assert rep.e_acc == pytest.approx(rep.e_acc_before)
        assert rep.p_acc == pytest.approx(rep.p_acc_before)

    def test_workers_do_not_change_results(self, bench):
        g, sigs, inst = bench
        spec = AttackSpec(budget=3, seed=4)
        a = run_instances(inst, g, sigs, PipelineConfig(), spec, workers=1)
        b = run_instances(inst, g, sigs, PipelineConfig(), spec, workers=3)
        assert [r.rectified for r in a] == [r.rectified for r in b]
        assert [r.flagged for r in a] == [r.flagged for r in b]

    def test_failing_instance_is_skipped(self, bench):
        g, sigs, inst = bench
        bad = Instance(inst[0].true_concepts, 0, np.full(10, 2.0), 0)
        res = run_instances([inst[1], bad, inst[2]], g, sigs, PipelineConfig())
        assert [r.index for r in res] == [0, 2]

    def test_repair_never_lowers_satisfaction(self, bench):
        g, sigs, inst = bench
        res = run_instances(inst, g, sigs, PipelineConfig(), AttackSpec(budget=4))
        for r in res:
            assert r.s_after >= r.s_before - 1e-12
            if r.flips:
                assert r.s_after > r.s_before


class TestSweep:
    def test_full_ratio_equals_headline(self, bench):
        g, sigs, inst = bench
        rows = sweep_and_ablation(g, sigs, inst[:60], ratios=[1.0], families=["both"], budget=3, repeats=1)
        head = run_experiment(g, sigs, inst[:60], [3], include_clean=False).reports[0]
        for row in rows:
            assert row.report.e_acc == pytest.approx(head.e_acc)
            assert row.report.lsm == pytest.approx(head.lsm)

    def test_empty_family_equals_no_repair(self, bench):
        g, sigs, inst = bench
        rows = sweep_and_ablation(g, sigs, inst[:60], ratios=[], families=["empty"], budget=3, repeats=1)
        base = run_experiment(g, sigs, inst[:60], [3], config=PipelineConfig(repair=False), include_clean=False)
        assert rows[0].report.lsm == pytest.approx(base.reports[0].lsm)
        assert rows[0].n_factors == 0

    def test_family_subsets_partition(self, bench):
        g, _, _ = bench
        cat, con = family_subset(g, "category"), family_subset(g, "concept")
        assert sorted(cat + con) == family_subset(g, "both")
        assert family_subset(g, "empty") == []

    def test_ratio_subset_sizes(self, bench):
        g, sigs, inst = bench
        rows = sweep_and_ablation(g, sigs, inst[:20], ratios=[0.1, 0.5], families=[], repeats=2)
        sizes = {(r.setting, r.n_factors) for r in rows}
        assert sizes == {("0.1", math.ceil(0.1 * len(g))), ("0.5", math.ceil(0.5 * len(g)))}
        with pytest.raises(ValueError):
            sweep_and_ablation(g, sigs, inst[:5], ratios=[1.5], families=[], repeats=1)

    def test_mean_by_setting(self):
        def rep(v):
            return MetricsReport("x", 1, 1, 1, v, v, v, v, v, v, 100.0, None)

        from conceptguard.evaluation import SweepRow

        rows = [SweepRow("ratio", "0.5", 0, 3, rep(10.0)), SweepRow("ratio", "0.5", 1, 3, rep(20.0))]
        assert mean_by_setting(rows, "ratio", "lsm") == {"0.5": 15.0}


def test_bound_check_end_to_end(bench):
    g, sigs, inst = bench
    res = run_instances(inst, g, sigs, PipelineConfig(), AttackSpec(budget=4))
    attacked = [r.attacked_instance(inst[r.index]) for r in res]
    rows = concept_accuracy_vs_bound(g, attacked, res)
    assert len(rows) == 10
    for row in rows:
        if row["assumption_holds"]:
            assert row["accuracy"] >= row["bound"] - 0.02
