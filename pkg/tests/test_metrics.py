import random

import pytest
from hypothesis import given, settings, strategies as st

from effectcast.dataset import AveragedTarget
from effectcast.errors import DataError
from effectcast.metrics import (
    DegenerateMetricError,
    EvaluationConfig,
    ci_valid_rate,
    direction_accuracy,
    economic_significance_accuracy,
    evaluate,
    hedges_g,
    mae,
    pearson,
    r2,
    report_markdown,
    rmse,
    spearman,
    stat_sig_accuracy,
    stat_sig_f1,
)
from effectcast.types import EffectPrediction

from conftest import make_estimate
from oracles import (
    hedges_g_oracle,
    mae_oracle,
    micro_f1_oracle,
    pearson_oracle,
    r2_oracle,
    rmse_oracle,
    spearman_oracle,
)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


class TestRegressionMetrics:
    def test_identity(self):
        golds = [0.1, -0.2, 0.5]
        assert rmse(golds, golds) == 0.0
        assert mae(golds, golds) == 0.0
        assert r2(golds, golds) == 1.0

    def test_hand_values(self):
        assert rmse([0.0, 0.0], [0.2, -0.2]) == pytest.approx(0.2, abs=1e-15)
        assert mae([0.0, 0.0], [0.2, -0.2]) == pytest.approx(0.2, abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            rmse([0.1], [0.1, 0.2])
        with pytest.raises(ValueError):
            mae([], [])

    @given(st.lists(finite, min_size=1, max_size=20), st.data())
    def test_rmse_dominates_mae(self, golds, data):
        preds = data.draw(st.lists(finite, min_size=len(golds), max_size=len(golds)))
        assert rmse(preds, golds) >= mae(preds, golds) - 1e-12

    @given(st.lists(finite, min_size=2, max_size=20), finite)
    def test_mae_translation_bound(self, golds, c):
        preds = [g + 0.1 for g in golds]
        shifted = [p + c for p in preds]
        assert mae(shifted, golds) <= mae(preds, golds) + abs(c) + 1e-12

    def test_r2_of_gold_mean_is_zero(self):
        golds = [0.1, 0.3, 0.5]
        mean = sum(golds) / len(golds)
        assert r2([mean] * 3, golds) == pytest.approx(0.0, abs=1e-15)

    def test_r2_constant_off_mean_is_negative(self):
        golds = [0.1, 0.3, 0.5]
        assert r2([0.9] * 3, golds) < 0

    def test_r2_degenerate_golds(self):
        with pytest.raises(DegenerateMetricError):
            r2([0.1, 0.2], [0.3, 0.3])

    def test_r2_never_exceeds_one(self):
        rng = random.Random(0)
        for _ in range(20):
            golds = [rng.uniform(-1, 1) for _ in range(6)]
            preds = [rng.uniform(-1, 1) for _ in range(6)]
            assert r2(preds, golds) <= 1.0


class TestCorrelations:
    def test_pearson_affine_invariance(self):
        golds = [0.1, 0.4, -0.2, 0.9]
        preds = [2 * g + 1 for g in golds]
        assert pearson(preds, golds) == pytest.approx(1.0, abs=1e-12)

    def test_pearson_negation(self):
        golds = [0.1, 0.4, -0.2, 0.9]
        assert pearson([-g for g in golds], golds) == pytest.approx(-1.0, abs=1e-12)

    def test_pearson_matches_oracle_on_random_vectors(self):
        rng = random.Random(9)
        for _ in range(10):
            golds = [rng.uniform(-2, 2) for _ in range(10)]
            preds = [rng.uniform(-2, 2) for _ in range(10)]
            assert pearson(preds, golds) == pytest.approx(pearson_oracle(preds, golds), abs=1e-12)

    def test_pearson_constant_degenerate(self):
        with pytest.raises(DegenerateMetricError):
            pearson([0.5, 0.5], [0.1, 0.2])

    def test_spearman_monotone_invariance(self):
        golds = [0.1, 0.4, -0.2, 0.9, 0.3]
        preds = [g ** 3 + 2 for g in golds]  # strictly monotone transform
        assert spearman(preds, golds) == pytest.approx(1.0, abs=1e-12)

    def test_spearman_reversal(self):
        golds = [1.0, 2.0, 3.0, 4.0]
        assert spearman(list(reversed(golds)), golds) == pytest.approx(-1.0, abs=1e-12)

    def test_spearman_with_ties_matches_oracle(self):
        preds = [0.1, 0.1, 0.3, 0.2, 0.3, 0.3]
        golds = [1.0, 2.0, 2.0, 3.0, 4.0, 5.0]
        assert spearman(preds, golds) == pytest.approx(spearman_oracle(preds, golds), abs=1e-12)

    @given(st.lists(st.tuples(finite, finite), min_size=3, max_size=12))
    @settings(max_examples=50, deadline=None)
    def test_permutation_invariance(self, pairs):
        preds = [p for p, _ in pairs]
        golds = [g for _, g in pairs]
        shuffled = pairs[::-1]
        s_preds = [p for p, _ in shuffled]
        s_golds = [g for _, g in shuffled]
        assert rmse(preds, golds) == pytest.approx(rmse(s_preds, s_golds), abs=1e-12)
        assert mae(preds, golds) == pytest.approx(mae(s_preds, s_golds), abs=1e-12)
        assert direction_accuracy(preds, golds) == direction_accuracy(s_preds, s_golds)


class TestPolicyMetrics:
    def test_direction_identity_and_negation(self):
        golds = [0.1, -0.4, 0.9]
        assert direction_accuracy(golds, golds) == 1.0
        assert direction_accuracy([-g for g in golds], golds) == 0.0

    def test_direction_zero_convention(self):
        assert direction_accuracy([0.0], [0.0]) == 1.0
        assert direction_accuracy([0.0], [0.1]) == 0.0

    @pytest.mark.parametrize(
        "value,meaningful",
        [(-0.0129, False), (0.204, True), (0.1, False), (-0.1, False), (0.1000001, True)],
    )
    def test_economic_threshold_strict(self, value, meaningful):
        acc = economic_significance_accuracy([value], [1.0 if meaningful else 0.0])
        assert acc == 1.0

    def test_stat_sig_identity(self):
        cis = [(-0.1, 0.2), (0.1, 0.5), (-0.9, -0.2)]
        assert stat_sig_f1(cis, cis) == 1.0
        assert stat_sig_accuracy(cis, cis) == 1.0

    def test_stat_sig_mismatch_example(self):
        gold = [(-0.101, 0.075)]
        pred = [(0.2, 0.4)]
        assert stat_sig_f1(pred, gold) == 0.0

    def test_nine_pair_hand_confusion(self):
        gold = [
            (0.1, 0.5), (0.2, 0.6), (0.3, 0.7),       # Positive x3
            (-0.5, -0.1), (-0.6, -0.2),                # Negative x2
            (-0.1, 0.1), (-0.2, 0.2), (-0.3, 0.3), (0.0, 0.4),  # NonSig x4
        ]
        pred = [
            (0.1, 0.5), (-0.6, -0.2), (-0.1, 0.1),     # P->P, P->N, P->NS
            (-0.5, -0.1), (0.2, 0.6),                  # N->N, N->P
            (-0.1, 0.1), (-0.2, 0.2), (0.3, 0.7), (-0.6, -0.2),  # NS->NS, NS->NS, NS->P, NS->N
        ]
        # hand count: correct = 1 + 1 + 2 = 4 of 9
        assert stat_sig_f1(pred, gold) == pytest.approx(4 / 9, abs=1e-15)
        assert stat_sig_f1(pred, gold) == pytest.approx(micro_f1_oracle(pred, gold), abs=1e-12)

    @given(st.lists(st.tuples(finite, finite, finite, finite), min_size=1, max_size=30))
    @settings(max_examples=50, deadline=None)
    def test_micro_f1_equals_accuracy(self, quads):
        gold = [(min(a, b), max(a, b)) for a, b, _, _ in quads]
        pred = [(min(c, d), max(c, d)) for _, _, c, d in quads]
        assert stat_sig_f1(pred, gold) == pytest.approx(stat_sig_accuracy(pred, gold), abs=1e-12)

    def test_ci_valid_rate(self):
        valid = EffectPrediction(0.2, 0.1, 0.3, "p", "a-L0")
        invalid = EffectPrediction(0.2, 0.3, 0.1 + 0.3, "p", "b-L0")  # lower >= effect
        assert ci_valid_rate([valid, valid]) == 1.0
        assert ci_valid_rate([valid, invalid]) == 0.5


class TestHedgesG:
    def test_zero_numerator(self):
        for n in (2, 10, 500):
            assert hedges_g(0.3, 0.3, 1.0, n, n) == 0.0

    def test_derived_case(self):
        expected = 0.5 * (1 - 3 / 391)
        assert hedges_g(0.5, 0.0, 1.0, 50, 50) == pytest.approx(expected, abs=1e-15)
        assert hedges_g(0.5, 0.0, 1.0, 50, 50) == pytest.approx(
            hedges_g_oracle(0.5, 0.0, 1.0, 50, 50), abs=1e-15
        )

    def test_correction_approaches_one(self):
        gaps = [abs(1 - hedges_g(1.0, 0.0, 1.0, n, n)) for n in (5, 10, 50, 200, 1000)]
        assert gaps == sorted(gaps, reverse=True)

    def test_antisymmetry(self):
        assert hedges_g(0.4, 0.1, 1.0, 30, 30) == -hedges_g(0.1, 0.4, 1.0, 30, 30)

    def test_joint_scale_invariance(self):
        a = hedges_g(0.4, 0.1, 0.5, 30, 40)
        b = hedges_g(0.8, 0.2, 1.0, 30, 40)
        assert a == pytest.approx(b, abs=1e-15)

    def test_errors(self):
        with pytest.raises(ValueError):
            hedges_g(0.1, 0.0, 0.0, 10, 10)
        with pytest.raises(ValueError):
            hedges_g(0.1, 0.0, 1.0, 1, 1)


def _pred_for(estimate, effect=None, lo=None, hi=None, level=0, predictor="p"):
    return EffectPrediction(
        effect=estimate.effect_size if effect is None else effect,
        ci_lower=estimate.ci_lower if lo is None else lo,
        ci_upper=estimate.ci_upper if hi is None else hi,
        predictor_id=predictor,
        query_id=f"{estimate.estimate_id}-L{level}",
    )


class TestEvaluate:
    def _golds(self, effects):
        return [
            make_estimate(f"e{i}", effect_size=x, ci_lower=x - 0.1, ci_upper=x + 0.1)
            for i, x in enumerate(effects)
        ]

    def test_identity_run(self):
        golds = self._golds([0.1, -0.3, 0.5, 0.25])
        preds = [_pred_for(g) for g in golds]
        report = evaluate(preds, golds=golds)
        assert report.rmse == 0.0
        assert report.mae == 0.0
        assert report.r2 == 1.0
        assert report.direction_acc == 1.0
        assert report.econ_acc == 1.0
        assert report.stat_sig_f1 == 1.0
        assert report.ci_valid_rate == 1.0
        assert report.n_scored == 4 and report.n_excluded == 0

    def test_against_scripted_oracle(self):
        rng = random.Random(21)
        golds = self._golds([round(rng.uniform(-1, 1), 3) for _ in range(12)])
        preds = [
            _pred_for(g, effect=round(rng.uniform(-1, 1), 3), lo=-1.5, hi=1.5) for g in golds
        ]
        report = evaluate(preds, golds=golds)
        p = [x.effect for x in preds]
        g = [x.effect_size for x in golds]
        assert report.rmse == pytest.approx(rmse_oracle(p, g), abs=1e-12)
        assert report.mae == pytest.approx(mae_oracle(p, g), abs=1e-12)
        assert report.r2 == pytest.approx(r2_oracle(p, g), abs=1e-12)
        assert report.pearson == pytest.approx(pearson_oracle(p, g), abs=1e-12)
        assert report.spearman == pytest.approx(spearman_oracle(p, g), abs=1e-12)
        assert report.stat_sig_f1 == pytest.approx(
            micro_f1_oracle([(x.ci_lower, x.ci_upper) for x in preds],
                            [(x.ci_lower, x.ci_upper) for x in golds]),
            abs=1e-12,
        )

    def test_ci_free_golds_drop_significance(self):
        golds = [
            make_estimate(f"e{i}", effect_size=0.1 * i, ci_lower=None, ci_upper=None)
            for i in range(3)
        ]
        preds = [_pred_for(g, effect=0.1, lo=0.0, hi=0.2) for g in golds]
        report = evaluate(preds, golds=golds)
        assert report.stat_sig_f1 is None
        assert report.stat_sig_acc is None
        assert any("stat_sig_absent" in f for f in report.degeneracy_flags)
        assert report.rmse is not None

    def test_averaged_target_mode(self):
        targets = [
            AveragedTarget("e0-L3", ("e0", "e1"), 0.15),
            AveragedTarget("e1-L3", ("e1",), 0.4),
        ]
        preds = [
            EffectPrediction(0.2, 0.0, 0.4, "p", "e0-L3"),
            EffectPrediction(0.4, 0.2, 0.6, "p", "e1-L3"),
        ]
        report = evaluate(preds, averaged_targets=targets)
        assert "averaged_target_mode" in report.degeneracy_flags
        assert report.stat_sig_f1 is None
        assert report.mae == pytest.approx((0.05 + 0.0) / 2, abs=1e-12)

    def test_unjoined_predictions_excluded_and_counted(self):
        golds = self._golds([0.1, 0.2])
        preds = [_pred_for(g) for g in golds] + [EffectPrediction(0.3, 0.1, 0.5, "p", "ghost-L0")]
        report = evaluate(preds, golds=golds, n_failures=2)
        assert report.n_scored == 2
        assert report.n_excluded == 3  # 2 upstream failures + 1 unjoined

    def test_zero_joinable_rejected(self):
        golds = self._golds([0.1])
        preds = [EffectPrediction(0.3, 0.1, 0.5, "p", "ghost-L0")]
        with pytest.raises(DataError):
            evaluate(preds, golds=golds)

    def test_requires_exactly_one_gold_source(self):
        golds = self._golds([0.1])
        preds = [_pred_for(golds[0])]
        with pytest.raises(DataError):
            evaluate(preds)
        with pytest.raises(DataError):
            evaluate(preds, golds=golds, averaged_targets=[AveragedTarget("e0-L3", ("e0",), 0.1)])

    def test_degenerate_correlations_flagged_not_nan(self):
        golds = self._golds([0.1, 0.2, 0.3])
        preds = [_pred_for(g, effect=0.5, lo=0.4, hi=0.6) for g in golds]  # constant preds
        report = evaluate(preds, golds=golds)
        assert report.pearson is None
        assert report.spearman is None
        assert any("pearson_absent" in f for f in report.degeneracy_flags)
        serialized = report.to_dict()
        assert serialized["pearson"] is None  # absent, never NaN

    def test_serialization_rounds_to_four_decimals(self):
        golds = self._golds([0.123456, 0.234567, 0.7])
        preds = [_pred_for(g, effect=g.effect_size + 0.01, lo=-1.0, hi=1.0) for g in golds]
        report = evaluate(preds, golds=golds)
        assert report.to_dict()["mae"] == round(report.mae, 4)
        assert abs(report.mae - 0.01) > 0  # full precision kept on the object


class TestMarkdownReport:
    def test_column_order_and_best_marking(self):
        golds = [
            make_estimate(f"e{i}", effect_size=0.1 * i, ci_lower=0.1 * i - 0.1, ci_upper=0.1 * i + 0.1)
            for i in range(4)
        ]
        good = evaluate([_pred_for(g) for g in golds], golds=golds,
                        config=EvaluationConfig(label="good"))
        bad = evaluate(
            [_pred_for(g, effect=0.9, lo=0.8, hi=1.0) for g in golds],
            golds=golds,
            config=EvaluationConfig(label="bad"),
        )
        table = report_markdown([good, bad])
        lines = table.strip().split("\n")
        assert lines[0] == "| Model | RMSE | MAE | R² | Pearson | Spearman | Direction | Econ. Sign. | Stat. Sign. |"
        assert "**0.0000**" in lines[2]  # identity row wins RMSE
        assert lines[2].startswith("| good |")
        assert lines[3].startswith("| bad |")
