"""Labeling, ranking metrics, statistics, and rejection-study tests."""

import numpy as np
import pytest

from oodkit.errors import (
    BadValue,
    DegenerateLabels,
    EverythingRejected,
    LengthMismatch,
    NoPositives,
    TooFewPoints,
    ZeroVariance,
)
from oodkit.evaluation import (
    LabelRule,
    ScoredImage,
    auprc,
    auroc,
    dsc_threshold,
    evaluate,
    fpr_at_tpr,
    label,
    paired_t_test,
    pearson,
    reject_at_tpr,
)
from oracles import (
    auprc_sweep_oracle,
    auroc_paircount_oracle,
    fpr_at_tpr_oracle,
    pearson_mpmath_oracle,
    student_t_sf_mpmath,
)


def imgs(dscs, scores=None):
    scores = scores if scores is not None else [0.0] * len(dscs)
    return [ScoredImage(id=f"i{k}", score=s, dsc=d) for k, (d, s) in enumerate(zip(dscs, scores))]


class TestLabel:
    def test_fixed_threshold(self):
        out = label(imgs([0.96, 0.97, 0.80]), LabelRule(mode="fixed", threshold=0.95))
        np.testing.assert_array_equal(out, [False, False, True])

    def test_auto_fallback_to_eighty(self):
        # only one image reaches 0.95, so the threshold drops to 0.80
        out = label(imgs([0.96, 0.90, 0.85]), LabelRule(mode="auto"))
        np.testing.assert_array_equal(out, [False, False, False])

    def test_auto_stays_at_ninety_five(self):
        out = label(imgs([0.96, 0.97, 0.90]), LabelRule(mode="auto"))
        np.testing.assert_array_equal(out, [False, False, True])

    def test_median_even_count(self):
        out = label(imgs([0.1, 0.2, 0.3, 0.4]), LabelRule(mode="median"))
        assert dsc_threshold(np.array([0.1, 0.2, 0.3, 0.4]), LabelRule(mode="median")) == 0.25
        np.testing.assert_array_equal(out, [True, True, False, False])

    def test_auto_id_floor_property(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            dscs = rng.uniform(0.0, 1.0, size=rng.integers(2, 12))
            out = label(imgs(dscs), LabelRule(mode="auto"))
            n_id = int((~out).sum())
            if n_id < 2:
                # only allowed when fewer than 2 images reach the 0.80 floor
                assert int((dscs >= 0.80).sum()) < 2

    def test_missing_dsc_rejected(self):
        with pytest.raises(BadValue):
            label([ScoredImage(id="a", score=0.0, dsc=None)], LabelRule(mode="auto"))

    def test_bad_fixed_threshold(self):
        with pytest.raises(BadValue):
            LabelRule(mode="fixed", threshold=1.5)


class TestAuroc:
    def test_perfect_separation(self):
        scores = np.array([1.0, 2.0, 10.0, 11.0])
        labels = np.array([False, False, True, True])
        assert auroc(scores, labels) == 1.0

    def test_all_ties_give_half(self):
        scores = np.zeros(6)
        labels = np.array([True, False, True, False, True, False])
        assert auroc(scores, labels) == 0.5

    def test_matches_pair_counting_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(4, 30))
            scores = np.round(rng.standard_normal(n), 1)  # induce ties
            labels = rng.random(n) < 0.5
            if labels.all() or not labels.any():
                continue
            assert abs(auroc(scores, labels) - auroc_paircount_oracle(scores, labels)) <= 1e-12

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(2)
        scores = rng.standard_normal(20)
        labels = rng.random(20) < 0.4
        base = auroc(scores, labels)
        for transform in (np.exp, lambda s: 2.0 * s + 7.0, lambda s: s**3):
            assert auroc(transform(scores), labels) == base

    def test_complement_without_ties(self):
        rng = np.random.default_rng(3)
        scores = rng.permutation(20).astype(float)
        labels = rng.random(20) < 0.5
        labels[0], labels[1] = True, False
        assert auroc(scores, labels) + auroc(-scores, labels) == 1.0

    def test_degenerate(self):
        with pytest.raises(DegenerateLabels):
            auroc(np.ones(3), np.array([True, True, True]))


class TestAuprc:
    def test_perfect(self):
        assert auprc(np.array([0.0, 1.0, 5.0]), np.array([False, True, True])) == 1.0

    def test_single_positive_ranked_last(self):
        scores = np.array([4.0, 3.0, 2.0, 1.0])
        labels = np.array([False, False, False, True])
        assert auprc(scores, labels) == 0.25

    def test_matches_sweep_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(3, 25))
            scores = np.round(rng.standard_normal(n), 1)
            labels = rng.random(n) < 0.5
            if not labels.any():
                continue
            assert abs(auprc(scores, labels) - auprc_sweep_oracle(scores, labels)) <= 1e-12

    def test_no_positives(self):
        with pytest.raises(NoPositives):
            auprc(np.ones(3), np.zeros(3, dtype=bool))


class TestFprAtTpr:
    def test_perfect(self):
        fpr, _ = fpr_at_tpr(np.array([1.0, 2.0, 8.0, 9.0]), np.array([False, False, True, True]))
        assert fpr == 0.0

    def test_enumerated_four_point_case(self):
        scores = np.array([3.0, 2.0, 1.0, 2.5])
        labels = np.array([True, True, True, False])
        fpr, threshold = fpr_at_tpr(scores, labels, 0.90)
        assert threshold == 1.0
        assert fpr == 1.0

    def test_all_ties(self):
        scores = np.full(5, 4.0)
        labels = np.array([True, True, False, False, False])
        fpr, threshold = fpr_at_tpr(scores, labels, 0.90)
        assert threshold == 4.0 and fpr == 1.0

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(4, 25))
            scores = np.round(rng.standard_normal(n), 1)
            labels = rng.random(n) < 0.5
            if labels.all() or not labels.any():
                continue
            for target in (0.5, 0.9, 1.0):
                assert fpr_at_tpr(scores, labels, target) == fpr_at_tpr_oracle(scores, labels, target)

    def test_monotone_transform_invariance_of_fpr(self):
        rng = np.random.default_rng(6)
        scores = rng.standard_normal(20)
        labels = rng.random(20) < 0.4
        labels[0], labels[1] = True, False
        base_fpr, _ = fpr_at_tpr(scores, labels)
        got_fpr, _ = fpr_at_tpr(np.exp(scores), labels)
        assert got_fpr == base_fpr


class TestPearson:
    def test_perfect_positive(self):
        x = np.arange(10.0)
        r, p = pearson(x, 2.0 * x + 1.0)
        assert r == 1.0 and p == 0.0

    def test_perfect_negative(self):
        x = np.arange(8.0)
        r, _ = pearson(x, -x)
        assert r == -1.0

    def test_matches_mpmath_reference(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal(20)
        y = 0.4 * x + rng.standard_normal(20)
        r, p = pearson(x, y)
        r_ref, p_ref = pearson_mpmath_oracle(x, y)
        assert abs(r - r_ref) <= 1e-10
        assert abs(p - p_ref) <= 1e-8

    def test_errors(self):
        with pytest.raises(ZeroVariance):
            pearson(np.ones(5), np.arange(5.0))
        with pytest.raises(TooFewPoints):
            pearson(np.arange(2.0), np.arange(2.0))
        with pytest.raises(LengthMismatch):
            pearson(np.arange(4.0), np.arange(5.0))


class TestPairedT:
    def test_identical_samples_zero_variance(self):
        a = np.array([1.0, 2.0, 3.0])
        with pytest.raises(ZeroVariance):
            paired_t_test(a, a, "greater")

    def test_one_sided_greater(self):
        d = np.array([1.0, 1.0, 1.0, 2.0])
        t, p = paired_t_test(d, np.zeros(4), "greater")
        assert t == 5.0  # mean 1.25, sd 0.5, sqrt(4) = 2
        assert p < 0.05
        assert abs(p - student_t_sf_mpmath(5.0, 3)) <= 1e-12

    def test_two_sided_is_twice_min(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal(12)
        b = rng.standard_normal(12)
        _, p_less = paired_t_test(a, b, "less")
        _, p_greater = paired_t_test(a, b, "greater")
        _, p_two = paired_t_test(a, b, "two_sided")
        assert abs(p_two - 2.0 * min(p_less, p_greater)) <= 1e-12

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            paired_t_test(np.ones(3), np.ones(4), "less")


class TestRejectAtTpr:
    def test_separable_fixture_deltas(self):
        # 4 ID images (low scores, high dsc) + 2 OOD (high scores, low dsc)
        images = [
            ScoredImage("a", 0.1, dsc=0.98, hd=4.0, nsd=0.95),
            ScoredImage("b", 0.2, dsc=0.97, hd=5.0, nsd=0.93),
            ScoredImage("c", 0.3, dsc=0.96, hd=6.0, nsd=0.91),
            ScoredImage("d", 0.4, dsc=0.99, hd=3.0, nsd=0.97),
            ScoredImage("e", 5.0, dsc=0.50, hd=40.0, nsd=0.40),
            ScoredImage("f", 6.0, dsc=0.40, hd=50.0, nsd=0.30),
        ]
        is_ood = np.array([False, False, False, False, True, True])
        report = reject_at_tpr(images, is_ood, 0.90)
        assert report.n_rejected == 2
        all_dsc = np.mean([0.98, 0.97, 0.96, 0.99, 0.50, 0.40])
        kept_dsc = np.mean([0.98, 0.97, 0.96, 0.99])
        np.testing.assert_allclose(report.delta_dsc, kept_dsc - all_dsc)
        assert report.delta_dsc > 0
        all_hd = np.mean([4.0, 5.0, 6.0, 3.0, 40.0, 50.0])
        kept_hd = np.mean([4.0, 5.0, 6.0, 3.0])
        np.testing.assert_allclose(report.delta_hd, kept_hd - all_hd)

    def test_tpr_one_rejects_at_min_positive(self):
        images = [
            ScoredImage("a", 1.0, dsc=0.99),
            ScoredImage("b", 2.0, dsc=0.99),
            ScoredImage("c", 3.0, dsc=0.5),
            ScoredImage("d", 4.0, dsc=0.5),
        ]
        is_ood = np.array([False, False, True, True])
        report = reject_at_tpr(images, is_ood, 1.0)
        assert report.threshold == 3.0  # the minimum OOD score
        assert report.n_rejected == 2

    def test_identical_metrics_zero_deltas(self):
        # binary-fraction metric values so subgroup means are exact
        images = [
            ScoredImage(f"i{k}", float(k), dsc=0.75, hd=10.0, nsd=0.5) for k in range(6)
        ]
        is_ood = np.array([False, False, False, True, True, True])
        report = reject_at_tpr(images, is_ood, 0.90)
        assert report.delta_dsc == 0.0
        assert report.delta_hd == 0.0
        assert report.delta_nsd == 0.0

    def test_everything_rejected(self):
        images = [ScoredImage(f"i{k}", 1.0, dsc=0.5) for k in range(4)]
        is_ood = np.array([True, True, True, False])
        with pytest.raises(EverythingRejected):
            reject_at_tpr(images, is_ood, 0.90)


class TestEvaluate:
    def test_report_fields(self):
        rng = np.random.default_rng(9)
        images = []
        for k in range(30):
            ood = k >= 20
            images.append(
                ScoredImage(
                    id=f"i{k}",
                    score=float(rng.normal(3.0 if ood else 0.0)),
                    dsc=float(rng.uniform(0.2, 0.6) if ood else rng.uniform(0.9, 1.0)),
                    hd=float(rng.uniform(20, 50) if ood else rng.uniform(1, 10)),
                    nsd=float(rng.uniform(0.2, 0.6) if ood else rng.uniform(0.8, 1.0)),
                )
            )
        is_ood = np.array([im.dsc < 0.8 for im in images])
        report = evaluate(images, is_ood, seconds=1.5)
        assert report.n_id == 20 and report.n_ood == 10
        assert 0.0 <= report.auroc <= 1.0
        assert report.seconds == 1.5
        assert report.pcc_dsc is not None and report.pcc_dsc < 0
        assert report.pcc_hd is not None and report.pcc_hd > 0
        assert report.pcc_dsc_p is not None
