import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phenoloop.metrics import (
    MetricError,
    auc_pr,
    auc_roc,
    confusion_metrics,
    full_metrics,
    gold_report,
)


def brute_force_auc_roc(y, s):
    """O(n^2) pairwise oracle: 1 per correctly ordered pair, 0.5 per tie."""
    y = np.asarray(y, dtype=bool)
    s = np.asarray(s, dtype=float)
    pos = s[y][:, None]
    neg = s[~y][None, :]
    credit = (pos > neg).sum() + 0.5 * (pos == neg).sum()
    return credit / (pos.shape[0] * neg.shape[1])


def brute_force_auc_pr(y, s):
    """Cut-point oracle: walk distinct thresholds descending, tie blocks."""
    y = np.asarray(y, dtype=bool)
    s = np.asarray(s, dtype=float)
    n_pos = y.sum()
    ap = 0.0
    tp = 0
    seen = 0
    for threshold in sorted(set(s), reverse=True):
        block = s == threshold
        block_tp = int((block & y).sum())
        tp += block_tp
        seen += int(block.sum())
        if block_tp:
            ap += (block_tp / n_pos) * (tp / seen)
    return ap


class TestConfusionMetrics:
    def test_perfect_classifier(self):
        y = [True] * 10 + [False] * 10
        s = [1.0] * 10 + [0.0] * 10
        r = confusion_metrics(y, s)
        assert (r.precision, r.recall, r.f1, r.specificity) == (1.0, 1.0, 1.0, 1.0)

    def test_hand_counted_fixture(self):
        r = confusion_metrics([1, 1, 0, 0], [0.9, 0.4, 0.6, 0.1])
        assert (r.tp, r.fn, r.fp, r.tn) == (1, 1, 1, 1)
        assert (r.precision, r.recall, r.f1, r.specificity) == (0.5, 0.5, 0.5, 0.5)

    def test_degenerate_predictor(self):
        r = confusion_metrics([1, 0, 1, 0], [0.1, 0.2, 0.3, 0.4], threshold=0.5)
        assert r.recall == 0.0 and r.specificity == 1.0
        assert r.precision == 0.0 and any("undefined" in n for n in r.notes)

    def test_threshold_boundary_inclusive(self):
        r = confusion_metrics([1], [0.5])
        assert r.tp == 1

    def test_counts_sum_to_cohort(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 2, 57)
        s = rng.random(57)
        r = confusion_metrics(y, s)
        assert r.tp + r.fp + r.fn + r.tn == 57

    def test_shape_mismatch(self):
        with pytest.raises(MetricError):
            confusion_metrics([1, 0], [0.5])


class TestAucRoc:
    def test_perfect_ranking(self):
        assert auc_roc([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1]) == 1.0

    def test_all_ties(self):
        assert auc_roc([1, 0, 1, 0], [0.3, 0.3, 0.3, 0.3]) == 0.5

    def test_single_class_error(self):
        with pytest.raises(MetricError):
            auc_roc([1, 1], [0.3, 0.4])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = rng.integers(5, 200)
            y = rng.integers(0, 2, n)
            if y.min() == y.max():
                continue
            s = np.round(rng.random(n), 2)  # coarse scores force ties
            assert auc_roc(y, s) == pytest.approx(brute_force_auc_roc(y, s), abs=1e-9)

    def test_increasing_transform_invariance(self):
        rng = np.random.default_rng(5)
        y = rng.integers(0, 2, 100)
        y[0], y[1] = 0, 1
        s = rng.random(100)
        assert auc_roc(y, s) == pytest.approx(auc_roc(y, np.exp(3 * s)), abs=1e-12)

    def test_score_negation_complements(self):
        rng = np.random.default_rng(6)
        y = rng.integers(0, 2, 80)
        y[0], y[1] = 0, 1
        s = rng.permutation(80).astype(float)  # distinct scores, no ties
        assert auc_roc(y, s) + auc_roc(y, -s) == pytest.approx(1.0, abs=1e-12)

    def test_label_swap_mirror(self):
        # swapping classes with mirrored scores swaps recall and specificity
        rng = np.random.default_rng(7)
        y = rng.integers(0, 2, 60).astype(bool)
        y[:2] = [True, False]
        s = rng.random(60)
        a = confusion_metrics(y, s, threshold=0.5)
        b = confusion_metrics(~y, 1.0 - s + 1e-12, threshold=0.5)
        assert a.recall == pytest.approx(b.specificity)
        assert a.specificity == pytest.approx(b.recall)


class TestAucPr:
    def test_perfect_ranking(self):
        assert auc_pr([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1]) == 1.0

    def test_all_ties_equals_prevalence(self):
        y = [1, 0, 0, 0]
        assert auc_pr(y, [0.5] * 4) == pytest.approx(0.25)

    def test_zero_positives_error(self):
        with pytest.raises(MetricError):
            auc_pr([0, 0], [0.3, 0.4])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            n = rng.integers(5, 200)
            y = rng.integers(0, 2, n)
            if y.sum() == 0:
                continue
            s = np.round(rng.random(n), 2)
            assert auc_pr(y, s) == pytest.approx(brute_force_auc_pr(y, s), abs=1e-9)


@settings(max_examples=80, deadline=None)
@given(
    st.integers(min_value=2, max_value=500),
    st.integers(min_value=0, max_value=10**6),
)
def test_both_aucs_match_oracles_randomized(n, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    y[: max(1, n // 4)] = 1
    y[max(1, n // 4)] = 0 if n > 1 else 0
    rng.shuffle(y)
    s = np.round(rng.random(n), 3)
    if 0 < y.sum() < n:
        assert auc_roc(y, s) == pytest.approx(brute_force_auc_roc(y, s), abs=1e-9)
    if y.sum() > 0:
        assert auc_pr(y, s) == pytest.approx(brute_force_auc_pr(y, s), abs=1e-9)


class TestGoldReport:
    def test_icd_row_has_na_auc(self):
        y = [1, 0, 1, 0]
        report = gold_report("Lung Cancer", y, [0.9, 0.2, 0.7, 0.4], [1, 0, 0, 0])
        icd = report.rows["ICD Codes"]
        assert icd.auc_roc is None and icd.auc_pr is None
        assert report.rows["Workflow"].auc_roc is not None
        assert "N/A" in report.to_text()

    def test_classifier_equal_to_icd_gives_same_threshold_metrics(self):
        y = [1, 0, 1, 0, 1]
        verdicts = [1, 0, 0, 0, 1]
        report = gold_report("X", y, np.array(verdicts, dtype=float), verdicts)
        ours, icd = report.rows["Workflow"], report.rows["ICD Codes"]
        assert (ours.precision, ours.recall, ours.f1, ours.specificity) == (
            icd.precision,
            icd.recall,
            icd.f1,
            icd.specificity,
        )

    def test_f1_consistency(self):
        rng = np.random.default_rng(3)
        y = rng.integers(0, 2, 40)
        y[:2] = [0, 1]
        s = rng.random(40)
        r = full_metrics(y, s)
        if r.precision + r.recall > 0:
            expected = 2 * r.precision * r.recall / (r.precision + r.recall)
            assert r.f1 == pytest.approx(expected)
