import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles

from ergorisk.errors import ShapeError
from ergorisk.metrics import (
    RATE_NAMES,
    accuracy,
    basic_metrics,
    cohen_kappa,
    confusion,
    evaluate_predictions,
    mcc_multiclass,
    one_vs_rest_counts,
    prob_mae,
    prob_rmse,
    roc_auc_ovr,
)

cms = hnp.arrays(np.int64, (8, 8), elements=st.integers(0, 30))


def _random_cm(seed):
    rng = np.random.default_rng(seed)
    cm = rng.integers(0, 40, (8, 8))
    cm[np.diag_indices(8)] += rng.integers(0, 80, 8)
    # sprinkle empty rows and columns so zero denominators get exercised
    if seed % 7 == 0:
        cm[seed % 8, :] = 0
    if seed % 11 == 0:
        cm[:, (seed + 3) % 8] = 0
    return cm


class TestConfusion:
    def test_perfect_is_diagonal(self):
        labels = [0, 1, 2, 3, 4, 5, 6, 7, 7]
        cm = confusion(labels, labels)
        assert np.array_equal(cm, np.diag(np.bincount(labels, minlength=8)))

    def test_single_off_diagonal(self):
        cm = confusion([2], [5])
        assert cm[2, 5] == 1 and cm.sum() == 1

    def test_row_sums_are_support(self):
        rng = np.random.default_rng(0)
        t, p = rng.integers(0, 8, 200), rng.integers(0, 8, 200)
        assert np.array_equal(confusion(t, p).sum(axis=1), np.bincount(t, minlength=8))

    def test_mismatched_lengths(self):
        with pytest.raises(ShapeError):
            confusion([0, 1], [0])

    def test_label_range(self):
        with pytest.raises(ValueError):
            confusion([8], [0])


class TestOneVsRest:
    def test_hand_two_class(self):
        assert one_vs_rest_counts(np.array([[3, 1], [2, 4]]), 0) == (3, 4, 2, 1)

    def test_diagonal_has_no_errors(self):
        cm = np.diag(np.arange(1, 9))
        for c in range(8):
            _, _, fp, fn = one_vs_rest_counts(cm, c)
            assert fp == fn == 0

    @given(cms)
    def test_counts_sum_to_total(self, cm):
        for c in range(8):
            assert sum(one_vs_rest_counts(cm, c)) == cm.sum()


class TestBasicMetrics:
    def test_all_ones(self):
        m = basic_metrics(1, 1, 0, 0)
        assert m.precision == m.recall == m.f1 == m.specificity == 1.0 and not m.flags

    def test_precision_fdr(self):
        m = basic_metrics(3, 5, 2, 0)
        assert m.precision == pytest.approx(0.6, abs=1e-15) and m.fdr == pytest.approx(0.4, abs=1e-15)

    def test_zero_denominator_flagged(self):
        m = basic_metrics(0, 5, 0, 0)
        assert m.precision == 0.0 and m.recall == 0.0 and {"precision", "recall", "f1"} <= m.flags

    @pytest.mark.parametrize("seed", range(100))
    def test_against_direct_oracle(self, seed):
        cm = _random_cm(seed)
        for c in range(8):
            counts = oracles.counts_direct(cm.tolist(), c)
            assert one_vs_rest_counts(cm, c) == counts
            m = basic_metrics(*counts)
            for name, value in oracles.rates_direct(*counts).items():
                assert abs(getattr(m, name) - value) <= 1e-12, (c, name)

    @given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
    def test_complements_exact(self, tp, tn, fp, fn):
        m = basic_metrics(tp, tn, fp, fn)
        assert m.fpr == 1 - m.specificity and m.fdr == 1 - m.precision and m.fnr == 1 - m.recall
        for name in RATE_NAMES:
            assert 0.0 <= getattr(m, name) <= 1.0


class TestAgreement:
    def test_kappa_examples(self):
        assert cohen_kappa(np.diag([3, 4, 5])) == 1.0
        assert cohen_kappa(np.array([[5, 0], [5, 0]])) == 0.0

    def test_kappa_degenerate(self):
        assert cohen_kappa(np.array([[4, 0], [0, 0]])) == 1.0

    def test_mcc_degenerate(self):
        single = np.zeros((8, 8), np.int64)
        single[2, 2] = 5
        # one occupied class: kappa's degenerate rule gives 1, MCC's zero denominator gives 0
        assert cohen_kappa(single) == 1.0 and mcc_multiclass(single) == 0.0
        single[2, 4] = 1
        assert mcc_multiclass(single) == 0.0
        assert mcc_multiclass(np.zeros((8, 8))) == 0.0

    def test_mcc_examples(self):
        assert mcc_multiclass(np.diag([1, 2, 3, 4, 5, 6, 7, 8])) == pytest.approx(1.0, abs=1e-15)
        assert mcc_multiclass(np.array([[2, 1], [1, 2]])) == pytest.approx(1 / 3, abs=1e-15)

    @pytest.mark.parametrize("seed", range(100))
    def test_random_matrices_against_oracles(self, seed):
        cm = _random_cm(seed)
        assert abs(cohen_kappa(cm) - oracles.kappa_bruteforce(cm.tolist())) <= 1e-12
        assert abs(mcc_multiclass(cm) - oracles.mcc_gorodkin(cm.tolist())) <= 1e-12
        t, p = oracles.expand(cm.tolist())
        assert abs(accuracy(cm) - sum(a == b for a, b in zip(t, p)) / len(t)) <= 1e-12

    def test_all_two_by_two_binary_form(self):
        # class 0 is the positive class: TP = cm[0,0], FN = cm[0,1], FP = cm[1,0], TN = cm[1,1]
        r = range(6)
        for tp in r:
            for fn in r:
                for fp in r:
                    for tn in r:
                        cm = np.array([[tp, fn], [fp, tn]])
                        assert abs(mcc_multiclass(cm) - oracles.mcc_binary(tp, tn, fp, fn)) <= 1e-12

    @given(cms)
    def test_bounds(self, cm):
        assert -1 - 1e-12 <= cohen_kappa(cm) <= 1 + 1e-12
        assert -1 - 1e-12 <= mcc_multiclass(cm) <= 1 + 1e-12

    @given(cms)
    def test_one_iff_diagonal(self, cm):
        diagonal = cm.sum() > 0 and np.count_nonzero(cm - np.diag(np.diag(cm))) == 0
        assert (abs(cohen_kappa(cm) - 1) <= 1e-12) == diagonal
        # MCC is undefined (reported 0) when a single class holds every sample
        if np.count_nonzero(cm.sum(axis=0)) > 1 or np.count_nonzero(cm.sum(axis=1)) > 1:
            assert (abs(mcc_multiclass(cm) - 1) <= 1e-12) == diagonal

    @given(cms, st.permutations(range(8)))
    def test_permutation_invariance(self, cm, perm):
        moved = cm[np.ix_(perm, perm)]
        assert cohen_kappa(moved) == pytest.approx(cohen_kappa(cm), abs=1e-12)
        assert mcc_multiclass(moved) == pytest.approx(mcc_multiclass(cm), abs=1e-12)
        assert accuracy(moved) == pytest.approx(accuracy(cm), abs=1e-12)
        for c in range(8):
            assert one_vs_rest_counts(moved, c) == one_vs_rest_counts(cm, perm[c])

    @given(cms)
    def test_accuracy_is_micro_recall(self, cm):
        if cm.sum():
            tps = sum(one_vs_rest_counts(cm, c)[0] for c in range(8))
            fns = sum(one_vs_rest_counts(cm, c)[3] for c in range(8))
            assert accuracy(cm) == pytest.approx(tps / (tps + fns), abs=1e-15)


class TestProbabilityErrors:
    def test_perfect(self):
        labels = np.arange(8)
        assert prob_rmse(np.eye(8), labels) == 0.0 and prob_mae(np.eye(8), labels) == 0.0

    def test_uniform_closed_form(self):
        probs = np.full((5, 8), 1 / 8)
        labels = [0, 3, 3, 7, 1]
        assert prob_rmse(probs, labels) == pytest.approx(math.sqrt(0.875), abs=1e-12)
        assert prob_mae(probs, labels) == pytest.approx(1.75, abs=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_per_sample_oracle(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(0, 2, (37, 8))
        probs = np.exp(z) / np.exp(z).sum(1, keepdims=True)
        labels = rng.integers(0, 8, 37)
        sq, ab = 0.0, 0.0
        for p, y in zip(probs, labels):
            for k in range(8):
                d = p[k] - (1.0 if k == y else 0.0)
                sq += d * d
                ab += abs(d)
        assert abs(prob_rmse(probs, labels) - math.sqrt(sq / 37)) <= 1e-9
        assert abs(prob_mae(probs, labels) - ab / 37) <= 1e-9


class TestAuc:
    def test_separated(self):
        assert roc_auc_ovr(np.array([[0.1], [0.2], [0.9], [0.8]]), [1, 1, 0, 0], 0) == 1.0

    def test_constant_scores(self):
        assert roc_auc_ovr(np.full((6, 1), 0.3), [0, 1, 0, 1, 1, 0], 0) == 0.5

    def test_single_class_undefined(self):
        assert roc_auc_ovr(np.ones((3, 2)), [0, 0, 0], 0) is None

    @pytest.mark.parametrize("seed", range(30))
    def test_pairwise_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = 60
        # rounding creates ties
        probs = np.round(rng.random((n, 8)), 1 if seed % 2 else 6)
        labels = rng.integers(0, 8, n)
        for c in range(8):
            pos = labels == c
            if 0 < pos.sum() < n:
                want = oracles.auc_pairwise(probs[:, c].tolist(), pos.tolist())
                assert abs(roc_auc_ovr(probs, labels, c) - want) <= 1e-12


class TestReport:
    def test_key_order_and_json(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 8, 50)
        probs = rng.dirichlet(np.ones(8), 50)
        rep = evaluate_predictions(labels, probs)
        obj = json.loads(rep.dumps())
        assert list(obj)[:4] == ["num_samples", "accuracy", "cohen_kappa", "mcc"]
        assert list(obj["per_class"]) == list(RATE_NAMES)
        assert obj["support"] == np.bincount(labels, minlength=8).tolist()
        assert rep.dumps() == evaluate_predictions(labels, probs).dumps()

    def test_missing_class_flagged(self):
        labels = np.array([0, 1, 1, 0])
        probs = np.eye(8)[[0, 1, 1, 0]]
        rep = evaluate_predictions(labels, probs)
        assert rep.auc[5] is None and "auc[6]" in rep.flags and "recall[6]" in rep.flags
        assert rep.accuracy == 1.0 and "n/a" in rep.to_text()

    def test_empty(self):
        rep = evaluate_predictions(np.zeros(0, np.int64), np.zeros((0, 8)))
        assert rep.num_samples == 0 and "empty" in rep.flags

    def test_shape_checked(self):
        with pytest.raises(ShapeError):
            evaluate_predictions([0, 1], np.zeros((2, 7)))

    def test_rates_bounded(self):
        rng = np.random.default_rng(3)
        rep = evaluate_predictions(rng.integers(0, 8, 40), rng.dirichlet(np.ones(8), 40))
        for name in RATE_NAMES:
            assert np.all((rep.per_class[name] >= 0) & (rep.per_class[name] <= 1))
