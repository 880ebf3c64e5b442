"""Metrics against brute-force oracles: pairwise AUC counting, exhaustive
ordering agreement, thresholded ACC/F1, and the aggregation formatting."""

import numpy as np
import pytest

from diffcd.errors import ContractError
from diffcd.evaluation import (acc, aggregate_seeds, auc, doa, f1,
                               mean_std_str, write_table)


def brute_force_auc(scores, labels):
    """Count concordant score pairs across the two classes; ties half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAuc:
    def test_perfect_and_inverted(self):
        labels = np.array([0, 0, 1, 1])
        assert auc([0.1, 0.2, 0.8, 0.9], labels) == 1.0
        assert auc([0.9, 0.8, 0.2, 0.1], labels) == 0.0

    def test_single_class_not_applicable(self):
        assert auc([0.1, 0.9], [1, 1]) is None
        assert auc([0.1, 0.9], [0, 0]) is None

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_pair_counting_with_ties(self, seed):
        rng = np.random.default_rng(seed)
        # quantized scores force plenty of ties
        scores = np.round(rng.uniform(size=200), 1)
        labels = rng.integers(0, 2, size=200)
        while labels.sum() in (0, 200):  # pragma: no cover
            labels = rng.integers(0, 2, size=200)
        expect = brute_force_auc(scores, labels)
        got = auc(scores, labels)
        assert abs(got - expect) < 1e-12

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(3)
        scores = rng.uniform(size=50)
        labels = rng.integers(0, 2, size=50)
        a = auc(scores, labels)
        b = auc(np.exp(3.0 * scores), labels)
        assert abs(a - b) < 1e-12


class TestAccF1:
    def test_acc_oracle(self):
        scores = np.array([0.2, 0.5, 0.7, 0.4])
        labels = np.array([0, 1, 0, 1])
        # 0.5 thresholds to positive; matches on rows 0 and 1
        assert acc(scores, labels) == 0.5

    def test_f1_oracle(self):
        scores = np.array([0.9, 0.8, 0.3, 0.6])
        labels = np.array([1, 0, 1, 1])
        # tp=2, fp=1, fn=1 -> precision=recall=2/3
        assert abs(f1(scores, labels) - 2 / 3) < 1e-12

    def test_f1_zero_when_no_true_positives(self):
        assert f1([0.1, 0.2], [1, 1]) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            acc([], [])
        with pytest.raises(ContractError):
            f1([], [])


def brute_force_doa(mastery, logs, q_matrix):
    responses = {(s, e): r for s, e, r in logs}
    n_students, n_concepts = mastery.shape
    scores = []
    for k in range(n_concepts):
        pair_scores = []
        for a in range(n_students):
            for b in range(n_students):
                if mastery[a, k] <= mastery[b, k]:
                    continue
                num = den = 0
                for e in range(q_matrix.shape[0]):
                    if q_matrix[e, k] != 1:
                        continue
                    ra, rb = responses.get((a, e)), responses.get((b, e))
                    if ra is None or rb is None or ra == rb:
                        continue
                    den += 1
                    if ra == 1:
                        num += 1
                if den > 0:
                    pair_scores.append(num / den)
        if pair_scores:
            scores.append(np.mean(pair_scores))
    return float(np.mean(scores)) if scores else None


class TestDoa:
    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_matches_exhaustive_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        n_s, n_e, n_k = 15, 10, 3
        mastery = rng.uniform(size=(n_s, n_k))
        q = rng.integers(0, 2, size=(n_e, n_k))
        q[:, 0] |= (q.sum(axis=1) == 0)  # no untagged exercise
        logs = [(s, e, int(rng.integers(0, 2)))
                for s in range(n_s) for e in range(n_e)
                if rng.uniform() < 0.6]
        expect = brute_force_doa(mastery, logs, q)
        got = doa(mastery, logs, q)
        if expect is None:
            assert got is None
        else:
            assert abs(got - expect) < 1e-12

    def test_perfectly_ordered_data(self):
        # higher mastery always answers correctly, lower always wrong
        mastery = np.array([[0.9], [0.1]])
        q = np.ones((2, 1), dtype=int)
        logs = [(0, 0, 1), (0, 1, 1), (1, 0, 0), (1, 1, 0)]
        assert doa(mastery, logs, q) == 1.0

    def test_no_scorable_pairs(self):
        mastery = np.full((3, 1), 0.5)  # no strict ordering anywhere
        q = np.ones((2, 1), dtype=int)
        logs = [(0, 0, 1), (1, 0, 0)]
        assert doa(mastery, logs, q) is None


class TestAggregation:
    def test_mean_std_format(self):
        vals = [0.7431, 0.7447, 0.7452, 0.7466, 0.7434]
        s = mean_std_str(vals)
        assert s == f"{100 * np.mean(vals):.2f}±{100 * np.std(vals):.2f}"
        assert "±" in s and s.count(".") == 2

    def test_aggregate_skips_missing(self):
        rows = [{"acc": 0.5, "auc": None}, {"acc": 0.7, "auc": None}]
        out = aggregate_seeds(rows)
        assert out["acc"] == mean_std_str([0.5, 0.7])
        assert out["auc"] == "-"

    def test_write_table(self, tmp_path):
        path = tmp_path / "t.tsv"
        write_table(path, [{"a": 1, "b": 2}, {"a": 3}], ["a", "b"])
        lines = path.read_text().splitlines()
        assert lines == ["a\tb", "1\t2", "3\t"]
