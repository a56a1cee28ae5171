#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
splitting.pyのテストモジュール
"""

import unittest
from collections import Counter

from hypothesis import given, settings, strategies as st

from support import synthetic_samples

from src.dataset.samples import FunctionSample
from src.dataset.splitting import balance, partition_sizes, split
from src.utils.exceptions import ValidationError


def _population(positives: int, negatives: int, cwes=("CWE-787",)):
    samples = []
    for n in range(positives):
        samples.append(FunctionSample(id=f"p{n:04d}", code=f"int f{n}(void);", label=1,
                                      cwe_ids=frozenset({cwes[n % len(cwes)]})))
    for n in range(negatives):
        samples.append(FunctionSample(id=f"n{n:04d}", code=f"int g{n}(void);", label=0))
    return samples


class TestSplit(unittest.TestCase):
    """split のテスト"""

    def test_sizes(self):
        self.assertEqual(tuple(map(len, split(synthetic_samples(10)))), (8, 1, 1))
        self.assertEqual(tuple(map(len, split(synthetic_samples(11)))), (9, 1, 1))
        self.assertEqual(partition_sizes(11, (8, 1, 1)), (9, 1, 1))

    def test_disjoint_and_complete(self):
        samples = synthetic_samples(37)
        train, val, test = split(samples, seed=3)
        ids = [s.id for s in train + val + test]
        self.assertEqual(len(ids), len(set(ids)))
        self.assertEqual(set(ids), {s.id for s in samples})

    def test_seed_determinism(self):
        samples = synthetic_samples(30)
        self.assertEqual(split(samples, seed=7), split(samples, seed=7))
        self.assertNotEqual(split(samples, seed=7)[0], split(samples, seed=8)[0])

    def test_input_order_is_not_modified(self):
        samples = synthetic_samples(12)
        before = list(samples)
        split(samples, stratify=True)
        self.assertEqual(samples, before)

    def test_stratified(self):
        """各 (ラベル, 主CWE) グループが同じ比で分かれる"""
        samples = _population(40, 60, cwes=("CWE-787", "CWE-79"))
        train, val, test = split(samples, stratify=True)
        self.assertEqual((len(train), len(val), len(test)), (80, 10, 10))
        counts = Counter(s.primary_cwe for s in test if s.label == 1)
        self.assertEqual(counts, Counter({"CWE-787": 2, "CWE-79": 2}))

    def test_invalid(self):
        with self.assertRaises(ValidationError):
            split([])
        with self.assertRaises(ValidationError):
            partition_sizes(10, (1, 1))
        with self.assertRaises(ValidationError):
            partition_sizes(10, (0, 0, 0))

    @settings(max_examples=200, deadline=None)
    @given(st.integers(min_value=0, max_value=5000),
           st.tuples(*[st.integers(min_value=0, max_value=20)] * 3).filter(lambda r: sum(r) > 0))
    def test_partition_sizes_sum(self, n, ratios):
        sizes = partition_sizes(n, ratios)
        self.assertEqual(sum(sizes), n)
        self.assertTrue(all(size >= 0 for size in sizes))


class TestBalance(unittest.TestCase):
    """balance のテスト"""

    def test_keeps_all_positives(self):
        samples = _population(10, 90)
        result, report = balance(samples, target_total=20)
        self.assertEqual(len(result), 20)
        self.assertEqual(report.positives_after, 10)
        self.assertEqual(report.negatives_after, 10)
        self.assertEqual(sum(s.label for s in result), 10)

    def test_preserves_input_order(self):
        samples = _population(10, 90)
        result, _ = balance(samples, target_total=20, seed=1)
        positions = [samples.index(s) for s in result]
        self.assertEqual(positions, sorted(positions))

    def test_deterministic(self):
        samples = _population(10, 90)
        self.assertEqual(balance(samples, 20, seed=5)[0], balance(samples, 20, seed=5)[0])

    def test_positive_without_cwe_is_excluded(self):
        samples = _population(3, 10) + [FunctionSample(id="x", code="int x;", label=1)]
        result, report = balance(samples, target_total=5)
        self.assertEqual(report.excluded_no_cwe, 1)
        self.assertNotIn("x", [s.id for s in result])

    def test_noop_when_target_is_large(self):
        samples = _population(5, 5)
        result, report = balance(samples, target_total=100)
        self.assertTrue(report.noop)
        self.assertEqual(result, samples)

    def test_positives_over_target(self):
        """脆弱サンプルだけで目標を超えてもCWEカテゴリを残す"""
        samples = _population(20, 5, cwes=("CWE-787",))
        samples += [FunctionSample(id=f"q{n}", code="int q;", label=1, cwe_ids=frozenset({"CWE-79"})) for n in range(9)]
        samples += [FunctionSample(id="r0", code="int r;", label=1, cwe_ids=frozenset({"CWE-22"}))]
        result, report = balance(samples, target_total=10)
        self.assertEqual(len(result), 10)
        self.assertEqual(report.negatives_after, 0)
        self.assertEqual(report.per_cwe_after, {"CWE-787": 6, "CWE-79": 3, "CWE-22": 1})
        self.assertEqual(report.eliminated_cwes, [])

    def test_invalid_target(self):
        with self.assertRaises(ValidationError):
            balance(_population(1, 1), target_total=0)

    def test_report_dict(self):
        _, report = balance(_population(10, 90, cwes=("CWE-79", "CWE-22")), target_total=20)
        data = report.to_dict()
        self.assertEqual(list(data["per_cwe_before"]), ["CWE-22", "CWE-79"])
        self.assertFalse(data["noop"])


if __name__ == "__main__":
    unittest.main()
