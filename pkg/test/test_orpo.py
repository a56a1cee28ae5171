#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
ORPO損失とトイ言語モデルのテストモジュール

解析的な値との一致、勾配チェック、選好学習による分離を検証します。
"""

import math
import unittest

import numpy as np
from hypothesis import given, settings, strategies as st

import support  # noqa: F401  (sys.path の設定)

from src.orpo.losses import (
    OrpoConfig,
    TokenLogProbs,
    avg_logprob,
    log_odds,
    or_loss,
    or_loss_grad,
    orpo_total,
    pair_loss,
    sft_nll,
)
from src.orpo.toy_model import (
    ToyLmParams,
    TokenizedPair,
    audit_rows,
    grad_check,
    separation,
    synthetic_preference_set,
    toy_forward,
    toy_loss_and_grad,
    train_toy,
)
from src.utils.exceptions import ConfigError, DegenerateProbability, EmptySequence, TokenOutOfRange, ValidationError

LN2 = math.log(2.0)
avg_lp = st.floats(min_value=-30.0, max_value=-1e-6, allow_nan=False, allow_infinity=False)


class TestLosses(unittest.TestCase):
    """損失関数の解析的な値"""

    def test_avg_logprob(self):
        seq = TokenLogProbs.from_logprobs([math.log(0.8), math.log(0.2)])
        self.assertAlmostEqual(avg_logprob(seq), (math.log(0.8) + math.log(0.2)) / 2, places=12)

    def test_sft_nll_single_token(self):
        self.assertAlmostEqual(sft_nll(TokenLogProbs.from_logprobs([math.log(0.5)])), LN2, places=12)

    def test_equal_likelihoods_give_ln2(self):
        self.assertLess(abs(or_loss(math.log(0.5), math.log(0.5)) - LN2), 1e-12)
        self.assertLess(abs(or_loss(-3.2, -3.2) - LN2), 1e-12)

    def test_odds_ratio_four(self):
        """P⁺=0.8, P⁻=0.5 でオッズ比4、損失は −ln 0.8"""
        self.assertLess(abs(or_loss(math.log(0.8), math.log(0.5)) + math.log(0.8)), 1e-12)
        self.assertLess(abs(or_loss(math.log(0.5), math.log(0.8)) + math.log(0.2)), 1e-12)

    def test_log_odds_near_one(self):
        """P が1に近くても有限の値になる"""
        self.assertTrue(math.isfinite(log_odds(-1e-12)))
        with self.assertRaises(DegenerateProbability):
            log_odds(-1e-16)
        with self.assertRaises(DegenerateProbability):
            or_loss(0.0, -1.0)

    def test_pair_loss_clamps(self):
        chosen = TokenLogProbs.from_logprobs([0.0, 0.0])
        rejected = TokenLogProbs.from_logprobs([math.log(0.5)])
        parts = pair_loss(chosen, rejected)
        self.assertEqual(parts.clamped, 1)
        self.assertTrue(math.isfinite(parts.total))

    def test_orpo_total(self):
        self.assertAlmostEqual(orpo_total(2.0, LN2, OrpoConfig(0.5)), 2.0 + 0.5 * LN2)
        self.assertEqual(orpo_total(2.0, LN2, OrpoConfig(0.0)), 2.0)
        with self.assertRaises(ConfigError):
            OrpoConfig(-0.1)

    def test_invalid_sequences(self):
        with self.assertRaises(EmptySequence):
            TokenLogProbs.from_logprobs([])
        with self.assertRaises(ValidationError):
            TokenLogProbs.from_logprobs([0.1])
        with self.assertRaises(ValidationError):
            TokenLogProbs(tokens=(1, 2), logprobs=(-1.0,))


class TestLossProperties(unittest.TestCase):
    """損失関数の性質"""

    @settings(max_examples=300, deadline=None)
    @given(avg_lp, avg_lp)
    def test_or_loss_non_negative(self, chosen, rejected):
        self.assertGreaterEqual(or_loss(chosen, rejected), 0.0)

    @settings(max_examples=200, deadline=None)
    @given(avg_lp)
    def test_symmetric_case(self, value):
        self.assertAlmostEqual(or_loss(value, value), LN2, places=12)

    @settings(max_examples=200, deadline=None)
    @given(avg_lp, avg_lp)
    def test_preferring_chosen_lowers_loss(self, chosen, rejected):
        """chosen の尤度が高いほど損失は小さい"""
        if chosen > rejected:
            self.assertLess(or_loss(chosen, rejected), LN2 + 1e-12)
        elif chosen < rejected:
            self.assertGreater(or_loss(chosen, rejected), LN2 - 1e-12)

    @settings(max_examples=200, deadline=None)
    @given(avg_lp, avg_lp)
    def test_gradient_signs(self, chosen, rejected):
        d_chosen, d_rejected = or_loss_grad(chosen, rejected)
        self.assertLessEqual(d_chosen, 0.0)
        self.assertGreaterEqual(d_rejected, 0.0)


class TestToyModel(unittest.TestCase):
    """トイ言語モデルのテスト"""

    def test_forward(self):
        params = ToyLmParams.uniform(4)
        seq = toy_forward(params, (0, 1), (2, 3))
        self.assertEqual(seq.tokens, (2, 3))
        for value in seq.logprobs:
            self.assertAlmostEqual(value, math.log(0.25), places=12)

    def test_forward_errors(self):
        params = ToyLmParams.uniform(4)
        with self.assertRaises(TokenOutOfRange):
            toy_forward(params, (0,), (4,))
        with self.assertRaises(EmptySequence):
            toy_forward(params, (), (1,))
        with self.assertRaises(EmptySequence):
            toy_forward(params, (0,), ())

    def test_vocab_limit(self):
        with self.assertRaises(ConfigError):
            ToyLmParams.uniform(33)
        with self.assertRaises(ConfigError):
            ToyLmParams(np.zeros((3, 4)))

    def test_grad_check_uniform(self):
        pair = TokenizedPair(id="p", prompt=(0,), chosen=(1, 2), rejected=(3,))
        self.assertLess(grad_check(ToyLmParams.uniform(8), pair, OrpoConfig(0.1)), 1e-5)

    def test_grad_check_random_seeds(self):
        """10個のシードで解析的勾配が中心差分と一致する"""
        for seed in range(10):
            with self.subTest(seed=seed):
                pairs = synthetic_preference_set(n_pairs=3, vocab_size=8, seed=seed)
                params = ToyLmParams.random(8, seed=seed)
                self.assertLess(grad_check(params, pairs, OrpoConfig(0.1)), 1e-4)

    def test_lambda_zero_is_sft_only(self):
        pair = synthetic_preference_set(n_pairs=1, vocab_size=8, seed=3)[0]
        params = ToyLmParams.random(8, seed=3)
        result = toy_loss_and_grad(params, pair, OrpoConfig(0.0))
        chosen = toy_forward(params, pair.prompt, pair.chosen)
        self.assertAlmostEqual(result.loss, sft_nll(chosen), places=12)

    def test_training_separates_pairs(self):
        """学習後はすべての対で chosen の平均対数確率が rejected を上回る"""
        pairs = synthetic_preference_set()
        result = train_toy(pairs, OrpoConfig(0.1), learning_rate=0.1, steps=300)
        self.assertEqual(result.separation_after, 1.0)
        self.assertEqual(separation(result.params, pairs), 1.0)
        self.assertEqual(len(result.losses), 300)
        for before, after in zip(result.losses, result.losses[1:]):
            self.assertLessEqual(after, before + 1e-12)

    def test_audit_rows(self):
        pairs = synthetic_preference_set(n_pairs=2, vocab_size=8)
        rows = audit_rows(ToyLmParams.uniform(8), pairs, OrpoConfig(0.1))
        self.assertEqual([row["id"] for row in rows], ["pair-000", "pair-001"])
        for row in rows:
            self.assertAlmostEqual(row["total"], row["sft_nll"] + 0.1 * row["or_loss"], places=12)


if __name__ == "__main__":
    unittest.main()
