#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
ORPOモジュールパッケージ
"""

from .losses import OrpoConfig, TokenLogProbs, avg_logprob, log_odds, or_loss, orpo_total, sft_nll
from .toy_model import ToyLmParams, grad_check, synthetic_preference_set, toy_forward, toy_train_step, train_toy
