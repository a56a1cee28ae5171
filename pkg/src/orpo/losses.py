#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
ORPO損失モジュール

系列の対数確率から SFT 損失（負の対数尤度）とオッズ比損失を計算し、
L_ORPO = L_SFT + λ·L_OR を組み立てます。
系列の確率 P は平均トークン対数確率の指数 exp(avg_lp) とします。
"""

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from src.utils.exceptions import ConfigError, DegenerateProbability, EmptySequence, ValidationError

# avg_lp がこれより大きい（P ≥ 1 - 1e-15）とオッズが発散する
DEGENERATE_LOGPROB = -1e-15
DEFAULT_LAMBDA = 0.1


@dataclass(frozen=True)
class TokenLogProbs:
    """
    トークン列とその対数確率（自然対数）

    Attributes:
        tokens: トークンID列
        logprobs: 各トークンの対数確率（すべて有限かつ0以下）
    """
    tokens: Tuple[int, ...]
    logprobs: Tuple[float, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.logprobs):
            raise ValidationError(f"トークン数と対数確率の数が一致しません: {len(self.tokens)} != {len(self.logprobs)}")
        if not self.logprobs:
            raise EmptySequence("空の系列です")
        for value in self.logprobs:
            if not math.isfinite(value) or value > 0:
                raise ValidationError(f"対数確率は有限かつ0以下である必要があります: {value}")

    @classmethod
    def from_logprobs(cls, logprobs: Sequence[float]) -> "TokenLogProbs":
        """トークンIDを 0..n-1 として作る（損失計算のみで使う場合）"""
        values = tuple(float(v) for v in logprobs)
        return cls(tokens=tuple(range(len(values))), logprobs=values)

    def __len__(self) -> int:
        return len(self.logprobs)


@dataclass(frozen=True)
class OrpoConfig:
    lambda_: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not math.isfinite(self.lambda_) or self.lambda_ < 0:
            raise ConfigError(f"λ は0以上である必要があります: {self.lambda_}")


def _check(seq: TokenLogProbs) -> None:
    if len(seq) == 0:
        raise EmptySequence("空の系列です")


def avg_logprob(seq: TokenLogProbs) -> float:
    """平均トークン対数確率"""
    _check(seq)
    return math.fsum(seq.logprobs) / len(seq)


def sft_nll(seq: TokenLogProbs) -> float:
    """負の対数尤度 −Σ_t log p_t"""
    _check(seq)
    return -math.fsum(seq.logprobs)


def _check_avg(avg_lp: float) -> None:
    if not math.isfinite(avg_lp) or avg_lp > 0:
        raise ValidationError(f"平均対数確率は有限かつ0以下である必要があります: {avg_lp}")
    if avg_lp > DEGENERATE_LOGPROB:
        raise DegenerateProbability(f"系列の確率が1に近すぎます（avg_lp={avg_lp!r}）")


def clamp_avg_logprob(avg_lp: float) -> Tuple[float, bool]:
    """発散しない範囲に平均対数確率を丸め、(値, 丸めたか) を返す"""
    if avg_lp > DEGENERATE_LOGPROB:
        return DEGENERATE_LOGPROB, True
    return avg_lp, False


def log_odds(avg_lp: float) -> float:
    """log(P/(1-P)) を avg_lp − log(1 − exp(avg_lp)) で計算する（P→1 でも桁落ちしない形）"""
    _check_avg(avg_lp)
    return avg_lp - math.log(-math.expm1(avg_lp))


def log_odds_grad(avg_lp: float) -> float:
    """d log_odds / d avg_lp = 1 / (1 − exp(avg_lp))"""
    _check_avg(avg_lp)
    return -1.0 / math.expm1(avg_lp)


def _softplus(x: float) -> float:
    return float(np.logaddexp(0.0, x))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def or_loss(chosen_avg_lp: float, rejected_avg_lp: float) -> float:
    """
    1対あたりのオッズ比損失 −log σ(log odds(P⁺) − log odds(P⁻))

    Raises:
        DegenerateProbability: どちらかの P が 1 − 1e-15 以上
    """
    z = log_odds(chosen_avg_lp) - log_odds(rejected_avg_lp)
    return _softplus(-z)


def or_loss_grad(chosen_avg_lp: float, rejected_avg_lp: float) -> Tuple[float, float]:
    """or_loss の (∂/∂chosen_avg_lp, ∂/∂rejected_avg_lp)"""
    z = log_odds(chosen_avg_lp) - log_odds(rejected_avg_lp)
    weight = _sigmoid(-z)
    return -weight * log_odds_grad(chosen_avg_lp), weight * log_odds_grad(rejected_avg_lp)


def orpo_total(sft: float, or_term: float, config: OrpoConfig = OrpoConfig()) -> float:
    """L_ORPO = sft + λ·or_term"""
    if sft < 0 or or_term < 0:
        raise ValidationError(f"損失は0以上である必要があります: sft={sft}, or={or_term}")
    return sft + config.lambda_ * or_term


@dataclass(frozen=True)
class PairLoss:
    sft_nll: float
    chosen_avg_lp: float
    rejected_avg_lp: float
    or_loss: float
    total: float
    clamped: int = 0

    def to_audit(self, pair_id: str) -> dict:
        return {
            "id": pair_id,
            "sft_nll": self.sft_nll,
            "chosen_avg_lp": self.chosen_avg_lp,
            "rejected_avg_lp": self.rejected_avg_lp,
            "or_loss": self.or_loss,
            "total": self.total,
        }


def pair_loss(chosen: TokenLogProbs, rejected: TokenLogProbs, config: OrpoConfig = OrpoConfig()) -> PairLoss:
    """1対の損失内訳。P が1に近すぎる系列は丸めて件数を数える"""
    chosen_avg, chosen_clamped = clamp_avg_logprob(avg_logprob(chosen))
    rejected_avg, rejected_clamped = clamp_avg_logprob(avg_logprob(rejected))
    sft = sft_nll(chosen)
    odds_ratio = or_loss(chosen_avg, rejected_avg)
    return PairLoss(
        sft_nll=sft,
        chosen_avg_lp=chosen_avg,
        rejected_avg_lp=rejected_avg,
        or_loss=odds_ratio,
        total=orpo_total(sft, odds_ratio, config),
        clamped=int(chosen_clamped) + int(rejected_clamped),
    )
