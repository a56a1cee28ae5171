#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
ORPO検証用のトイ言語モデル

語彙 V ≤ 32 のバイグラム softmax 言語モデルで、ORPO損失の解析的勾配を計算し、
中心差分との比較（勾配チェック）と小規模な選好学習を行います。
"""

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.orpo.losses import (
    OrpoConfig,
    PairLoss,
    TokenLogProbs,
    clamp_avg_logprob,
    or_loss_grad,
    pair_loss,
)
from src.utils.exceptions import ConfigError, EmptySequence, TokenOutOfRange, ValidationError
from src.utils.logger_util import setup_logger

logger = setup_logger(__name__)

MAX_VOCAB = 32
FD_STEP = 1e-6


@dataclass
class ToyLmParams:
    """
    バイグラムロジット表

    Attributes:
        logits: V×V 行列。logits[prev, next] が直前トークン prev の下での next のロジット
    """
    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.array(self.logits, dtype=np.float64)
        if self.logits.ndim != 2 or self.logits.shape[0] != self.logits.shape[1]:
            raise ConfigError(f"ロジット表は正方行列である必要があります: {self.logits.shape}")
        if not 1 <= self.vocab_size <= MAX_VOCAB:
            raise ConfigError(f"語彙サイズは1以上{MAX_VOCAB}以下である必要があります: {self.vocab_size}")

    @property
    def vocab_size(self) -> int:
        return int(self.logits.shape[0])

    @property
    def theta(self) -> np.ndarray:
        """パラメータの平坦なビュー（書き換えると logits に反映される）"""
        return self.logits.reshape(-1)

    @classmethod
    def uniform(cls, vocab_size: int) -> "ToyLmParams":
        return cls(np.zeros((vocab_size, vocab_size)))

    @classmethod
    def random(cls, vocab_size: int, seed: int = 42, scale: float = 0.5) -> "ToyLmParams":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, scale, size=(vocab_size, vocab_size)))

    def copy(self) -> "ToyLmParams":
        return ToyLmParams(self.logits.copy())

    def log_softmax(self) -> np.ndarray:
        """行ごとの対数確率表"""
        shifted = self.logits - self.logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class TokenizedPair:
    """トークン化済みの選好レコード"""
    id: str
    prompt: Tuple[int, ...]
    chosen: Tuple[int, ...]
    rejected: Tuple[int, ...]


def _transitions(params: ToyLmParams, prompt: Sequence[int], completion: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    if not prompt:
        raise EmptySequence("プロンプトが空です")
    if not completion:
        raise EmptySequence("補完が空です")
    vocab = params.vocab_size
    for token in list(prompt) + list(completion):
        if not 0 <= int(token) < vocab:
            raise TokenOutOfRange(f"トークンID {token} が語彙サイズ {vocab} の範囲外です")
    previous = np.array([prompt[-1]] + list(completion[:-1]), dtype=np.int64)
    following = np.array(list(completion), dtype=np.int64)
    return previous, following


def toy_forward(params: ToyLmParams, prompt: Sequence[int], completion: Sequence[int]) -> TokenLogProbs:
    """
    補完の各トークンの対数確率を直前トークン条件付きで計算します
    （最初の補完トークンはプロンプトの最後のトークンで条件付け）。

    Raises:
        TokenOutOfRange: 語彙外のトークン
        EmptySequence: プロンプトまたは補完が空
    """
    previous, following = _transitions(params, prompt, completion)
    table = params.log_softmax()
    logprobs = table[previous, following]
    # 浮動小数の丸めで正になった値は0に揃える
    logprobs = np.minimum(logprobs, 0.0)
    return TokenLogProbs(tokens=tuple(int(t) for t in following), logprobs=tuple(float(v) for v in logprobs))


def _sum_logprob_grad(params: ToyLmParams, prompt: Sequence[int], completion: Sequence[int]) -> np.ndarray:
    """∂(Σ_t log p_t)/∂logits = Σ_t (onehot(next_t) − softmax(row prev_t)) を行 prev_t に加算"""
    previous, following = _transitions(params, prompt, completion)
    probs = np.exp(params.log_softmax())
    grad = np.zeros_like(params.logits)
    for prev, nxt in zip(previous, following):
        grad[prev] -= probs[prev]
        grad[prev, nxt] += 1.0
    return grad


@dataclass
class LossAndGrad:
    loss: float
    grad: np.ndarray
    parts: PairLoss


def toy_loss_and_grad(params: ToyLmParams, pair: TokenizedPair, config: OrpoConfig) -> LossAndGrad:
    """1対の L_ORPO とその解析的勾配"""
    chosen = toy_forward(params, pair.prompt, pair.chosen)
    rejected = toy_forward(params, pair.prompt, pair.rejected)
    parts = pair_loss(chosen, rejected, config)

    chosen_sum_grad = _sum_logprob_grad(params, pair.prompt, pair.chosen)
    grad = -chosen_sum_grad
    if config.lambda_ != 0.0:
        d_chosen, d_rejected = or_loss_grad(parts.chosen_avg_lp, parts.rejected_avg_lp)
        # 丸めた側は avg_lp に依存しないため勾配は0
        if clamp_avg_logprob(sum(chosen.logprobs) / len(chosen))[1]:
            d_chosen = 0.0
        if clamp_avg_logprob(sum(rejected.logprobs) / len(rejected))[1]:
            d_rejected = 0.0
        rejected_sum_grad = _sum_logprob_grad(params, pair.prompt, pair.rejected)
        grad = grad + config.lambda_ * (
            d_chosen * chosen_sum_grad / len(pair.chosen) + d_rejected * rejected_sum_grad / len(pair.rejected)
        )
    return LossAndGrad(loss=parts.total, grad=grad, parts=parts)


def toy_sft_grad(params: ToyLmParams, pair: TokenizedPair) -> np.ndarray:
    """SFT項のみの勾配"""
    return -_sum_logprob_grad(params, pair.prompt, pair.chosen)


def batch_loss_and_grad(
    params: ToyLmParams,
    pairs: Sequence[TokenizedPair],
    config: OrpoConfig,
) -> Tuple[float, np.ndarray]:
    """対の平均損失と平均勾配"""
    if not pairs:
        raise ValidationError("選好対が空です")
    total = 0.0
    grad = np.zeros_like(params.logits)
    for pair in pairs:
        result = toy_loss_and_grad(params, pair, config)
        total += result.loss
        grad += result.grad
    return total / len(pairs), grad / len(pairs)


def toy_train_step(
    params: ToyLmParams,
    pairs,
    learning_rate: float,
    config: OrpoConfig,
) -> Tuple[ToyLmParams, float]:
    """
    解析的勾配による全バッチ勾配降下を1ステップ行います。

    Args:
        params: 現在のパラメータ
        pairs: TokenizedPair またはその列
        learning_rate: 学習率（正）
        config: ORPO設定

    Returns:
        Tuple[ToyLmParams, float]: (更新後のパラメータ, 更新前の損失)
    """
    if learning_rate <= 0:
        raise ConfigError(f"学習率は正である必要があります: {learning_rate}")
    batch = [pairs] if isinstance(pairs, TokenizedPair) else list(pairs)
    loss, grad = batch_loss_and_grad(params, batch, config)
    return ToyLmParams(params.logits - learning_rate * grad), loss


def grad_check(params: ToyLmParams, pairs, config: OrpoConfig, step: float = FD_STEP) -> float:
    """
    解析的勾配と中心差分を全パラメータで比較し、最大相対誤差を返します。
    相対誤差の分母は max(|解析値|, |数値|, 1e-8) です。
    """
    batch = [pairs] if isinstance(pairs, TokenizedPair) else list(pairs)
    _, analytic = batch_loss_and_grad(params, batch, config)
    perturbed = params.copy()
    theta = perturbed.theta
    analytic_flat = analytic.reshape(-1)
    worst = 0.0
    for index in range(theta.size):
        original = theta[index]
        theta[index] = original + step
        plus, _ = batch_loss_and_grad(perturbed, batch, config)
        theta[index] = original - step
        minus, _ = batch_loss_and_grad(perturbed, batch, config)
        theta[index] = original
        numeric = (plus - minus) / (2 * step)
        denominator = max(abs(analytic_flat[index]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic_flat[index] - numeric) / denominator)
    return worst


def synthetic_preference_set(n_pairs: int = 20, vocab_size: int = 16, seed: int = 42) -> List[TokenizedPair]:
    """
    合成の選好対を作ります。chosen は偶数トークン、rejected は奇数トークンだけで構成し、
    どの対の chosen 遷移も他の対の rejected 遷移と衝突しないようにします。
    """
    if vocab_size < 4:
        raise ConfigError("合成データには語彙サイズ4以上が必要です")
    rng = random.Random(seed)
    good = list(range(0, vocab_size, 2))
    bad = list(range(1, vocab_size, 2))
    pairs = []
    for index in range(n_pairs):
        prompt = tuple(rng.randrange(vocab_size) for _ in range(rng.randint(2, 4)))
        chosen = tuple(rng.choice(good) for _ in range(rng.randint(3, 6)))
        rejected = tuple(rng.choice(bad) for _ in range(rng.randint(3, 6)))
        pairs.append(TokenizedPair(id=f"pair-{index:03d}", prompt=prompt, chosen=chosen, rejected=rejected))
    return pairs


def separation(params: ToyLmParams, pairs: Sequence[TokenizedPair]) -> float:
    """avg_logprob(chosen) > avg_logprob(rejected) を満たす対の割合"""
    if not pairs:
        return 0.0
    won = 0
    for pair in pairs:
        chosen = toy_forward(params, pair.prompt, pair.chosen)
        rejected = toy_forward(params, pair.prompt, pair.rejected)
        if sum(chosen.logprobs) / len(chosen) > sum(rejected.logprobs) / len(rejected):
            won += 1
    return won / len(pairs)


@dataclass
class TrainResult:
    params: ToyLmParams
    losses: List[float] = field(default_factory=list)
    separation_before: float = 0.0
    separation_after: float = 0.0
    clamped: int = 0


def train_toy(
    pairs: Sequence[TokenizedPair],
    config: OrpoConfig,
    learning_rate: float = 0.01,
    steps: int = 200,
    params: Optional[ToyLmParams] = None,
    vocab_size: int = 16,
    seed: int = 42,
) -> TrainResult:
    """
    トイモデルを全バッチ勾配降下で学習します。

    Returns:
        TrainResult: 学習後のパラメータ、各ステップの更新前損失、学習前後の分離率
    """
    params = params or ToyLmParams.random(vocab_size, seed=seed, scale=0.01)
    result = TrainResult(params=params, separation_before=separation(params, pairs))
    for step in range(steps):
        params, loss = toy_train_step(params, pairs, learning_rate, config)
        result.losses.append(loss)
        if step % 50 == 0:
            logger.debug(f"ステップ {step}: 損失 {loss:.6f}")
    result.params = params
    result.separation_after = separation(params, pairs)
    result.clamped = sum(pair_audit(params, pair, config).clamped for pair in pairs)
    logger.info(
        f"トイモデルを {steps} ステップ学習しました: 損失 {result.losses[0] if result.losses else 0:.6f}"
        f" → {result.losses[-1] if result.losses else 0:.6f}、分離率 {result.separation_after:.2f}"
    )
    return result


def pair_audit(params: ToyLmParams, pair: TokenizedPair, config: OrpoConfig) -> PairLoss:
    """1対の損失内訳（監査出力用）"""
    chosen = toy_forward(params, pair.prompt, pair.chosen)
    rejected = toy_forward(params, pair.prompt, pair.rejected)
    return pair_loss(chosen, rejected, config)


def audit_rows(params: ToyLmParams, pairs: Sequence[TokenizedPair], config: OrpoConfig) -> List[Dict[str, object]]:
    return [pair_audit(params, pair, config).to_audit(pair.id) for pair in pairs]
