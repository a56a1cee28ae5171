#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
プロンプトマネージャーモジュール

教師LLM用（ラベル指定あり）と推論用（ラベル指定なし）のプロンプトテンプレートを管理し、
サンプル・KGコンテキストを埋め込んだプロンプトを生成します。
テンプレートのプレースホルダは {{code}} 形式です。
"""

import re
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional

from src.config.config_manager import DEFAULTS_DIR
from src.dataset.samples import FunctionSample
from src.kg.retrieval import RetrievalContext
from src.utils.exceptions import BudgetExceeded, ConfigError, TemplateMissingPlaceholder
from src.utils.logger_util import setup_logger

logger = setup_logger(__name__)

PLACEHOLDER = re.compile(r"\{\{\s*([A-Za-z_]+)\s*\}\}")

TEACHER = "teacher"
INFERENCE = "inference"

# テンプレートごとの (必須プレースホルダ, 使用可能なプレースホルダ)
TEMPLATE_RULES: Dict[str, Dict[str, FrozenSet[str]]] = {
    TEACHER: {
        "required": frozenset({"code", "kg_context", "asserted_label"}),
        "allowed": frozenset({"code", "kg_context", "asserted_label", "target_cwes"}),
    },
    INFERENCE: {
        "required": frozenset({"code", "kg_context"}),
        "allowed": frozenset({"code", "kg_context"}),
    },
}

LABEL_TEXT = {1: "VULNERABLE", 0: "SAFE"}


def placeholders(template: str) -> List[str]:
    """テンプレート内のプレースホルダ名を出現順に返す"""
    return [match.group(1) for match in PLACEHOLDER.finditer(template)]


def validate_template(name: str, template: str) -> None:
    """
    Raises:
        TemplateMissingPlaceholder: 必須のプレースホルダがない、または未知のプレースホルダがある
    """
    rules = TEMPLATE_RULES[name]
    found = set(placeholders(template))
    missing = sorted(rules["required"] - found)
    if missing:
        raise TemplateMissingPlaceholder(
            f"{name} テンプレートに必須のプレースホルダがありません: {', '.join('{{' + m + '}}' for m in missing)}"
        )
    unknown = sorted(found - rules["allowed"])
    if unknown:
        raise TemplateMissingPlaceholder(
            f"{name} テンプレートに未知のプレースホルダがあります: {', '.join('{{' + u + '}}' for u in unknown)}"
        )


class PromptManager:
    """
    プロンプトテンプレートを管理するクラス

    このクラスは以下の機能を提供します：
    1. テンプレートの読み込みと検証
    2. 教師用プロンプト（指定ラベル・対象CWE付き）の生成
    3. 推論用プロンプトの生成とトークン予算の確認
    """

    def __init__(
        self,
        teacher_template: str,
        inference_template: str,
        token_budget: Optional[int] = 4096,
        chars_per_token: int = 4,
    ):
        """
        Args:
            teacher_template: 教師用テンプレート本文
            inference_template: 推論用テンプレート本文
            token_budget: 入力トークン予算（Noneなら確認しない）
            chars_per_token: 1トークンあたりの文字数（トークン数の近似に使用）
        """
        validate_template(TEACHER, teacher_template)
        validate_template(INFERENCE, inference_template)
        if chars_per_token < 1:
            raise ConfigError("chars_per_token は正の整数である必要があります")
        self.templates = {TEACHER: teacher_template, INFERENCE: inference_template}
        self.token_budget = token_budget
        self.chars_per_token = chars_per_token

    @classmethod
    def from_files(
        cls,
        teacher_path: Optional[str] = None,
        inference_path: Optional[str] = None,
        token_budget: Optional[int] = 4096,
        chars_per_token: int = 4,
    ) -> "PromptManager":
        """テンプレートファイルから作成（未指定なら同梱のテンプレート）"""
        teacher_path = Path(teacher_path or DEFAULTS_DIR / "prompts" / "teacher.txt")
        inference_path = Path(inference_path or DEFAULTS_DIR / "prompts" / "inference.txt")
        try:
            teacher = teacher_path.read_text(encoding="utf-8")
            inference = inference_path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"プロンプトテンプレートを読み込めません: {e}") from e
        return cls(teacher, inference, token_budget=token_budget, chars_per_token=chars_per_token)

    def get_template(self, name: str) -> str:
        if name not in self.templates:
            raise ConfigError(f"未知のテンプレート名です: {name}")
        return self.templates[name]

    def format_template(self, name: str, **values: str) -> str:
        """
        テンプレートにプレースホルダの値を埋め込みます（値の中の {{...}} は再展開しません）
        """
        template = self.get_template(name)
        return PLACEHOLDER.sub(lambda match: values.get(match.group(1), ""), template)

    def estimate_tokens(self, text: str) -> float:
        return len(text) / self.chars_per_token

    def check_budget(self, prompt: str, sample_id: str = "") -> None:
        if self.token_budget is None:
            return
        estimated = self.estimate_tokens(prompt)
        if estimated > self.token_budget:
            raise BudgetExceeded(
                f"サンプル {sample_id} のプロンプトがトークン予算を超えています: 推定 {estimated:.0f} > {self.token_budget}"
            )

    def build_prompt(
        self,
        sample: FunctionSample,
        kg_context: Optional[RetrievalContext] = None,
        asserted_label: Optional[int] = None,
    ) -> str:
        """
        プロンプトを生成します。

        Args:
            sample: 対象サンプル
            kg_context: KGコンテキスト（Noneなら一致なし扱い）
            asserted_label: 教師に仮定させるラベル。Noneなら推論用プロンプト

        Returns:
            str: プロンプト

        Raises:
            BudgetExceeded: トークン予算を超える
        """
        context = kg_context or RetrievalContext.empty()
        if asserted_label is None:
            prompt = self.format_template(INFERENCE, code=sample.code, kg_context=context.rendered)
        else:
            if asserted_label not in LABEL_TEXT:
                raise ConfigError(f"指定ラベルは0か1である必要があります: {asserted_label!r}")
            # 脆弱と仮定させる場合のみ正解CWEを対象として示す
            target = ", ".join(sample.sorted_cwe_ids()) if asserted_label == 1 and sample.cwe_ids else "NONE"
            prompt = self.format_template(
                TEACHER,
                code=sample.code,
                kg_context=context.rendered,
                asserted_label=LABEL_TEXT[asserted_label],
                target_cwes=target,
            )
        self.check_budget(prompt, sample.id)
        return prompt


def build_prompt(
    sample: FunctionSample,
    kg_context: Optional[RetrievalContext] = None,
    asserted_label: Optional[int] = None,
    manager: Optional[PromptManager] = None,
) -> str:
    """同梱テンプレート（または指定のマネージャー）でプロンプトを生成する"""
    return (manager or get_prompt_manager()).build_prompt(sample, kg_context, asserted_label)


# シングルトンインスタンス
_prompt_manager: Optional[PromptManager] = None


def get_prompt_manager() -> PromptManager:
    """
    同梱テンプレートを使うプロンプトマネージャーのシングルトンインスタンスを取得します
    """
    global _prompt_manager
    if _prompt_manager is None:
        _prompt_manager = PromptManager.from_files()
    return _prompt_manager
