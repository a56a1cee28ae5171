#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
例外定義モジュール

VulReaDツールキット全体で使用される例外クラスを定義します。
CLIは ValidationError 系を終了コード1、それ以外を終了コード2に対応付けます。
"""

from typing import Optional


class VulReadError(Exception):
    """ツールキット共通の基底例外"""


class ValidationError(VulReadError):
    """入力・設定・スキーマの検証に失敗したことを表す例外（終了コード1）"""


class RuntimeFailure(VulReadError):
    """実行時・バックエンド起因の失敗を表す例外（終了コード2）"""


# --- 設定 ---

class ConfigError(ValidationError):
    """設定ファイルや参照パスが不正"""


# --- 知識グラフ ---

class FrozenGraph(VulReadError):
    """凍結済みグラフへの変更操作"""


class GraphNotFrozen(VulReadError):
    """凍結されていないグラフに対する検索操作"""


class MalformedCweId(ValidationError):
    """CWE IDが "CWE-<数字>" の正規形でない"""


class UnknownNode(ValidationError):
    """存在しないノードIDを参照した"""


class KindMismatch(ValidationError):
    """エッジ種別とノード種別の組み合わせが不正"""


class UnknownKind(ValidationError):
    """未知のノード種別・エッジ種別・由来種別"""


class CorruptInput(ValidationError):
    """シリアライズ済みデータが壊れている"""


# --- CWEコーパス ---

class DecodeError(ValidationError):
    """入力がUTF-8としてデコードできない"""


class SchemaError(ValidationError):
    """必須の列・要素が欠落している"""


# --- クラスマッピング ---

class ZeroVector(RuntimeFailure):
    """ゼロベクトルのためコサイン類似度が定義できない"""


# --- 蒸留 ---

class TemplateMissingPlaceholder(ValidationError):
    """テンプレートに必須プレースホルダがない、または未知のプレースホルダがある"""


class BudgetExceeded(ValidationError):
    """プロンプトがトークン予算を超えた"""


class ParseError(VulReadError):
    """教師モデルの応答から構造化セクションを取り出せない"""

    def __init__(self, message: str, section: Optional[str] = None):
        super().__init__(message)
        self.section = section


class MissingSample(ValidationError):
    """根拠ペアに対応するサンプルが存在しない"""


class ContrastCollapse(VulReadError):
    """chosen と rejected が同一の文字列になった"""


# --- ORPO ---

class EmptySequence(ValidationError):
    """空のトークン列"""


class DegenerateProbability(VulReadError):
    """確率が1に近すぎてオッズが発散する"""


class TokenOutOfRange(ValidationError):
    """語彙サイズを超えるトークンID"""


# --- 評価 ---

class EmptyInput(ValidationError):
    """空の評価入力"""


# --- LLMクライアント ---

class BackendError(RuntimeFailure):
    """LLMバックエンド呼び出しの失敗（リトライ後）"""


class AuthError(BackendError):
    """認証エラー（401/403、リトライしない）"""


class RateLimited(BackendError):
    """レート制限（リトライ後も429）"""


class TransportError(BackendError):
    """通信エラー・サーバーエラー"""


class MalformedResponse(BackendError):
    """応答の形式が不正"""
