#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
LLMクライアントモジュール

OpenAI互換のチャット補完エンドポイント（教師・生徒モデル）と埋め込みエンドポイントへの
アクセスを抽象化します。テスト用に決定的なモックと、記録済み応答を再生するバックエンドを持ちます。
"""

import hashlib
import json
import os
import random
import re
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import requests
from dotenv import load_dotenv

from src.utils.exceptions import (
    AuthError,
    BackendError,
    BudgetExceeded,
    ConfigError,
    MalformedResponse,
    RateLimited,
    TransportError,
    ValidationError,
)
from src.utils.logger_util import setup_logger

logger = setup_logger(__name__)

# 環境変数の読み込み
load_dotenv()

CHAT_PATH = "/v1/chat/completions"
RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def to_dict(self) -> Dict[str, str]:
        return {"role": Role(self.role).value, "content": self.content}


@dataclass(frozen=True)
class ChatRequest:
    """
    チャット補完リクエスト

    Attributes:
        model: モデル名
        messages: メッセージ列
        temperature: 温度（パイプラインでは常に0）
        max_tokens: 生成トークン上限
        seed: 乱数シード（任意）
    """
    model: str
    messages: Tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: Optional[int] = None

    @classmethod
    def user(cls, model: str, prompt: str, max_tokens: int = 1024, seed: Optional[int] = None) -> "ChatRequest":
        """単一のユーザーメッセージから貪欲デコードのリクエストを作る"""
        return cls(model=model, messages=(ChatMessage(Role.USER, prompt),), max_tokens=max_tokens, seed=seed)

    @property
    def prompt_text(self) -> str:
        return "\n".join(message.content for message in self.messages)

    def content_chars(self) -> int:
        return sum(len(message.content) for message in self.messages)

    def validate(self, token_budget: Optional[int] = None, chars_per_token: int = 4) -> None:
        """
        Raises:
            ValidationError: モデル名・メッセージ・max_tokens が不正
            BudgetExceeded: 文字数/chars_per_token がトークン予算を超える
        """
        if not self.model:
            raise ValidationError("モデル名が指定されていません")
        if not self.messages:
            raise ValidationError("メッセージが空です")
        if self.max_tokens < 1:
            raise ValidationError(f"max_tokens は正の整数である必要があります: {self.max_tokens}")
        if token_budget is not None:
            estimated = self.content_chars() / chars_per_token
            if estimated > token_budget:
                raise BudgetExceeded(f"入力がトークン予算を超えています: 推定 {estimated:.0f} > {token_budget}")

    def to_body(self) -> Dict[str, Any]:
        body: Dict[str, Any] = {
            "model": self.model,
            "messages": [message.to_dict() for message in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        if self.seed is not None:
            body["seed"] = self.seed
        return body


def serialize_request(request: ChatRequest) -> bytes:
    """リクエストボディをバイト列に直列化する（同じリクエストなら常に同じバイト列）"""
    return json.dumps(request.to_body(), sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass
class ChatResponse:
    content: str
    finish_reason: str = "stop"
    prompt_tokens: int = 0
    completion_tokens: int = 0
    retry_count: int = 0

    @property
    def usage(self) -> Tuple[int, int]:
        return self.prompt_tokens, self.completion_tokens


def parse_chat_body(body: Any) -> ChatResponse:
    """
    チャット補完の応答ボディを解析します。

    Raises:
        MalformedResponse: choices[0].message.content が取り出せない
    """
    try:
        choice = body["choices"][0]
        content = choice["message"]["content"]
        finish_reason = choice.get("finish_reason") or "stop"
    except (KeyError, IndexError, TypeError) as e:
        raise MalformedResponse(f"チャット応答の形式が不正です: {e}") from e
    if content is None or not isinstance(content, str):
        raise MalformedResponse(f"チャット応答に本文がありません（finish_reason={finish_reason}）")
    usage = body.get("usage") or {}
    return ChatResponse(
        content=content,
        finish_reason=finish_reason,
        prompt_tokens=int(usage.get("prompt_tokens", 0) or 0),
        completion_tokens=int(usage.get("completion_tokens", 0) or 0),
    )


class LlmBackend(ABC):
    """
    チャット補完バックエンドの基底クラス

    複数スレッドから共有でき、同時実行数は parallel で制限されます。
    """

    def __init__(self, token_budget: Optional[int] = 4096, chars_per_token: int = 4, parallel: int = 4):
        if chars_per_token < 1:
            raise ConfigError("chars_per_token は正の整数である必要があります")
        if parallel < 1:
            raise ConfigError("parallel は正の整数である必要があります")
        self.token_budget = token_budget
        self.chars_per_token = chars_per_token
        self.parallel = parallel
        self._slots = threading.BoundedSemaphore(parallel)
        self._stats_lock = threading.Lock()
        self.telemetry: Dict[str, int] = {"requests": 0, "retries": 0, "failures": 0}

    def _record(self, retries: int, failed: bool = False) -> None:
        with self._stats_lock:
            self.telemetry["requests"] += 1
            self.telemetry["retries"] += retries
            if failed:
                self.telemetry["failures"] += 1

    def chat(self, request: ChatRequest) -> ChatResponse:
        request.validate(self.token_budget, self.chars_per_token)
        if request.temperature != 0:
            logger.warning(f"温度 {request.temperature} が指定されました。パイプラインは貪欲デコード（温度0）を前提とします")
        with self._slots:
            return self._complete(request)

    @abstractmethod
    def _complete(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError


class HttpChatBackend(LlmBackend):
    """
    OpenAI互換エンドポイントへのHTTPバックエンド

    転送エラーとHTTP 429/5xxは指数バックオフ（ジッター付き）で再試行し、
    401/403は再試行せずに AuthError を送出します。
    """

    def __init__(
        self,
        base_url: Optional[str] = None,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff_base: float = 1.0,
        token_budget: Optional[int] = 4096,
        chars_per_token: int = 4,
        parallel: int = 4,
        session: Optional[requests.Session] = None,
        sleep: Callable[[float], None] = time.sleep,
        seed: Optional[int] = None,
    ):
        super().__init__(token_budget=token_budget, chars_per_token=chars_per_token, parallel=parallel)
        base_url = base_url or os.getenv("VULREAD_API_BASE")
        if not base_url:
            raise ConfigError("APIのベースURLが設定されていません（VULREAD_API_BASE）")
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.getenv("VULREAD_API_KEY", "")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.session = session or requests.Session()
        self._sleep = sleep
        self._jitter = random.Random(seed)
        self.last_retry_count = 0
        logger.info(f"HTTPバックエンドを初期化しました: {self.base_url}")

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _backoff(self, attempt: int) -> float:
        return self.backoff_base * (2 ** attempt) + self._jitter.uniform(0, self.backoff_base)

    def _post(self, path: str, payload: bytes) -> Tuple[Any, int]:
        """
        ボディを送信し、(解析済みJSON, 再試行回数) を返します。

        Raises:
            AuthError: 401/403
            RateLimited: 429 が再試行上限まで続いた
            TransportError: 接続失敗・5xx が再試行上限まで続いた
            BackendError: その他の4xx
            MalformedResponse: 応答がJSONでない
        """
        url = f"{self.base_url}{path}"
        retries = 0
        while True:
            error: Optional[BackendError] = None
            try:
                response = self.session.post(url, data=payload, headers=self._headers(), timeout=self.timeout)
            except requests.exceptions.RequestException as e:
                error = TransportError(f"APIリクエスト中にエラーが発生しました: {e}")
            else:
                status = response.status_code
                if status in (401, 403):
                    self._record(retries, failed=True)
                    raise AuthError(f"認証に失敗しました（HTTP {status}）")
                if status == 429:
                    error = RateLimited("レート制限に達しました（HTTP 429）")
                elif status in RETRYABLE_STATUS or status >= 500:
                    error = TransportError(f"サーバーエラーが発生しました（HTTP {status}）")
                elif status >= 400:
                    self._record(retries, failed=True)
                    raise BackendError(f"リクエストが拒否されました（HTTP {status}）: {response.text[:200]}")
                else:
                    try:
                        body = response.json()
                    except ValueError as e:
                        self._record(retries, failed=True)
                        raise MalformedResponse(f"応答がJSONではありません: {e}") from e
                    self._record(retries)
                    self.last_retry_count = retries
                    return body, retries

            if retries >= self.max_retries:
                self._record(retries, failed=True)
                logger.error(f"{url} へのリクエストが {retries} 回の再試行後も失敗しました: {error}")
                raise error
            delay = self._backoff(retries)
            retries += 1
            logger.warning(f"{error}。{delay:.2f} 秒後に再試行します（{retries}/{self.max_retries}）")
            self._sleep(delay)

    def post_json(self, path: str, body: Dict[str, Any]) -> Any:
        """任意のJSONボディを送信する（埋め込みエンドポイント用）"""
        payload = json.dumps(body, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
        with self._slots:
            result, _ = self._post(path, payload)
        return result

    def _complete(self, request: ChatRequest) -> ChatResponse:
        body, retries = self._post(CHAT_PATH, serialize_request(request))
        response = parse_chat_body(body)
        response.retry_count = retries
        return response


# ----------------------------------------------------------------------
# テスト・オフライン実行用バックエンド
# ----------------------------------------------------------------------
_ASSERTED = re.compile(r"Assume the function is (VULNERABLE|SAFE)")
_TARGET = re.compile(r"CWE mapping target: ([^\n]*)")
_CODE_BLOCK = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.DOTALL)
_KG_CLASSES = re.compile(r"^KG CLASSES: (.*)$", re.MULTILINE)
_KG_CANDIDATE = re.compile(r"^KG CANDIDATE: (CWE-\d+)", re.MULTILINE)


def mock_rationale(prompt: str) -> str:
    """
    プロンプトから決定的に構造化根拠文を作ります。

    教師プロンプトでは指定ラベルと対象CWEに従い、推論プロンプトでは
    KGコンテキストの最上位候補CWEがあれば脆弱、なければ安全と答えます。
    """
    from src.kg.entity_extractor import extract_entities

    code_match = _CODE_BLOCK.search(prompt)
    code = code_match.group(1) if code_match else ""
    entities = extract_entities(code)[:3]

    asserted = _ASSERTED.search(prompt)
    if asserted:
        vulnerable = asserted.group(1) == "VULNERABLE"
        target = _TARGET.search(prompt)
        cwes = [] if not target else [t.strip() for t in target.group(1).split(",") if t.strip().startswith("CWE-")]
    else:
        cwes = _KG_CANDIDATE.findall(prompt)[:1]
        vulnerable = bool(cwes)
    if not vulnerable:
        cwes = []

    class_ids: List[str] = []
    classes_match = _KG_CLASSES.search(prompt)
    if classes_match and classes_match.group(1).strip() != "none":
        class_ids = [c.strip() for c in classes_match.group(1).split(",") if c.strip()]

    lines = [f"VERDICT: {'VULNERABLE' if vulnerable else 'SAFE'}", "ENTITIES:"]
    lines += [f"- {entity.name} ({entity.kind.value})" for entity in entities]
    lines.append("CLASSES:")
    if entities and class_ids:
        lines.append(f"- {entities[0].name} -> {class_ids[0]}")
    lines.append(f"CWE: {', '.join(cwes) if cwes else 'NONE'}")
    if vulnerable:
        names = ", ".join(entity.name for entity in entities) or "the function body"
        lines.append(f"SUMMARY: Unsafe handling around {names} leads to {', '.join(cwes) or 'a weakness'}.")
    else:
        lines.append("SUMMARY: No known vulnerabilities were found; inputs and resources are handled safely.")
    return "\n".join(lines)


class MockBackend(LlmBackend):
    """
    決定的なモックバックエンド

    プロンプトのSHA-256をキーにした応答表を引き、未登録のプロンプトには
    generator（既定は mock_rationale）の結果を返します。
    """

    def __init__(
        self,
        responses: Optional[Dict[str, str]] = None,
        generator: Optional[Callable[[str], str]] = mock_rationale,
        token_budget: Optional[int] = 4096,
        chars_per_token: int = 4,
        parallel: int = 4,
    ):
        super().__init__(token_budget=token_budget, chars_per_token=chars_per_token, parallel=parallel)
        self.responses: Dict[str, str] = dict(responses or {})
        self.generator = generator
        self.calls: List[ChatRequest] = []
        self._calls_lock = threading.Lock()

    @classmethod
    def from_prompts(cls, mapping: Dict[str, str], **kwargs) -> "MockBackend":
        """プロンプト本文→応答 の辞書から作る"""
        return cls(responses={prompt_hash(prompt): text for prompt, text in mapping.items()}, **kwargs)

    def register(self, prompt: str, response: str) -> None:
        self.responses[prompt_hash(prompt)] = response

    def _complete(self, request: ChatRequest) -> ChatResponse:
        with self._calls_lock:
            self.calls.append(request)
        key = prompt_hash(request.prompt_text)
        if key in self.responses:
            content = self.responses[key]
        elif self.generator is not None:
            content = self.generator(request.prompt_text)
        else:
            raise MalformedResponse("モックにこのプロンプトの応答が登録されていません")
        self._record(0)
        return ChatResponse(
            content=content,
            prompt_tokens=request.content_chars() // self.chars_per_token,
            completion_tokens=len(content) // self.chars_per_token,
        )


class ReplayBackend(LlmBackend):
    """記録済みの応答ボディを順に再生するバックエンド"""

    def __init__(self, bodies: Sequence[Any], token_budget: Optional[int] = 4096, chars_per_token: int = 4):
        super().__init__(token_budget=token_budget, chars_per_token=chars_per_token, parallel=1)
        if not bodies:
            raise ConfigError("再生する応答がありません")
        self.bodies = list(bodies)
        self._index = 0

    @classmethod
    def from_file(cls, path: str, **kwargs) -> "ReplayBackend":
        """JSONファイル（応答ボディ1件、またはその配列）から作る"""
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return cls(data if isinstance(data, list) else [data], **kwargs)

    def _complete(self, request: ChatRequest) -> ChatResponse:
        body = self.bodies[self._index % len(self.bodies)]
        self._index += 1
        self._record(0)
        return parse_chat_body(body)


def chat(backend: LlmBackend, request: ChatRequest) -> ChatResponse:
    """バックエンドにリクエストを送り応答を返す"""
    return backend.chat(request)


def create_backend(
    backend_config: Dict[str, Any],
    kind: Optional[str] = None,
    seed: Optional[int] = None,
) -> LlmBackend:
    """
    設定からバックエンドを作成します。

    Args:
        backend_config: ConfigManager.get_backend_config() の値
        kind: "mock" / "http"（Noneなら設定の kind）
        seed: 再試行ジッターの乱数シード（HTTPのみ）
    """
    kind = kind or backend_config.get("kind", "mock")
    common = {
        "token_budget": backend_config.get("token_budget", 4096),
        "chars_per_token": int(backend_config.get("chars_per_token", 4)),
        "parallel": int(backend_config.get("parallel", 4)),
    }
    if kind == "mock":
        logger.info("モックバックエンドを使用します")
        return MockBackend(**common)
    if kind == "http":
        return HttpChatBackend(
            base_url=backend_config.get("base_url"),
            timeout=float(backend_config.get("timeout", 60.0)),
            max_retries=int(backend_config.get("max_retries", 3)),
            backoff_base=float(backend_config.get("backoff_base", 1.0)),
            seed=seed,
            **common,
        )
    raise ConfigError(f"未知のバックエンドです: {kind}")
