# -*- coding: utf-8 -*-
"""
エンベディング生成モジュール

テキストからエンベディングを生成する EmbeddingProvider の実装群を提供します。

- SentenceTransformerEmbedder: ローカルの SentenceTransformer モデル
- HttpEmbedder: OpenAI互換の /v1/embeddings エンドポイント
- HashEmbedder: テスト用の決定的なハッシュベース埋め込み
- CachedEmbedder: 内容ハッシュをキーにしたファイルキャッシュ
"""

import hashlib
import json
import os
import re
import threading
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from src.utils.exceptions import ConfigError, MalformedResponse
from src.utils.logger_util import setup_logger

logger = setup_logger(__name__)


@runtime_checkable
class EmbeddingProvider(Protocol):
    """
    埋め込みプロバイダのインターフェース

    同じテキストには同じベクトルを返し、全ベクトルの次元は dimension で一定です。
    """

    @property
    def dimension(self) -> int: ...

    def embed(self, text: str) -> List[float]: ...


class SentenceTransformerEmbedder:
    """
    SentenceTransformerによる埋め込み

    Attributes:
        model: SentenceTransformerモデル（初回の embed() で読み込み）
    """

    def __init__(self, model_name: str = "sentence-transformers/all-MiniLM-L6-v2", model_dir: str = "./models", device: Optional[str] = None):
        """
        Args:
            model_name: 使用するモデル名
            model_dir: モデルを保存するディレクトリ
            device: 使用するデバイス（Noneの場合は自動選択）
        """
        self.model_name = model_name
        self.model_dir = model_dir
        self.device = device
        self.model = None
        self._cache: Dict[str, List[float]] = {}
        self._lock = threading.Lock()

    def _load_model(self):
        if self.model is not None:
            return self.model
        # sentence-transformers と torch は重いので必要になるまで読み込まない
        import torch
        from sentence_transformers import SentenceTransformer

        if self.device is None:
            self.device = "cuda" if torch.cuda.is_available() else "cpu"
        logger.info(f"PyTorchデバイス: {self.device}")

        os.makedirs(self.model_dir, exist_ok=True)
        model_local_path = os.path.join(self.model_dir, os.path.basename(self.model_name))
        try:
            if os.path.exists(model_local_path):
                logger.info(f"ローカルからモデル '{model_local_path}' を読み込んでいます...")
                self.model = SentenceTransformer(model_local_path, device=self.device)
            else:
                logger.info(f"オンラインからモデル '{self.model_name}' を読み込んでいます...")
                self.model = SentenceTransformer(self.model_name, device=self.device)
                self.model.save(model_local_path)
                logger.info(f"モデルを '{model_local_path}' に保存しました")
        except Exception as e:
            logger.error(f"モデル '{self.model_name}' の読み込みに失敗しました: {str(e)}")
            raise
        return self.model

    @property
    def dimension(self) -> int:
        return int(self._load_model().get_sentence_embedding_dimension())

    def embed(self, text: str) -> List[float]:
        with self._lock:
            if text not in self._cache:
                vector = self._load_model().encode(text, normalize_embeddings=False)
                self._cache[text] = [float(x) for x in vector.tolist()]
            return self._cache[text]


class HttpEmbedder:
    """OpenAI互換の埋め込みエンドポイントを利用する埋め込み"""

    def __init__(self, backend, model: str):
        """
        Args:
            backend: src.llm.llm_client.HttpChatBackend（接続設定とリトライを共有）
            model: 埋め込みモデル名
        """
        self.backend = backend
        self.model = model
        self._dimension: Optional[int] = None
        self._cache: Dict[str, List[float]] = {}
        self._lock = threading.Lock()

    @property
    def dimension(self) -> int:
        if self._dimension is None:
            self.embed("dimension check")
        return int(self._dimension)

    def embed(self, text: str) -> List[float]:
        with self._lock:
            if text in self._cache:
                return self._cache[text]
        body = self.backend.post_json("/v1/embeddings", {"model": self.model, "input": [text]})
        try:
            vector = [float(x) for x in body["data"][0]["embedding"]]
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise MalformedResponse(f"埋め込み応答の形式が不正です: {e}") from e
        with self._lock:
            if self._dimension is None:
                self._dimension = len(vector)
            elif len(vector) != self._dimension:
                raise MalformedResponse(f"埋め込みの次元が一定ではありません: {len(vector)} != {self._dimension}")
            self._cache[text] = vector
        return vector


_TOKEN = re.compile(r"[^\W_]+")


class HashEmbedder:
    """
    トークンのハッシュを固定次元に畳み込む決定的な埋め込み（テスト・オフライン実行用）

    語彙を共有するテキスト同士は正の類似度を持ちます。
    """

    def __init__(self, dimension: int = 64):
        if dimension <= 0:
            raise ConfigError("埋め込み次元は正の整数である必要があります")
        self._dimension = int(dimension)
        self.calls = 0

    @property
    def dimension(self) -> int:
        return self._dimension

    def embed(self, text: str) -> List[float]:
        self.calls += 1
        vector = np.zeros(self._dimension, dtype=np.float64)
        for token in _TOKEN.findall((text or "").lower()):
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            index = int.from_bytes(digest[:4], "big") % self._dimension
            sign = 1.0 if digest[4] & 1 else -1.0
            vector[index] += sign
        return vector.tolist()


class CachedEmbedder:
    """
    別のプロバイダを包み、結果を内容ハッシュをキーにJSONファイルへ保存する埋め込み
    """

    def __init__(self, inner: EmbeddingProvider, cache_file: str, namespace: str = ""):
        self.inner = inner
        self.cache_file = Path(cache_file)
        self.namespace = namespace
        self._lock = threading.Lock()
        self._cache: Dict[str, List[float]] = {}
        if self.cache_file.exists():
            with open(self.cache_file, "r", encoding="utf-8") as f:
                self._cache = json.load(f)
            logger.info(f"埋め込みキャッシュを読み込みました: {self.cache_file}（{len(self._cache)} 件）")

    def _key(self, text: str) -> str:
        return hashlib.sha256(f"{self.namespace}\x00{text}".encode("utf-8")).hexdigest()

    @property
    def dimension(self) -> int:
        return self.inner.dimension

    def embed(self, text: str) -> List[float]:
        key = self._key(text)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        vector = [float(x) for x in self.inner.embed(text)]
        with self._lock:
            self._cache[key] = vector
        return vector

    def flush(self) -> None:
        """キャッシュをファイルに書き出す"""
        with self._lock:
            self.cache_file.parent.mkdir(parents=True, exist_ok=True)
            with open(self.cache_file, "w", encoding="utf-8") as f:
                json.dump(self._cache, f, sort_keys=True)
        logger.debug(f"埋め込みキャッシュを保存しました: {self.cache_file}")


def create_embedder(embedding_config: Dict[str, Any], backend=None) -> EmbeddingProvider:
    """
    設定から埋め込みプロバイダを作成します。

    Args:
        embedding_config: ConfigManager.get_embedding_config() の値
        backend: "http" の場合に使う HttpChatBackend

    Returns:
        EmbeddingProvider: 作成したプロバイダ
    """
    kind = embedding_config.get("backend", "hash")
    if kind == "hash":
        provider: EmbeddingProvider = HashEmbedder(int(embedding_config.get("dimension", 64)))
    elif kind == "sentence-transformers":
        provider = SentenceTransformerEmbedder(
            model_name=embedding_config.get("model_name"),
            model_dir=embedding_config.get("cache_dir", "./models"),
        )
    elif kind == "http":
        if backend is None:
            raise ConfigError("埋め込みバックエンド 'http' にはHTTPバックエンドが必要です")
        provider = HttpEmbedder(backend, embedding_config.get("model_name"))
    else:
        raise ConfigError(f"未知の埋め込みバックエンドです: {kind}")

    cache_file = embedding_config.get("cache_file")
    if cache_file:
        provider = CachedEmbedder(provider, cache_file, namespace=f"{kind}:{embedding_config.get('model_name', '')}")
    logger.info(f"埋め込みプロバイダを作成しました: {kind}")
    return provider


def cosine(a: Sequence[float], b: Sequence[float]) -> Optional[float]:
    """コサイン類似度。どちらかがゼロベクトルなら None"""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ValueError(f"ベクトルの次元が一致しません: {va.shape} != {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        return None
    return float(np.dot(va, vb) / (na * nb))
