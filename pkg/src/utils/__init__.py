#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
ユーティリティモジュールパッケージ

ロガー、例外、埋め込み、実行マニフェストなどの共通ユーティリティ機能を提供します。
"""

from .logger_util import setup_logger
from .embedding_generator import EmbeddingProvider, HashEmbedder, create_embedder, cosine
from .manifest import RunManifest, file_sha256
