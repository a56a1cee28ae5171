#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
ロギングユーティリティモジュール

VulReaDツールキットの各モジュールが使う共通のロガーを提供します。
.envファイルの設定に基づいてレベルと出力先を決め、モジュール単位でデバッグ出力を切り替えられます。

標準出力はCLIの成果物（JSON、表、KGコンテキスト）に使うため、ログと警告はすべて標準エラーに出します。
"""

import os
import sys
import logging
from pathlib import Path
from typing import List

# .envファイルの読み込み
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    print("python-dotenvがインストールされていません。環境変数は直接OSから読み込まれます。", file=sys.stderr)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DEFAULT_LOG_FILE = './logs/vulread.log'


def _debug_modules() -> List[str]:
    """DEBUG_MODULES（カンマ区切り、空白可）を短縮モジュール名のリストにする"""
    return [name.strip() for name in os.getenv('DEBUG_MODULES', '').split(',') if name.strip()]


def resolve_level(module_name: str) -> int:
    """
    モジュールに適用するログレベルを決めます。

    DEBUG が真、または短縮モジュール名（`src.kg.retrieval` なら `retrieval`）が
    DEBUG_MODULES に含まれていれば DEBUG、それ以外は LOG_LEVEL（不正なら INFO）です。
    """
    if os.getenv('DEBUG', 'False').lower() in ('true', '1', 't'):
        return logging.DEBUG
    if module_name.split('.')[-1] in _debug_modules():
        return logging.DEBUG

    log_level_str = os.getenv('LOG_LEVEL', 'INFO')
    level = logging.getLevelName(log_level_str.upper())
    if not isinstance(level, int):
        print(f"警告: 無効なログレベル '{log_level_str}'。INFOを使用します。", file=sys.stderr)
        return logging.INFO
    return level


def setup_logger(module_name: str) -> logging.Logger:
    """
    モジュール用のロガーを設定します。

    Args:
        module_name (str): ロガーを設定するモジュール名

    Returns:
        logging.Logger: 設定されたロガーオブジェクト
    """
    logger = logging.getLogger(module_name)

    # すでに設定済みの場合は、そのまま返す
    if logger.handlers:
        return logger

    logger.setLevel(resolve_level(module_name))
    logger.propagate = False

    formatter = logging.Formatter(LOG_FORMAT)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    # 空文字列ならファイル出力なし
    log_file = os.getenv('LOG_FILE', DEFAULT_LOG_FILE)
    if log_file:
        try:
            Path(log_file).parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(log_file, encoding='utf-8')
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)
        except OSError as e:
            print(f"警告: ログファイル '{log_file}' を設定できませんでした: {e}", file=sys.stderr)

    return logger
