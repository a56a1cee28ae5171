#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
実行マニフェストモジュール

CLIの各実行について、ツールバージョン、サブコマンド、設定ハッシュ、シード、
入力ファイルごとの SHA-256 を manifest.json に記録します。
同じ入力・設定なら同じマニフェストになるよう、時刻は記録しません。
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from src.utils.exceptions import ConfigError
from src.utils.logger_util import setup_logger

logger = setup_logger(__name__)

MANIFEST_FILE = "manifest.json"
TOOL_VERSION = "0.1.0"

_CHUNK = 1 << 16


def file_sha256(path: str) -> str:
    """
    ファイル内容のSHA-256

    Raises:
        ConfigError: ファイルが読めない
    """
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(_CHUNK), b""):
                digest.update(chunk)
    except OSError as e:
        raise ConfigError(f"入力ファイル '{path}' を読み込めません: {e}") from e
    return digest.hexdigest()


@dataclass
class RunManifest:
    """
    1回の実行の記録

    Attributes:
        subcommand: "kg build" のようなサブコマンド名
        config_hash: 実効設定のSHA-256
        seed: 乱数シード
        inputs: 入力パス → SHA-256
        outputs: 書き出したファイルのパス
        tool_version: ツールのバージョン
        status: "ok" または "failed"
    """
    subcommand: str
    config_hash: str
    seed: int
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    tool_version: str = TOOL_VERSION
    status: str = "ok"

    def add_inputs(self, paths: Iterable[Optional[str]]) -> None:
        for path in paths:
            if path:
                self.inputs[str(path)] = file_sha256(str(path))

    def add_output(self, path: Optional[str]) -> None:
        if path and str(path) not in self.outputs:
            self.outputs.append(str(path))

    def to_dict(self) -> Dict[str, object]:
        return {
            "tool_version": self.tool_version,
            "subcommand": self.subcommand,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "status": self.status,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": sorted(self.outputs),
        }

    def write(self, directory: str) -> Path:
        """directory/manifest.json に書き出してパスを返す"""
        target = Path(directory) / MANIFEST_FILE
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write("\n")
        logger.info(f"マニフェストを書き出しました: {target}")
        return target


def load_manifest(path: str) -> Dict[str, object]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
