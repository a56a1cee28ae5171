#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
コードエンティティ抽出モジュール

関数ソースを字句的に走査し、API呼び出し・識別子・ライブラリ・パスリテラルを抽出します。
言語ごとの構文解析は行いません。
"""

import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from src.config.config_manager import DEFAULTS_DIR
from src.utils.exceptions import ConfigError, ValidationError
from src.utils.logger_util import setup_logger

logger = setup_logger(__name__)

DEFAULT_STOPLIST_PATH = DEFAULTS_DIR / "stoplist.txt"
DEFAULT_LIBRARIES_PATH = DEFAULTS_DIR / "known_libraries.txt"


class EntityKind(str, Enum):
    API_CALL = "ApiCall"
    IDENTIFIER = "Identifier"
    LIBRARY = "Library"
    PATH_LITERAL = "PathLiteral"
    OTHER = "Other"


@dataclass(frozen=True)
class CodeEntity:
    """
    コードから抽出したエンティティ

    Attributes:
        name: エンティティ名（大文字小文字を区別）
        kind: 種別
        occurrences: 出現回数（1以上）
    """
    name: str
    kind: EntityKind
    occurrences: int = 1

    def __post_init__(self):
        if not self.name:
            raise ValidationError("エンティティ名が空です")
        if self.occurrences < 1:
            raise ValidationError(f"出現回数は1以上である必要があります: {self.occurrences}")

    def to_dict(self) -> Dict[str, object]:
        return {"name": self.name, "kind": self.kind.value, "occurrences": self.occurrences}


def load_token_list(path: Optional[str]) -> FrozenSet[str]:
    """1行1トークンのリストファイルを読み込む（空行と # 始まりの行は無視）"""
    if path is None:
        return frozenset()
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ConfigError(f"トークンリスト '{path}' を読み込めません: {e}") from e
    return frozenset(line.strip() for line in lines if line.strip() and not line.strip().startswith("#"))


_COMMENT = re.compile(r"//[^\n]*|/\*.*?\*/", re.DOTALL)
_STRING = re.compile(r'"((?:[^"\\\n]|\\.)*)"|\'((?:[^\'\\\n]|\\.)*)\'')
_INCLUDE = re.compile(r"^\s*#\s*include\s*[<\"]([^>\"]+)[>\"]", re.MULTILINE)
_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_CALL_SUFFIX = re.compile(r"\s*\(")


class EntityExtractor:
    """
    字句ベースのエンティティ抽出器

    判定規則:
    - 直後に "(" が続く識別子 → ApiCall
    - "/" または "\\" を含む文字列リテラル → PathLiteral
    - 既知ライブラリ一覧に含まれるトークン、または #include のヘッダ名 → Library
    - 残りの識別子 → Identifier
    - ストップリストの言語キーワードは除外
    """

    def __init__(self, stoplist: Iterable[str] = (), known_libraries: Iterable[str] = ()):
        self.stoplist = frozenset(stoplist)
        self.known_libraries = frozenset(known_libraries)

    @classmethod
    def from_files(cls, stoplist_path: Optional[str] = None, libraries_path: Optional[str] = None) -> "EntityExtractor":
        return cls(
            load_token_list(str(stoplist_path or DEFAULT_STOPLIST_PATH)),
            load_token_list(str(libraries_path or DEFAULT_LIBRARIES_PATH)),
        )

    def _library_of_header(self, header: str) -> Optional[str]:
        # "openssl/ssl.h" → "openssl"、"stdio.h" → "stdio"
        head = re.split(r"[/\\]", header.strip())[0]
        stem = head.split(".")[0]
        return stem if stem in self.known_libraries else None

    def extract(self, code: str) -> List[CodeEntity]:
        """
        コードからエンティティを抽出します。

        Returns:
            List[CodeEntity]: (出現回数降順, 名前昇順) に並んだエンティティ
        """
        if not code:
            return []
        counts: Counter = Counter()

        text = _COMMENT.sub(" ", code)
        for match in _INCLUDE.finditer(text):
            library = self._library_of_header(match.group(1))
            if library:
                counts[(library, EntityKind.LIBRARY)] += 1
        text = _INCLUDE.sub(" ", text)

        def _strip_string(match: re.Match) -> str:
            literal = match.group(1) if match.group(1) is not None else match.group(2)
            if literal and ("/" in literal or "\\" in literal):
                counts[(literal, EntityKind.PATH_LITERAL)] += 1
            return " "

        text = _STRING.sub(_strip_string, text)

        for match in _IDENTIFIER.finditer(text):
            name = match.group(0)
            if name in self.stoplist:
                continue
            if name in self.known_libraries:
                kind = EntityKind.LIBRARY
            elif _CALL_SUFFIX.match(text, match.end()):
                kind = EntityKind.API_CALL
            else:
                kind = EntityKind.IDENTIFIER
            counts[(name, kind)] += 1

        entities = [CodeEntity(name=name, kind=kind, occurrences=n) for (name, kind), n in counts.items()]
        entities.sort(key=lambda e: (-e.occurrences, e.name, e.kind.value))
        return entities


_default_extractor: Optional[EntityExtractor] = None


def extract_entities(
    code: str,
    stoplist: Optional[Iterable[str]] = None,
    known_libraries: Optional[Iterable[str]] = None,
) -> List[CodeEntity]:
    """
    関数ソースからエンティティを抽出します。

    Args:
        code: 関数ソース
        stoplist: 除外する言語キーワード（Noneなら同梱のC/C++用）
        known_libraries: 既知ライブラリ名（Noneなら同梱の一覧）
    """
    global _default_extractor
    if stoplist is None and known_libraries is None:
        if _default_extractor is None:
            _default_extractor = EntityExtractor.from_files()
        return _default_extractor.extract(code)
    extractor = EntityExtractor(
        stoplist if stoplist is not None else load_token_list(str(DEFAULT_STOPLIST_PATH)),
        known_libraries if known_libraries is not None else load_token_list(str(DEFAULT_LIBRARIES_PATH)),
    )
    return extractor.extract(code)


_RATIONALE_KINDS: Dict[str, EntityKind] = {
    "api": EntityKind.API_CALL,
    "api-call": EntityKind.API_CALL,
    "apicall": EntityKind.API_CALL,
    "call": EntityKind.API_CALL,
    "function": EntityKind.API_CALL,
    "identifier": EntityKind.IDENTIFIER,
    "variable": EntityKind.IDENTIFIER,
    "parameter": EntityKind.IDENTIFIER,
    "field": EntityKind.IDENTIFIER,
    "library": EntityKind.LIBRARY,
    "header": EntityKind.LIBRARY,
    "path": EntityKind.PATH_LITERAL,
    "file": EntityKind.PATH_LITERAL,
    "file-path": EntityKind.PATH_LITERAL,
    "pathliteral": EntityKind.PATH_LITERAL,
}


def rationale_entity_kind(kind_text: str) -> EntityKind:
    """根拠文の ENTITIES 節に書かれた種別表記を EntityKind に対応付ける"""
    normalized = re.sub(r"[\s_]+", "-", (kind_text or "").strip().lower())
    return _RATIONALE_KINDS.get(normalized, _RATIONALE_KINDS.get(normalized.replace("-", ""), EntityKind.OTHER))


def entities_from_rationale(entities: Sequence[Tuple[str, str]]) -> List[CodeEntity]:
    """
    根拠文の ENTITIES 節からエンティティ列を作ります（LLM抽出モード）。
    同名・同種別のエンティティは出現回数として集約します。
    """
    counts: Counter = Counter()
    for name, kind_text in entities:
        name = name.strip()
        if name:
            counts[(name, rationale_entity_kind(kind_text))] += 1
    result = [CodeEntity(name=name, kind=kind, occurrences=n) for (name, kind), n in counts.items()]
    result.sort(key=lambda e: (-e.occurrences, e.name, e.kind.value))
    return result
