#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
関数サンプルの入出力モジュール

FunctionSample の定義、JSONLファイルの読み書き、
公開データセット（DiverseVul / PrimeVul / R2Vul）の正規化読み込みを提供します。
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, Iterator, List, Optional, Sequence, Tuple

from src.kg.cwe_ingest import canonical_cwe_id
from src.utils.exceptions import SchemaError, ValidationError
from src.utils.logger_util import setup_logger

logger = setup_logger(__name__)

SAMPLE_FIELDS = ("id", "code", "label", "cwe_ids", "source", "language")
PUBLIC_SOURCES = ("diversevul", "primevul", "r2vul")


def cwe_sort_key(cwe_id: str) -> int:
    return int(cwe_id.split("-")[1])


@dataclass(frozen=True)
class FunctionSample:
    """
    関数単位のサンプル

    Attributes:
        id: サンプルID
        code: 関数ソース
        label: 1=脆弱, 0=安全
        cwe_ids: 正規形のCWE ID集合（label=0なら空でもよい）
        source: データセット名
        language: 言語タグ
    """
    id: str
    code: str
    label: int
    cwe_ids: FrozenSet[str] = field(default_factory=frozenset)
    source: str = ""
    language: str = "c"

    def __post_init__(self):
        if not self.id:
            raise ValidationError("サンプルIDが空です")
        if not self.code:
            raise ValidationError(f"サンプル {self.id} のコードが空です")
        if self.label not in (0, 1):
            raise ValidationError(f"サンプル {self.id} のラベルは0か1である必要があります: {self.label!r}")
        object.__setattr__(self, "cwe_ids", frozenset(self.cwe_ids))

    @property
    def has_cwe(self) -> bool:
        return bool(self.cwe_ids)

    @property
    def is_consistent(self) -> bool:
        """label=1 なら CWE ID を1つ以上持つ"""
        return self.label == 0 or self.has_cwe

    @property
    def primary_cwe(self) -> str:
        """番号が最小のCWE ID（なければ空文字）"""
        return min(self.cwe_ids, key=cwe_sort_key) if self.cwe_ids else ""

    def sorted_cwe_ids(self) -> List[str]:
        return sorted(self.cwe_ids, key=cwe_sort_key)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "code": self.code,
            "label": self.label,
            "cwe_ids": self.sorted_cwe_ids(),
            "source": self.source,
            "language": self.language,
        }

    @classmethod
    def from_dict(cls, record: Dict[str, Any]) -> "FunctionSample":
        """
        Raises:
            SchemaError: 必須フィールドがない、またはCWE IDが不正
        """
        missing = [name for name in ("id", "code", "label") if name not in record]
        if missing:
            raise SchemaError(f"サンプルに必須フィールドがありません: {', '.join(missing)}")
        cwe_ids = set()
        for raw in record.get("cwe_ids") or []:
            cwe_id = canonical_cwe_id(str(raw))
            if cwe_id is None:
                raise SchemaError(f"サンプル {record['id']} のCWE IDが不正です: {raw!r}")
            cwe_ids.add(cwe_id)
        try:
            label = int(record["label"])
        except (TypeError, ValueError) as e:
            raise SchemaError(f"サンプル {record['id']} のラベルが不正です: {record['label']!r}") from e
        return cls(
            id=str(record["id"]),
            code=record["code"],
            label=label,
            cwe_ids=frozenset(cwe_ids),
            source=record.get("source", ""),
            language=record.get("language", "c"),
        )


def _iter_json_lines(path: str) -> Iterator[Tuple[int, Dict[str, Any]]]:
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield line_number, json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"{path}:{line_number} をJSONとして解析できません: {e}") from e


def read_samples(path: str, strict: bool = True) -> List[FunctionSample]:
    """
    JSONL形式のサンプルファイルを読み込みます。

    Args:
        path: ファイルパス
        strict: Trueなら label=1 かつCWEなしのサンプルでエラー、Falseなら読み込んで警告のみ

    Raises:
        SchemaError: 形式が不正
    """
    samples: List[FunctionSample] = []
    seen = set()
    for line_number, record in _iter_json_lines(path):
        try:
            sample = FunctionSample.from_dict(record)
        except ValidationError as e:
            raise SchemaError(f"{path}:{line_number}: {e}") from e
        if sample.id in seen:
            raise SchemaError(f"{path}:{line_number}: サンプルID {sample.id} が重複しています")
        seen.add(sample.id)
        if not sample.is_consistent:
            if strict:
                raise SchemaError(f"{path}:{line_number}: 脆弱サンプル {sample.id} にCWE IDがありません")
            logger.warning(f"脆弱サンプル {sample.id} にCWE IDがありません")
        samples.append(sample)
    logger.info(f"サンプルを {len(samples)} 件読み込みました: {path}")
    return samples


def write_jsonl(path: str, records: Iterable[Dict[str, Any]]) -> int:
    """レコードを1行1JSONで書き出す（キー順固定・改行終端）"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
            count += 1
    return count


def read_jsonl(path: str) -> List[Dict[str, Any]]:
    return [record for _, record in _iter_json_lines(path)]


def write_samples(path: str, samples: Sequence[FunctionSample]) -> int:
    count = write_jsonl(path, (sample.to_dict() for sample in samples))
    logger.info(f"サンプルを {count} 件書き出しました: {path}")
    return count


# ----------------------------------------------------------------------
# 公開データセット
# ----------------------------------------------------------------------
@dataclass
class LoadReport:
    loaded: int = 0
    dropped_no_cwe: int = 0
    dropped_empty_code: int = 0
    invalid_cwe_tokens: int = 0

    def to_dict(self) -> Dict[str, int]:
        return {
            "loaded": self.loaded,
            "dropped_no_cwe": self.dropped_no_cwe,
            "dropped_empty_code": self.dropped_empty_code,
            "invalid_cwe_tokens": self.invalid_cwe_tokens,
        }


def _first(record: Dict[str, Any], *names: str) -> Any:
    for name in names:
        if name in record and record[name] is not None:
            return record[name]
    return None


def _parse_label(raw: Any, path: str, index: int) -> int:
    """0/1 の数値・真偽値・数字文字列だけをラベルとして受け付ける"""
    value = raw.strip() if isinstance(raw, str) else raw
    if isinstance(value, bool):
        return int(value)
    if value in (0, 1, "0", "1"):
        return int(value)
    raise SchemaError(f"{path} のレコード {index} のラベルが不正です（0 か 1）: {raw!r}")


def _cwe_tokens(raw: Any) -> List[str]:
    if raw is None:
        return []
    if isinstance(raw, str):
        return [token for token in raw.replace(";", ",").split(",") if token.strip()]
    if isinstance(raw, (list, tuple)):
        return [str(token) for token in raw]
    return [str(raw)]


def _load_records(path: str) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        head = f.read(1)
        while head and head.isspace():
            head = f.read(1)
        f.seek(0)
        if head == "[":
            data = json.load(f)
            if not isinstance(data, list):
                raise SchemaError(f"{path} はレコードの配列ではありません")
            return data
    return read_jsonl(path)


def load_public_dataset(path: str, source: str, language: str = "c") -> Tuple[List[FunctionSample], LoadReport]:
    """
    公開データセットを FunctionSample に正規化して読み込みます。

    - DiverseVul: func, target, cwe(配列), project, commit_id
    - PrimeVul: idx, func, target, cwe(配列)
    - R2Vul: function/func, label/target, cwe/cwe_id

    CWE ID は正規形に変換し、CWE ID を持たない脆弱サンプルは除外して件数を数えます。

    Args:
        path: JSONL またはJSON配列のファイル
        source: "diversevul" / "primevul" / "r2vul"
        language: 言語タグ

    Returns:
        Tuple[List[FunctionSample], LoadReport]: サンプルと集計
    """
    source = source.lower()
    if source not in PUBLIC_SOURCES:
        raise SchemaError(f"未知のデータセットです: {source}（{', '.join(PUBLIC_SOURCES)}）")

    report = LoadReport()
    samples: List[FunctionSample] = []
    for index, record in enumerate(_load_records(path)):
        if not isinstance(record, dict):
            raise SchemaError(f"{path} のレコード {index} がオブジェクトではありません")
        code = _first(record, "func", "function", "code") or ""
        if not isinstance(code, str):
            raise SchemaError(f"{path} のレコード {index} のコードが文字列ではありません")
        label_raw = _first(record, "target", "label")
        if label_raw is None:
            raise SchemaError(f"{path} のレコード {index} にラベルがありません")
        label = _parse_label(label_raw, path, index)
        raw_id = _first(record, "idx", "id")
        sample_id = f"{source}-{raw_id if raw_id is not None else index}"

        cwe_ids = set()
        for token in _cwe_tokens(_first(record, "cwe", "cwe_id", "cwe_ids")):
            cwe_id = canonical_cwe_id(token)
            if cwe_id is None:
                report.invalid_cwe_tokens += 1
                continue
            cwe_ids.add(cwe_id)
        if not code.strip():
            report.dropped_empty_code += 1
            continue
        if label == 1 and not cwe_ids:
            report.dropped_no_cwe += 1
            continue
        samples.append(FunctionSample(
            id=sample_id,
            code=code,
            label=label,
            cwe_ids=frozenset(cwe_ids) if label == 1 else frozenset(),
            source=source,
            language=language,
        ))
    report.loaded = len(samples)
    logger.info(
        f"{source} を読み込みました: {report.loaded} 件（CWEなしの脆弱サンプル除外 {report.dropped_no_cwe}、"
        f"空コード除外 {report.dropped_empty_code}）"
    )
    return samples, report
