#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
CWEコーパス取り込みモジュール

MITREが配布するCWEコーパス（XML版・CSV版）を解析してCweRecordに変換し、
知識グラフにCweノードと ChildOf エッジとして読み込みます。
"""

import csv
import io
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO, Dict, List, Optional, Sequence, Tuple, Union

from src.kg.knowledge_graph import (
    EdgeKind,
    GraphNode,
    KnowledgeGraph,
    NodeKind,
    Provenance,
)
from src.utils.exceptions import DecodeError, SchemaError
from src.utils.logger_util import setup_logger

logger = setup_logger(__name__)

CSV_COLUMNS = ["CWE-ID", "Name", "Abstraction", "Description", "Extended Description", "Related Weaknesses"]

# 簡易フィクスチャ形式 "ChildOf:CWE-20" と MITRE形式 "NATURE:ChildOf:CWE ID:20" の両方に対応
_CSV_CHILD_OF = re.compile(r"ChildOf:CWE(?:-|\s*ID:)\s*(\d+)", re.IGNORECASE)
_CWE_NUMBER = re.compile(r"^(?:CWE[-\s]?)?0*(\d+)$", re.IGNORECASE)


class CorpusFormat(str, Enum):
    XML = "xml"
    CSV = "csv"


@dataclass
class CweRecord:
    """
    CWEコーパスの1エントリ

    Attributes:
        id: 正規形のCWE ID（"CWE-79"）
        name: 名称
        description: Description と Extended Description を連結した説明文
        abstraction: コーパス上の抽象度ラベル（Base, Variant, Class, Pillar など）
        parents: 親CWE IDの列（ChildOf関係）
    """
    id: str
    name: str
    description: str
    abstraction: str = ""
    parents: List[str] = field(default_factory=list)


@dataclass
class IngestReport:
    parsed: int = 0
    dropped_empty_description: int = 0
    dropped_deprecated: int = 0
    dangling_parent_links: int = 0
    skipped_parent_links: int = 0
    version: str = ""

    def to_dict(self) -> Dict[str, Union[int, str]]:
        return {
            "parsed": self.parsed,
            "dropped_empty_description": self.dropped_empty_description,
            "dropped_deprecated": self.dropped_deprecated,
            "dangling_parent_links": self.dangling_parent_links,
            "skipped_parent_links": self.skipped_parent_links,
            "version": self.version,
        }


def canonical_cwe_id(raw: str) -> Optional[str]:
    """"79" / "CWE-79" / "cwe 079" を "CWE-79" に正規化。数値でなければ None"""
    match = _CWE_NUMBER.match((raw or "").strip())
    if not match:
        return None
    return f"CWE-{int(match.group(1))}"


def _merge_description(description: str, extended: str) -> str:
    description = " ".join((description or "").split())
    extended = " ".join((extended or "").split())
    if description and extended:
        return f"{description} {extended}"
    return description or extended


def _read_bytes(source: Union[bytes, BinaryIO]) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    return source.read()


def parse_cwe_corpus(
    source: Union[bytes, BinaryIO],
    fmt: Union[CorpusFormat, str] = CorpusFormat.XML,
) -> Tuple[List[CweRecord], IngestReport]:
    """
    CWEコーパスを解析します。

    Args:
        source: コーパスのバイト列またはバイナリストリーム
        fmt: "xml" または "csv"

    Returns:
        Tuple[List[CweRecord], IngestReport]: CWE ID昇順のレコードと集計レポート

    Raises:
        DecodeError: UTF-8としてデコードできない
        SchemaError: 必須の列・要素が欠落している
    """
    fmt = CorpusFormat(fmt)
    payload = _read_bytes(source)
    try:
        text = payload.decode("utf-8-sig")
    except UnicodeDecodeError as e:
        raise DecodeError(f"CWEコーパスをUTF-8としてデコードできません: {e}") from e

    report = IngestReport()
    if fmt == CorpusFormat.CSV:
        records = _parse_csv(text, report)
    else:
        records = _parse_xml(text, report)

    # 親IDはコーパス内に存在するものだけを残す
    known = {record.id for record in records}
    for record in records:
        kept = [parent for parent in record.parents if parent in known]
        report.dangling_parent_links += len(record.parents) - len(kept)
        record.parents = kept

    records.sort(key=lambda r: int(r.id.split("-")[1]))
    report.parsed = len(records)
    logger.info(
        f"CWEコーパスを解析しました: {report.parsed} 件"
        f"（説明なし {report.dropped_empty_description}、非推奨 {report.dropped_deprecated}、"
        f"未解決の親リンク {report.dangling_parent_links}）"
    )
    if report.dangling_parent_links:
        logger.warning(f"コーパス外を参照する親リンクを {report.dangling_parent_links} 件破棄しました")
    return records, report


def _parse_csv(text: str, report: IngestReport) -> List[CweRecord]:
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [column for column in CSV_COLUMNS if column not in header]
    if missing:
        raise SchemaError(f"CSVに必須の列がありません: {', '.join(missing)}")

    records: List[CweRecord] = []
    for row in reader:
        cwe_id = canonical_cwe_id(row["CWE-ID"])
        if cwe_id is None:
            raise SchemaError(f"CWE-ID列の値が不正です: {row['CWE-ID']!r}")
        name = (row["Name"] or "").strip()
        status = (row.get("Status") or "").strip().lower()
        if status == "deprecated" or name.upper().startswith("DEPRECATED"):
            report.dropped_deprecated += 1
            continue
        description = _merge_description(row["Description"], row["Extended Description"])
        if not description:
            report.dropped_empty_description += 1
            logger.debug(f"{cwe_id} は説明文が空のため除外します")
            continue
        parents = _unique(f"CWE-{int(n)}" for n in _CSV_CHILD_OF.findall(row["Related Weaknesses"] or ""))
        records.append(CweRecord(
            id=cwe_id,
            name=name,
            description=description,
            abstraction=(row["Abstraction"] or "").strip(),
            parents=parents,
        ))
    return records


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _element_text(element: Optional[ET.Element]) -> str:
    """子要素（xhtml段落など）を含めたテキスト全体"""
    if element is None:
        return ""
    return " ".join("".join(element.itertext()).split())


def _parse_xml(text: str, report: IngestReport) -> List[CweRecord]:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise SchemaError(f"CWE XMLを解析できません: {e}") from e
    report.version = root.get("Version", "")

    weaknesses_container = next((child for child in root if _local(child.tag) == "Weaknesses"), None)
    if weaknesses_container is None:
        raise SchemaError("CWE XMLに Weaknesses 要素がありません")

    records: List[CweRecord] = []
    for weakness in weaknesses_container:
        if _local(weakness.tag) != "Weakness":
            continue
        raw_id = weakness.get("ID")
        name = weakness.get("Name")
        if raw_id is None or name is None:
            raise SchemaError("Weakness 要素に ID または Name 属性がありません")
        cwe_id = canonical_cwe_id(raw_id)
        if cwe_id is None:
            raise SchemaError(f"Weakness の ID が不正です: {raw_id!r}")
        if (weakness.get("Status") or "").lower() == "deprecated" or name.upper().startswith("DEPRECATED"):
            report.dropped_deprecated += 1
            continue

        children = {_local(child.tag): child for child in weakness}
        description = _merge_description(
            _element_text(children.get("Description")),
            _element_text(children.get("Extended_Description")),
        )
        if not description:
            report.dropped_empty_description += 1
            logger.debug(f"{cwe_id} は説明文が空のため除外します")
            continue

        parents: List[str] = []
        related = children.get("Related_Weaknesses")
        if related is not None:
            for relation in related:
                if _local(relation.tag) != "Related_Weakness" or relation.get("Nature") != "ChildOf":
                    continue
                parent = canonical_cwe_id(relation.get("CWE_ID", ""))
                if parent:
                    parents.append(parent)
        records.append(CweRecord(
            id=cwe_id,
            name=name.strip(),
            description=description,
            abstraction=weakness.get("Abstraction", ""),
            parents=_unique(parents),
        ))
    return records


def _unique(items) -> List[str]:
    seen: Dict[str, None] = {}
    for item in items:
        seen.setdefault(item, None)
    return list(seen)


def records_to_csv(records: Sequence[CweRecord]) -> bytes:
    """
    CweRecordをフィクスチャ形式のCSVに書き出します。
    parse_cwe_corpus(..., "csv") で読み戻すと {id, name, description, abstraction, parents} が一致します。
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for record in records:
        writer.writerow([
            record.id,
            record.name,
            record.abstraction,
            record.description,
            "",
            ";".join(f"ChildOf:{parent}" for parent in record.parents),
        ])
    return buffer.getvalue().encode("utf-8")


def load_into_graph(
    records: Sequence[CweRecord],
    graph: KnowledgeGraph,
    report: Optional[IngestReport] = None,
) -> int:
    """
    CweRecordを知識グラフに読み込みます。

    Args:
        records: 読み込むレコード
        graph: 読み込み先のグラフ（凍結されていないこと）
        report: 指定された場合、解決できなかった親リンク数を skipped_parent_links に加算

    Returns:
        int: 新たに追加されたノード数（同じレコードの再読み込みでは0）

    Raises:
        FrozenGraph: グラフが凍結済み
    """
    added = 0
    for record in records:
        if not graph.has_node(record.id):
            added += 1
        graph.upsert_node(GraphNode(
            id=record.id,
            kind=NodeKind.CWE,
            name=record.name,
            description=record.description,
            attributes={"abstraction": record.abstraction},
        ))

    skipped = 0
    for record in records:
        for parent in record.parents:
            if not graph.has_node(parent):
                skipped += 1
                logger.warning(f"{record.id} の親 {parent} がグラフに存在しないためエッジを作成しません")
                continue
            graph.link(record.id, EdgeKind.CHILD_OF, parent, weight=1.0, provenance=Provenance.CURATED)

    if report is not None:
        report.skipped_parent_links += skipped
    logger.info(f"CWEノードを {len(records)} 件読み込みました（新規 {added}、スキップした親リンク {skipped}）")
    return added
