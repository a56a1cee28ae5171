#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
抽象クラスマッピングモジュール

CWEを13の脆弱性抽象クラスに割り当てます。
まずキーワード照合で割り当て（複数クラス可）、一致がないCWEだけを
埋め込みのコサイン類似度が最大のクラス1つに割り当てます。
"""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

from src.config.config_manager import DEFAULTS_DIR
from src.kg.cwe_ingest import CweRecord
from src.kg.knowledge_graph import (
    EdgeKind,
    GraphNode,
    KnowledgeGraph,
    NodeKind,
    Provenance,
    class_node_id,
)
from src.utils.embedding_generator import EmbeddingProvider, cosine
from src.utils.exceptions import ConfigError, ValidationError, ZeroVector
from src.utils.logger_util import setup_logger

logger = setup_logger(__name__)

DEFAULT_CLASSES_PATH = DEFAULTS_DIR / "abstract_classes.json"
EXPECTED_DEFAULT_CLASS_COUNT = 13


@dataclass(frozen=True)
class AbstractClassDef:
    """
    抽象クラスの定義

    Attributes:
        id: クラスID（"MemoryManagement" など）
        name: 表示名
        description: 埋め込み照合に使う説明文
        keywords: 小文字のキーワード・フレーズ
    """
    id: str
    name: str
    description: str
    keywords: FrozenSet[str]

    def __post_init__(self):
        if not self.keywords:
            raise ConfigError(f"クラス {self.id} のキーワードが空です")


@dataclass
class CweAssignment:
    classes: List[str]
    method: str
    similarity: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        return {"classes": list(self.classes), "method": self.method, "similarity": self.similarity}


@dataclass
class MappingReport:
    keyword_assigned: int = 0
    embedding_assigned: int = 0
    per_cwe: Dict[str, CweAssignment] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {
            "keyword_assigned": self.keyword_assigned,
            "embedding_assigned": self.embedding_assigned,
            "per_cwe": {cwe_id: self.per_cwe[cwe_id].to_dict() for cwe_id in sorted(self.per_cwe)},
        }


def load_class_definitions(path: Optional[str] = None, expect_default_count: bool = False) -> List[AbstractClassDef]:
    """
    クラス定義ファイル（{id, name, description, keywords} の配列）を読み込みます。

    Args:
        path: 定義ファイルのパス（Noneなら同梱の13クラス）
        expect_default_count: Trueなら13クラスであることを検証

    Returns:
        List[AbstractClassDef]: ID昇順のクラス定義

    Raises:
        ConfigError: ファイルが読めない、または定義が不正
    """
    path = Path(path) if path else DEFAULT_CLASSES_PATH
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"クラス定義ファイル '{path}' を読み込めません: {e}") from e
    if not isinstance(raw, list):
        raise ConfigError("クラス定義ファイルは配列である必要があります")

    classes: List[AbstractClassDef] = []
    seen: Set[str] = set()
    for entry in raw:
        try:
            definition = AbstractClassDef(
                id=entry["id"],
                name=entry["name"],
                description=entry["description"],
                keywords=frozenset(k.strip().lower() for k in entry["keywords"] if k.strip()),
            )
        except (KeyError, TypeError, AttributeError) as e:
            raise ConfigError(f"クラス定義が不正です: {entry!r}") from e
        if definition.id in seen:
            raise ConfigError(f"クラスIDが重複しています: {definition.id}")
        seen.add(definition.id)
        classes.append(definition)

    if expect_default_count and len(classes) != EXPECTED_DEFAULT_CLASS_COUNT:
        raise ConfigError(f"既定の分類は {EXPECTED_DEFAULT_CLASS_COUNT} クラスです（読み込み: {len(classes)}）")
    classes.sort(key=lambda c: c.id)
    logger.info(f"抽象クラス定義を {len(classes)} 件読み込みました: {path}")
    return classes


def add_class_nodes(graph: KnowledgeGraph, classes: Sequence[AbstractClassDef]) -> int:
    """抽象クラスをAbstractClassノードとしてグラフに追加する"""
    for definition in classes:
        graph.upsert_node(GraphNode(
            id=class_node_id(definition.id),
            kind=NodeKind.ABSTRACT_CLASS,
            name=definition.name,
            description=definition.description,
            attributes={"class_id": definition.id, "keywords": ",".join(sorted(definition.keywords))},
        ))
    return len(classes)


def _keyword_pattern(keyword: str) -> Optional[re.Pattern]:
    # 単一トークンは単語境界、複数語のフレーズは部分文字列で照合
    if len(keyword.split()) > 1:
        return None
    return re.compile(rf"(?<![a-z0-9_]){re.escape(keyword)}(?![a-z0-9_])")


def keyword_assign(record: CweRecord, classes: Sequence[AbstractClassDef]) -> Set[str]:
    """
    説明文にキーワードを1つ以上含むクラスのIDをすべて返します。

    Args:
        record: CWEレコード
        classes: クラス定義

    Returns:
        Set[str]: 一致したクラスID（一致なしは空集合）
    """
    text = (record.description or "").lower()
    matched: Set[str] = set()
    for definition in classes:
        for keyword in definition.keywords:
            pattern = _keyword_pattern(keyword)
            if (pattern is None and keyword in text) or (pattern is not None and pattern.search(text)):
                matched.add(definition.id)
                break
    return matched


class ClassEmbeddingIndex:
    """クラス説明文の埋め込みを1回だけ計算して保持する"""

    def __init__(self, classes: Sequence[AbstractClassDef], embedder: EmbeddingProvider):
        self.embedder = embedder
        self.classes = sorted(classes, key=lambda c: c.id)
        self.vectors: Dict[str, List[float]] = {}
        dimension: Optional[int] = None
        for definition in self.classes:
            vector = list(embedder.embed(definition.description))
            if dimension is None:
                dimension = len(vector)
            elif len(vector) != dimension:
                raise ValidationError("埋め込みプロバイダの次元が一定ではありません")
            self.vectors[definition.id] = vector
        self.dimension = dimension or 0


def embedding_assign(
    record: CweRecord,
    classes: Sequence[AbstractClassDef],
    embedder: EmbeddingProvider,
    index: Optional[ClassEmbeddingIndex] = None,
) -> Tuple[str, float]:
    """
    説明文の埋め込みとのコサイン類似度が最大のクラスを返します。
    同点の場合はクラスIDが辞書順で小さいものを選びます。

    Args:
        record: CWEレコード
        classes: クラス定義
        embedder: 埋め込みプロバイダ
        index: 事前計算済みのクラス埋め込み（Noneならここで計算）

    Returns:
        Tuple[str, float]: (クラスID, 類似度)

    Raises:
        ZeroVector: 埋め込みがゼロベクトルでコサインが定義できない
    """
    if index is None:
        index = ClassEmbeddingIndex(classes, embedder)
    vector = list(embedder.embed(record.description))
    if index.dimension and len(vector) != index.dimension:
        raise ValidationError(f"埋め込みの次元が一致しません: {len(vector)} != {index.dimension}")

    best: Optional[Tuple[str, float]] = None
    for definition in sorted(classes, key=lambda c: c.id):
        similarity = cosine(vector, index.vectors[definition.id])
        if similarity is None:
            raise ZeroVector(f"{record.id} またはクラス {definition.id} の埋め込みがゼロベクトルです")
        # ID昇順に走査し、厳密に大きい場合のみ更新することで同点は小さいIDが残る
        if best is None or similarity > best[1]:
            best = (definition.id, similarity)
    if best is None:
        raise ValidationError("クラス定義が空です")
    return best


def _record_from_node(node: GraphNode) -> CweRecord:
    return CweRecord(
        id=node.id,
        name=node.name,
        description=node.description,
        abstraction=node.attributes.get("abstraction", ""),
    )


def map_corpus(
    graph: KnowledgeGraph,
    classes: Sequence[AbstractClassDef],
    embedder: EmbeddingProvider,
) -> MappingReport:
    """
    グラフ内の全CweノードにMemberOfエッジを作成します。

    キーワード一致があればそのクラスすべて（KeywordMatch, 重み1.0）、
    なければ埋め込みで最も近いクラス1つ（EmbeddingMatch, 重み=類似度）に割り当てます。
    キーワード一致したCWEに対して埋め込みプロバイダは呼び出されません。

    Returns:
        MappingReport: 割り当て結果

    Raises:
        ValidationError: Cweノードがない、またはクラスノードが揃っていない
        FrozenGraph: グラフが凍結済み
    """
    cwe_nodes = list(graph.iter_nodes(NodeKind.CWE))
    if not cwe_nodes:
        raise ValidationError("グラフにCweノードがありません")
    missing = [c.id for c in classes if not graph.has_node(class_node_id(c.id))]
    if missing:
        raise ValidationError(f"抽象クラスノードが不足しています: {', '.join(missing)}")

    report = MappingReport()
    index: Optional[ClassEmbeddingIndex] = None
    # CWE ID順に処理してエッジ挿入順を決定的にする
    cwe_nodes.sort(key=lambda n: int(n.id.split("-")[1]))
    for node in cwe_nodes:
        record = _record_from_node(node)
        matched = keyword_assign(record, classes)
        if matched:
            for class_id in sorted(matched):
                graph.link(node.id, EdgeKind.MEMBER_OF, class_node_id(class_id), weight=1.0,
                           provenance=Provenance.KEYWORD_MATCH)
            report.keyword_assigned += 1
            report.per_cwe[node.id] = CweAssignment(classes=sorted(matched), method="keyword")
            continue

        if index is None:
            index = ClassEmbeddingIndex(classes, embedder)
        class_id, similarity = embedding_assign(record, classes, embedder, index)
        graph.link(node.id, EdgeKind.MEMBER_OF, class_node_id(class_id), weight=max(similarity, 0.0),
                   provenance=Provenance.EMBEDDING_MATCH)
        report.embedding_assigned += 1
        report.per_cwe[node.id] = CweAssignment(classes=[class_id], method="embedding", similarity=similarity)
        logger.debug(f"{node.id} を埋め込み照合で {class_id} に割り当てました（類似度 {similarity:.4f}）")

    uncovered = [n.id for n in cwe_nodes if graph.degree(n.id, EdgeKind.MEMBER_OF) == 0]
    if uncovered:
        raise ValidationError(f"抽象クラスに割り当てられていないCWEがあります: {', '.join(uncovered)}")
    logger.info(
        f"CWEを抽象クラスに割り当てました: キーワード {report.keyword_assigned} 件、"
        f"埋め込み {report.embedding_assigned} 件"
    )
    return report
