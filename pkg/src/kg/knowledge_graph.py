#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
セキュリティ知識グラフモジュール

抽象クラス・CWE・コードエンティティを型付きノードとして保持し、
型制約付きのエッジで結ぶインメモリのプロパティグラフを提供します。
構築フェーズは単一スレッドで行い、freeze() 後は読み取り専用になります。
"""

import json
import math
import numbers
import re
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple

import networkx as nx

from src.utils.exceptions import (
    CorruptInput,
    FrozenGraph,
    KindMismatch,
    MalformedCweId,
    UnknownKind,
    UnknownNode,
    ValidationError,
)
from src.utils.logger_util import setup_logger

logger = setup_logger(__name__)

KG_FORMAT_VERSION = 1
CWE_ID_PATTERN = re.compile(r"^CWE-[0-9]+$")

CLASS_PREFIX = "class:"
ENTITY_PREFIX = "entity:"


class NodeKind(str, Enum):
    ABSTRACT_CLASS = "AbstractClass"
    CWE = "Cwe"
    ENTITY = "Entity"

    @classmethod
    def parse(cls, value: str) -> "NodeKind":
        try:
            return cls(value)
        except ValueError:
            raise UnknownKind(f"未知のノード種別です: {value!r}") from None


class EdgeKind(str, Enum):
    MEMBER_OF = "MemberOf"
    CHILD_OF = "ChildOf"
    ASSOCIATED_WITH = "AssociatedWith"
    INDICATOR_OF = "IndicatorOf"

    @classmethod
    def parse(cls, value: str) -> "EdgeKind":
        try:
            return cls(value)
        except ValueError:
            raise UnknownKind(f"未知のエッジ種別です: {value!r}") from None


class Provenance(str, Enum):
    CURATED = "Curated"
    KEYWORD_MATCH = "KeywordMatch"
    EMBEDDING_MATCH = "EmbeddingMatch"
    MINED = "Mined"

    @classmethod
    def parse(cls, value: str) -> "Provenance":
        try:
            return cls(value)
        except ValueError:
            raise UnknownKind(f"未知の由来種別です: {value!r}") from None


class Direction(str, Enum):
    OUT = "Out"
    IN = "In"


# エッジ種別ごとの (始点種別, 終点種別)
EDGE_SIGNATURES: Dict[EdgeKind, Tuple[NodeKind, NodeKind]] = {
    EdgeKind.MEMBER_OF: (NodeKind.CWE, NodeKind.ABSTRACT_CLASS),
    EdgeKind.CHILD_OF: (NodeKind.CWE, NodeKind.CWE),
    EdgeKind.ASSOCIATED_WITH: (NodeKind.ENTITY, NodeKind.ABSTRACT_CLASS),
    EdgeKind.INDICATOR_OF: (NodeKind.ENTITY, NodeKind.CWE),
}


def class_node_id(class_id: str) -> str:
    """抽象クラスIDからノードIDを作る"""
    return f"{CLASS_PREFIX}{class_id}"


def entity_node_id(name: str) -> str:
    """エンティティ名からノードIDを作る（大文字小文字は区別する）"""
    return f"{ENTITY_PREFIX}{name}"


def is_canonical_cwe_id(value: str) -> bool:
    return bool(CWE_ID_PATTERN.match(value or ""))


def _frozen_attributes(raw: Optional[Mapping[str, Any]]) -> Mapping[str, str]:
    """文字列キー・文字列値の読み取り専用マッピングにする"""
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ValidationError(f"attributes はキーと値の組である必要があります: {type(raw).__name__}")
    return MappingProxyType({str(k): str(v) for k, v in raw.items()})


@dataclass(frozen=True)
class GraphNode:
    """
    グラフのノード（不変）

    Attributes:
        id: 一意なノードID（Cweノードは "CWE-<数字>"）
        kind: ノード種別
        name: 表示名
        description: 説明文
        attributes: 文字列キー・文字列値の読み取り専用メタデータ
    """
    id: str
    kind: NodeKind
    name: str = ""
    description: str = ""
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.kind, NodeKind):
            object.__setattr__(self, "kind", NodeKind.parse(self.kind))
        for name in ("id", "name", "description"):
            if not isinstance(getattr(self, name), str):
                raise ValidationError(f"ノードの {name} は文字列である必要があります: {getattr(self, name)!r}")
        object.__setattr__(self, "attributes", _frozen_attributes(self.attributes))

    def __hash__(self) -> int:
        return hash((self.id, self.kind, self.name, self.description, tuple(sorted(self.attributes.items()))))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "name": self.name,
            "description": self.description,
            "attributes": dict(sorted(self.attributes.items())),
        }


@dataclass(frozen=True)
class GraphEdge:
    """
    グラフのエッジ

    weight は由来によって意味が変わります（Curated/KeywordMatch は 1.0、
    EmbeddingMatch はコサイン類似度、Mined は共起回数）。
    """
    source: str
    target: str
    kind: EdgeKind
    weight: float = 1.0
    provenance: Provenance = Provenance.CURATED

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.source, self.target, self.kind.value)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "source": self.source,
            "target": self.target,
            "kind": self.kind.value,
            "weight": float(self.weight),
            "provenance": self.provenance.value,
        }


class KnowledgeGraph:
    """
    型付きプロパティグラフ G = (V, E)

    内部表現は networkx.MultiDiGraph で、エッジのキーにエッジ種別を使うことで
    (source, target, kind) ごとに高々1本のエッジを保証します。
    """

    def __init__(self, attributes: Optional[Dict[str, str]] = None):
        self._graph = nx.MultiDiGraph()
        self._frozen = False
        self._attributes: Dict[str, str] = dict(_frozen_attributes(attributes))

    # ------------------------------------------------------------------
    # 状態
    # ------------------------------------------------------------------
    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def attributes(self) -> Mapping[str, str]:
        return MappingProxyType(self._attributes)

    def freeze(self) -> "KnowledgeGraph":
        """以降の変更を禁止する"""
        self._frozen = True
        logger.debug("知識グラフを凍結しました")
        return self

    def _check_mutable(self) -> None:
        if self._frozen:
            raise FrozenGraph("凍結済みの知識グラフは変更できません")

    def set_attribute(self, key: str, value: str) -> None:
        """グラフ全体のメタデータ（CWEコーパスのバージョンなど）を設定"""
        self._check_mutable()
        self._attributes[str(key)] = str(value)

    # ------------------------------------------------------------------
    # 変更操作
    # ------------------------------------------------------------------
    def upsert_node(self, node: GraphNode) -> str:
        """
        ノードを追加、または同じIDのノードを完全に置き換えます。

        Args:
            node: 追加するノード

        Returns:
            str: ノードID

        Raises:
            FrozenGraph: グラフが凍結済み
            MalformedCweId: CweノードのIDが正規形でない
        """
        self._check_mutable()
        if not node.id:
            raise ValidationError("ノードIDが空です")
        if node.kind == NodeKind.CWE and not is_canonical_cwe_id(node.id):
            raise MalformedCweId(f"CWE IDの形式が不正です: {node.id!r}")
        if self._graph.has_node(node.id):
            existing = self._graph.nodes[node.id]["data"]
            if existing.kind != node.kind and self._graph.degree(node.id) > 0:
                # 種別が変わると既存エッジの型制約が崩れる
                raise KindMismatch(
                    f"ノード {node.id} の種別を {existing.kind.value} から {node.kind.value} に変更できません"
                )
        self._graph.add_node(node.id, data=node)
        return node.id

    def link(
        self,
        source: str,
        kind: EdgeKind,
        target: str,
        weight: float = 1.0,
        provenance: Provenance = Provenance.CURATED,
    ) -> GraphEdge:
        """
        型制約を検証してエッジを追加します。同じ (source, target, kind) の
        エッジが既にあれば重みと由来を上書きします。

        Raises:
            FrozenGraph: グラフが凍結済み
            UnknownNode: 端点が存在しない
            KindMismatch: 端点の種別がエッジ種別と合わない
        """
        self._check_mutable()
        kind = EdgeKind.parse(kind) if not isinstance(kind, EdgeKind) else kind
        provenance = Provenance.parse(provenance) if not isinstance(provenance, Provenance) else provenance
        if isinstance(weight, bool) or not isinstance(weight, numbers.Real):
            raise ValidationError(f"エッジの重みは数値である必要があります: {weight!r}")
        weight = float(weight)
        if not math.isfinite(weight) or weight < 0:
            raise ValidationError(f"エッジの重みは有限の非負数である必要があります: {weight}")
        source_node = self.get_node(source)
        target_node = self.get_node(target)
        expected_source, expected_target = EDGE_SIGNATURES[kind]
        if source_node.kind != expected_source or target_node.kind != expected_target:
            raise KindMismatch(
                f"{kind.value} は {expected_source.value}→{expected_target.value} のみ許可されます"
                f"（指定: {source_node.kind.value}→{target_node.kind.value}）"
            )
        edge = GraphEdge(source=source, target=target, kind=kind, weight=weight, provenance=provenance)
        self._graph.add_edge(source, target, key=kind.value, data=edge)
        return edge

    # ------------------------------------------------------------------
    # 参照操作
    # ------------------------------------------------------------------
    def has_node(self, node_id: str) -> bool:
        return self._graph.has_node(node_id)

    def get_node(self, node_id: str) -> GraphNode:
        if not self._graph.has_node(node_id):
            raise UnknownNode(f"ノード {node_id!r} は存在しません")
        return self._graph.nodes[node_id]["data"]

    def get_edge(self, source: str, kind: EdgeKind, target: str) -> Optional[GraphEdge]:
        kind = EdgeKind(kind)
        if self._graph.has_edge(source, target, key=kind.value):
            return self._graph.edges[source, target, kind.value]["data"]
        return None

    @property
    def nodes(self) -> Dict[str, GraphNode]:
        return {node_id: data["data"] for node_id, data in self._graph.nodes(data=True)}

    @property
    def edges(self) -> set:
        return {data["data"] for _, _, data in self._graph.edges(data=True)}

    def iter_nodes(self, kind: Optional[NodeKind] = None) -> Iterator[GraphNode]:
        """ID昇順でノードを列挙"""
        for node_id in sorted(self._graph.nodes):
            node = self._graph.nodes[node_id]["data"]
            if kind is None or node.kind == kind:
                yield node

    def iter_edges(self, kind: Optional[EdgeKind] = None) -> Iterator[GraphEdge]:
        """(source, target, kind) 昇順でエッジを列挙"""
        edges = sorted((data["data"] for _, _, data in self._graph.edges(data=True)), key=lambda e: e.key)
        for edge in edges:
            if kind is None or edge.kind == kind:
                yield edge

    def neighbors(
        self,
        node_id: str,
        edge_kind: Optional[EdgeKind] = None,
        direction: Direction = Direction.OUT,
    ) -> List[Tuple[GraphNode, GraphEdge]]:
        """
        隣接ノードとエッジの組を返します。

        並び順は (エッジ重み降順, 隣接ノードID昇順) で決定的です。

        Raises:
            UnknownNode: ノードが存在しない
        """
        if not self._graph.has_node(node_id):
            raise UnknownNode(f"ノード {node_id!r} は存在しません")
        direction = Direction(direction)
        if direction == Direction.OUT:
            raw = self._graph.out_edges(node_id, keys=True, data=True)
            pairs = [(target, data["data"]) for _, target, _, data in raw]
        else:
            raw = self._graph.in_edges(node_id, keys=True, data=True)
            pairs = [(source, data["data"]) for source, _, _, data in raw]
        if edge_kind is not None:
            edge_kind = EdgeKind(edge_kind)
            pairs = [(other, edge) for other, edge in pairs if edge.kind == edge_kind]
        pairs.sort(key=lambda pair: (-pair[1].weight, pair[0], pair[1].kind.value))
        return [(self._graph.nodes[other]["data"], edge) for other, edge in pairs]

    def degree(self, node_id: str, edge_kind: Optional[EdgeKind] = None, direction: Direction = Direction.OUT) -> int:
        return len(self.neighbors(node_id, edge_kind, direction))

    def node_count(self) -> int:
        return self._graph.number_of_nodes()

    def edge_count(self) -> int:
        return self._graph.number_of_edges()

    def stats(self) -> Dict[str, int]:
        """種別ごとのノード数・エッジ数"""
        counts: Dict[str, int] = {f"nodes.{kind.value}": 0 for kind in NodeKind}
        counts.update({f"edges.{kind.value}": 0 for kind in EdgeKind})
        for node in self.iter_nodes():
            counts[f"nodes.{node.kind.value}"] += 1
        for edge in self.iter_edges():
            counts[f"edges.{edge.kind.value}"] += 1
        counts["nodes.total"] = self.node_count()
        counts["edges.total"] = self.edge_count()
        return counts

    def copy(self) -> "KnowledgeGraph":
        """凍結されていない複製を返す"""
        return KnowledgeGraph.from_bytes(self.to_bytes())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.edges == other.edges
            and self.attributes == other.attributes
        )

    # ------------------------------------------------------------------
    # シリアライズ
    # ------------------------------------------------------------------
    def to_dict(self) -> Dict[str, Any]:
        document: Dict[str, Any] = {
            "version": KG_FORMAT_VERSION,
            "nodes": [node.to_dict() for node in self.iter_nodes()],
            "edges": [edge.to_dict() for edge in self.iter_edges()],
        }
        if self.attributes:
            document["attributes"] = dict(sorted(self.attributes.items()))
        return document

    def to_bytes(self) -> bytes:
        """ノード・エッジを辞書順に並べた決定的なUTF-8 JSON"""
        text = json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True)
        return (text + "\n").encode("utf-8")

    @classmethod
    def from_bytes(cls, payload: bytes) -> "KnowledgeGraph":
        """
        to_bytes() の出力からグラフを復元します。

        Raises:
            CorruptInput: デコード不能・JSON不正・必須フィールド欠落・未知の種別・宙に浮いたエッジ
        """
        try:
            document = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CorruptInput(f"知識グラフファイルを解析できません: {e}") from e
        if not isinstance(document, dict) or document.get("version") != KG_FORMAT_VERSION:
            raise CorruptInput("知識グラフファイルのバージョンが不正です")
        try:
            graph = cls(attributes=document.get("attributes") or {})
            for raw in document["nodes"]:
                graph.upsert_node(GraphNode(
                    id=raw["id"],
                    kind=NodeKind.parse(raw["kind"]),
                    name=raw["name"],
                    description=raw["description"],
                    attributes=raw["attributes"],
                ))
            for raw in document["edges"]:
                graph.link(
                    raw["source"],
                    EdgeKind.parse(raw["kind"]),
                    raw["target"],
                    weight=raw["weight"],
                    provenance=Provenance.parse(raw["provenance"]),
                )
        except KeyError as e:
            raise CorruptInput(f"知識グラフファイルの必須フィールドが欠落しています: {e}") from e
        except (TypeError, ValueError, AttributeError) as e:
            raise CorruptInput(f"知識グラフファイルのフィールドの型が不正です: {e}") from e
        except ValidationError as e:
            raise CorruptInput(f"知識グラフファイルの内容が不正です: {e}") from e
        return graph

    def save(self, path: str) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())
        logger.info(f"知識グラフを保存しました: {path}（ノード {self.node_count()}、エッジ {self.edge_count()}）")

    @classmethod
    def load(cls, path: str) -> "KnowledgeGraph":
        with open(path, "rb") as f:
            graph = cls.from_bytes(f.read())
        logger.info(f"知識グラフを読み込みました: {path}（ノード {graph.node_count()}、エッジ {graph.edge_count()}）")
        return graph

    # ------------------------------------------------------------------
    # グラフDB向けエクスポート
    # ------------------------------------------------------------------
    def export_statements(self) -> List[str]:
        """
        外部グラフデータベースに投入するための MERGE 文を1行1文で返します。
        ノードラベルは NodeKind 名、リレーションシップ型は EdgeKind 名です。
        """
        statements: List[str] = []
        for node in self.iter_nodes():
            props = {"name": node.name, "description": node.description}
            props.update({f"attr_{key}": value for key, value in sorted(node.attributes.items())})
            assignments = ", ".join(f"n.`{key}` = {_literal(value)}" for key, value in props.items())
            statements.append(f"MERGE (n:{node.kind.value} {{id: {_literal(node.id)}}}) SET {assignments};")
        for edge in self.iter_edges():
            statements.append(
                f"MATCH (a {{id: {_literal(edge.source)}}}), (b {{id: {_literal(edge.target)}}}) "
                f"MERGE (a)-[r:{edge.kind.value}]->(b) "
                f"SET r.weight = {float(edge.weight)!r}, r.provenance = {_literal(edge.provenance.value)};"
            )
        return statements


def round_trip(graph: KnowledgeGraph) -> KnowledgeGraph:
    """シリアライズ→デシリアライズした結果を返す"""
    return KnowledgeGraph.from_bytes(graph.to_bytes())


def _literal(value: str) -> str:
    # JSON文字列リテラルはCypherの二重引用符文字列としても有効
    return json.dumps(value, ensure_ascii=False)
