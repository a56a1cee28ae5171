#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
知識グラフ検索・拡張モジュール

コードエンティティを起点に知識グラフを辿り、プロンプトに挿入する
KGコンテキスト（抽象クラスと候補CWE）を作成します。
また、教師LLMの根拠文に繰り返し現れるエンティティとCWEの共起から
Entityノードとエッジを追加してグラフを拡張します。
"""

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from src.kg.entity_extractor import CodeEntity, rationale_entity_kind
from src.kg.knowledge_graph import (
    CLASS_PREFIX,
    EdgeKind,
    GraphNode,
    KnowledgeGraph,
    NodeKind,
    Provenance,
    class_node_id,
    entity_node_id,
)
from src.utils.embedding_generator import EmbeddingProvider, cosine
from src.utils.exceptions import FrozenGraph, GraphNotFrozen, ValidationError
from src.utils.logger_util import setup_logger

logger = setup_logger(__name__)

DEFAULT_K = 5
DEFAULT_MAX_BLOCK_CHARS = 1200
NO_MATCH_BLOCK = "KG CONTEXT: no KG matches"
DISABLED_BLOCK = "KG CONTEXT: disabled"


def _cwe_number(cwe_id: str) -> int:
    return int(cwe_id.split("-")[1])


@dataclass
class RetrievalContext:
    """
    プロンプトに挿入するKGコンテキスト

    Attributes:
        entities: 検索に使ったエンティティ
        classes: (クラスID, スコア) のスコア降順
        candidate_cwes: (CWE ID, 信頼度) の信頼度降順・CWE番号昇順
        rendered: プロンプト挿入用のテキストブロック
    """
    entities: List[CodeEntity] = field(default_factory=list)
    classes: List[Tuple[str, float]] = field(default_factory=list)
    candidate_cwes: List[Tuple[str, float]] = field(default_factory=list)
    rendered: str = NO_MATCH_BLOCK
    disabled: bool = False

    @classmethod
    def empty(cls) -> "RetrievalContext":
        return cls()

    @classmethod
    def without_kg(cls) -> "RetrievalContext":
        """KGを使わない比較実験用のコンテキスト"""
        return cls(rendered=DISABLED_BLOCK, disabled=True)

    def to_dict(self) -> Dict[str, object]:
        return {
            "entities": [entity.to_dict() for entity in self.entities],
            "classes": [{"id": class_id, "score": round(score, 6)} for class_id, score in self.classes],
            "candidate_cwes": [{"id": cwe_id, "confidence": round(c, 6)} for cwe_id, c in self.candidate_cwes],
            "rendered": self.rendered,
        }


def render_context(
    classes: Sequence[Tuple[str, float]],
    candidates: Sequence[Tuple[str, float]],
    max_chars: int = DEFAULT_MAX_BLOCK_CHARS,
) -> Tuple[str, List[Tuple[str, float]]]:
    """
    KGコンテキストを描画します。上限文字数を超える場合は信頼度の低い候補から落とします。

    Returns:
        Tuple[str, List[Tuple[str, float]]]: (描画結果, 残った候補)
    """
    if not classes and not candidates:
        return NO_MATCH_BLOCK, []

    class_ids = [class_id for class_id, _ in classes]
    header = "KG CLASSES: " + (", ".join(class_ids) if class_ids else "none")
    while len(header) > max_chars and class_ids:
        class_ids.pop()
        header = "KG CLASSES: " + (", ".join(class_ids) if class_ids else "none")

    kept = list(candidates)
    while True:
        lines = [header] + [f"KG CANDIDATE: {cwe_id} (confidence {confidence:.2f})" for cwe_id, confidence in kept]
        block = "\n".join(lines)
        if len(block) <= max_chars or not kept:
            return block, kept
        kept.pop()


def retrieve(
    graph: KnowledgeGraph,
    entities: Sequence[CodeEntity],
    k: int = DEFAULT_K,
    max_block_chars: int = DEFAULT_MAX_BLOCK_CHARS,
) -> RetrievalContext:
    """
    エンティティから候補CWEと抽象クラスを検索します。

    CWEの信頼度は、グラフ上に存在するエンティティの IndicatorOf 重みを
    そのCWEについて合計し、それらエンティティの IndicatorOf 重み総和で割った値です。
    クラスのスコアは AssociatedWith 重みの正規化値と、残った候補CWEの
    MemberOf を信頼度で重み付けした値の合計です。

    Args:
        graph: 凍結済みの知識グラフ
        entities: コードエンティティ
        k: 候補CWEの最大数

    Raises:
        GraphNotFrozen: グラフが凍結されていない
    """
    if not graph.frozen:
        raise GraphNotFrozen("検索には凍結済みの知識グラフが必要です")
    if k < 1:
        raise ValidationError(f"k は正の整数である必要があります: {k}")

    matched: List[str] = []
    seen = set()
    for entity in entities:
        node_id = entity_node_id(entity.name)
        if node_id in seen:
            continue
        seen.add(node_id)
        if graph.has_node(node_id) and graph.get_node(node_id).kind == NodeKind.ENTITY:
            matched.append(node_id)

    cwe_mass: Dict[str, float] = defaultdict(float)
    class_mass: Dict[str, float] = defaultdict(float)
    for node_id in sorted(matched):
        for cwe_node, edge in graph.neighbors(node_id, EdgeKind.INDICATOR_OF):
            cwe_mass[cwe_node.id] += edge.weight
        for class_node, edge in graph.neighbors(node_id, EdgeKind.ASSOCIATED_WITH):
            class_mass[class_node.id] += edge.weight

    total_cwe = sum(cwe_mass.values())
    candidates: List[Tuple[str, float]] = []
    if total_cwe > 0:
        candidates = [(cwe_id, mass / total_cwe) for cwe_id, mass in cwe_mass.items() if mass > 0]
        candidates.sort(key=lambda pair: (-pair[1], _cwe_number(pair[0])))
        candidates = candidates[:k]

    scores: Dict[str, float] = defaultdict(float)
    total_class = sum(class_mass.values())
    if total_class > 0:
        for node_id, mass in class_mass.items():
            scores[node_id] += mass / total_class
    for cwe_id, confidence in candidates:
        for class_node, _ in graph.neighbors(cwe_id, EdgeKind.MEMBER_OF):
            scores[class_node.id] += confidence
    classes = sorted(
        ((node_id[len(CLASS_PREFIX):], score) for node_id, score in scores.items() if score > 0),
        key=lambda pair: (-pair[1], pair[0]),
    )

    rendered, kept = render_context(classes, candidates, max_block_chars)
    if len(kept) < len(candidates):
        logger.debug(f"KGコンテキストの文字数上限により候補CWEを {len(candidates) - len(kept)} 件省略しました")
    return RetrievalContext(
        entities=list(entities),
        classes=classes,
        candidate_cwes=kept,
        rendered=rendered,
    )


@dataclass
class AugmentReport:
    entities_added: int = 0
    edges_added: int = 0
    edges_updated: int = 0

    def to_dict(self) -> Dict[str, int]:
        return {
            "entities_added": self.entities_added,
            "edges_added": self.edges_added,
            "edges_updated": self.edges_updated,
        }


def _upsert_edge(
    graph: KnowledgeGraph,
    source: str,
    kind: EdgeKind,
    target: str,
    weight: float,
    report: AugmentReport,
) -> None:
    existing = graph.get_edge(source, kind, target)
    if existing is None:
        graph.link(source, kind, target, weight=weight, provenance=Provenance.MINED)
        report.edges_added += 1
        return
    # 既存エッジの重みは下げない。由来も元のものを保持する
    graph.link(source, kind, target, weight=max(existing.weight, weight), provenance=existing.provenance)
    report.edges_updated += 1


def augment(
    graph: KnowledgeGraph,
    rationales: Sequence[Tuple[object, object]],
    min_count: int = 3,
    min_similarity: float = 0.5,
    embedder: Optional[EmbeddingProvider] = None,
) -> AugmentReport:
    """
    根拠文の共起からエンティティをグラフに追加します。

    脆弱と判定された根拠文（r⁺）で min_count 回以上共起した (エンティティ, CWE) に
    IndicatorOf、(エンティティ, クラス) に AssociatedWith を重み=共起回数で作成します。
    埋め込みプロバイダがある場合は、回数が足りなくても
    エンティティ名とCWE説明文のコサイン類似度が min_similarity 以上なら接続します。

    Args:
        graph: 拡張するグラフ（凍結されていないこと）
        rationales: (StructuredRationale, FunctionSample) の列
        min_count: 共起回数のしきい値
        min_similarity: 埋め込み類似度のしきい値
        embedder: 埋め込みプロバイダ（任意）

    Returns:
        AugmentReport: 追加・更新件数

    Raises:
        FrozenGraph: グラフが凍結済み
    """
    # 循環インポートを避けるため関数内で読み込む
    from src.distill.rationale import Verdict

    if graph.frozen:
        raise FrozenGraph("凍結済みの知識グラフは拡張できません")
    if min_count < 1:
        raise ValidationError(f"min_count は正の整数である必要があります: {min_count}")

    cwe_counts: Counter = Counter()
    class_counts: Counter = Counter()
    entity_kinds: Dict[str, str] = {}
    for rationale, _sample in rationales:
        if rationale.verdict != Verdict.VULNERABLE:
            continue
        names = set()
        for entity in rationale.entities:
            names.add(entity.name)
            entity_kinds.setdefault(entity.name, rationale_entity_kind(entity.kind).value)
        for name in names:
            for cwe_id in rationale.cwe_attribution:
                cwe_counts[(name, cwe_id)] += 1
        linked = {(rationale.entities[index].name, class_id) for index, class_id in rationale.class_links}
        for pair in linked:
            class_counts[pair] += 1

    report = AugmentReport()
    description_vectors: Dict[str, List[float]] = {}

    def _accepted(name: str, target_text: str, count: int) -> bool:
        if count >= min_count:
            return True
        if embedder is None:
            return False
        if target_text not in description_vectors:
            description_vectors[target_text] = embedder.embed(target_text)
        similarity = cosine(embedder.embed(name), description_vectors[target_text])
        return similarity is not None and similarity >= min_similarity

    def _ensure_entity(name: str) -> str:
        node_id = entity_node_id(name)
        if not graph.has_node(node_id):
            graph.upsert_node(GraphNode(
                id=node_id,
                kind=NodeKind.ENTITY,
                name=name,
                attributes={"entity_kind": entity_kinds.get(name, "Other")},
            ))
            report.entities_added += 1
        return node_id

    for (name, cwe_id), count in sorted(cwe_counts.items()):
        if not graph.has_node(cwe_id):
            logger.warning(f"根拠文のCWE {cwe_id} がグラフに存在しないため {name} との接続を省略します")
            continue
        if not _accepted(name, graph.get_node(cwe_id).description, count):
            continue
        _upsert_edge(graph, _ensure_entity(name), EdgeKind.INDICATOR_OF, cwe_id, float(count), report)

    for (name, class_id), count in sorted(class_counts.items()):
        target = class_node_id(class_id)
        if not graph.has_node(target):
            logger.warning(f"根拠文のクラス {class_id} がグラフに存在しないため {name} との接続を省略します")
            continue
        if not _accepted(name, graph.get_node(target).description, count):
            continue
        _upsert_edge(graph, _ensure_entity(name), EdgeKind.ASSOCIATED_WITH, target, float(count), report)

    logger.info(
        f"知識グラフを拡張しました: エンティティ追加 {report.entities_added}、"
        f"エッジ追加 {report.edges_added}、エッジ更新 {report.edges_updated}"
    )
    return report
