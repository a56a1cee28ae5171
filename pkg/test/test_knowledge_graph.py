#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
knowledge_graph.pyのテストモジュール

型制約、凍結、隣接ノードの並び順、決定的なシリアライズを検証します。
"""

import json
import unittest

from hypothesis import HealthCheck, given, settings, strategies as st

import support  # noqa: F401  (sys.path の設定)

from src.kg.knowledge_graph import (
    EDGE_SIGNATURES,
    Direction,
    EdgeKind,
    GraphNode,
    KnowledgeGraph,
    NodeKind,
    Provenance,
    class_node_id,
    entity_node_id,
    round_trip,
)
from src.utils.exceptions import (
    CorruptInput,
    FrozenGraph,
    KindMismatch,
    MalformedCweId,
    UnknownKind,
    UnknownNode,
    ValidationError,
)


def _small_graph() -> KnowledgeGraph:
    graph = KnowledgeGraph(attributes={"cwe_version": "4.14"})
    graph.upsert_node(GraphNode(id="CWE-401", kind=NodeKind.CWE, name="Missing Release of Memory",
                                description="memory leak"))
    graph.upsert_node(GraphNode(id="CWE-404", kind=NodeKind.CWE, name="Improper Resource Shutdown",
                                description="resource release"))
    graph.upsert_node(GraphNode(id=class_node_id("MemoryManagement"), kind=NodeKind.ABSTRACT_CLASS,
                                name="Memory Management"))
    graph.upsert_node(GraphNode(id=entity_node_id("malloc"), kind=NodeKind.ENTITY, name="malloc"))
    graph.link("CWE-401", EdgeKind.CHILD_OF, "CWE-404")
    graph.link("CWE-401", EdgeKind.MEMBER_OF, class_node_id("MemoryManagement"),
               provenance=Provenance.KEYWORD_MATCH)
    graph.link(entity_node_id("malloc"), EdgeKind.INDICATOR_OF, "CWE-401", weight=3.0, provenance=Provenance.MINED)
    graph.link(entity_node_id("malloc"), EdgeKind.INDICATOR_OF, "CWE-404", weight=1.0, provenance=Provenance.MINED)
    return graph


_texts = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=10)
_names = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=8)
_attribute_maps = st.dictionaries(_texts, _texts, max_size=3)
_weights = st.floats(min_value=0.0, max_value=1e6, allow_nan=False, allow_infinity=False)


@st.composite
def graphs(draw) -> KnowledgeGraph:
    """全種別のノードと、型制約を満たすエッジからなるグラフ"""
    graph = KnowledgeGraph(attributes=draw(_attribute_maps))
    ids = {kind: [] for kind in NodeKind}
    node_ids = (
        [(f"CWE-{n}", NodeKind.CWE) for n in draw(st.lists(st.integers(1, 1500), unique=True, max_size=6))]
        + [(class_node_id(n), NodeKind.ABSTRACT_CLASS) for n in draw(st.lists(_names, unique=True, max_size=4))]
        + [(entity_node_id(n), NodeKind.ENTITY) for n in draw(st.lists(_names, unique=True, max_size=5))]
    )
    for node_id, kind in node_ids:
        graph.upsert_node(GraphNode(id=node_id, kind=kind, name=draw(_texts), description=draw(_texts),
                                    attributes=draw(_attribute_maps)))
        ids[kind].append(node_id)
    for edge_kind, (source_kind, target_kind) in EDGE_SIGNATURES.items():
        if not ids[source_kind] or not ids[target_kind]:
            continue
        for _ in range(draw(st.integers(0, 6))):
            graph.link(
                draw(st.sampled_from(ids[source_kind])),
                edge_kind,
                draw(st.sampled_from(ids[target_kind])),
                weight=draw(_weights),
                provenance=draw(st.sampled_from(list(Provenance))),
            )
    return graph


class TestKnowledgeGraph(unittest.TestCase):
    """KnowledgeGraphクラスのテスト"""

    def test_link_rejects_wrong_kinds(self):
        """エッジ種別と端点種別が合わない場合は KindMismatch"""
        graph = _small_graph()
        with self.assertRaises(KindMismatch):
            graph.link(entity_node_id("malloc"), EdgeKind.MEMBER_OF, class_node_id("MemoryManagement"))
        with self.assertRaises(KindMismatch):
            graph.link("CWE-401", EdgeKind.INDICATOR_OF, "CWE-404")

    def test_link_unknown_endpoint(self):
        graph = _small_graph()
        with self.assertRaises(UnknownNode):
            graph.link("CWE-401", EdgeKind.CHILD_OF, "CWE-9")

    def test_malformed_cwe_id(self):
        graph = KnowledgeGraph()
        for bad in ("CWE-", "cwe-79", "CWE-07a", "79"):
            with self.assertRaises(MalformedCweId):
                graph.upsert_node(GraphNode(id=bad, kind=NodeKind.CWE))

    def test_relink_overwrites_single_edge(self):
        """同じ (source, target, kind) のエッジは高々1本"""
        graph = _small_graph()
        graph.link(entity_node_id("malloc"), EdgeKind.INDICATOR_OF, "CWE-401", weight=5.0, provenance=Provenance.MINED)
        edges = [e for e in graph.iter_edges(EdgeKind.INDICATOR_OF) if e.target == "CWE-401"]
        self.assertEqual(len(edges), 1)
        self.assertEqual(edges[0].weight, 5.0)

    def test_frozen_graph_rejects_mutation(self):
        graph = _small_graph().freeze()
        with self.assertRaises(FrozenGraph):
            graph.upsert_node(GraphNode(id="CWE-20", kind=NodeKind.CWE))
        with self.assertRaises(FrozenGraph):
            graph.link("CWE-404", EdgeKind.MEMBER_OF, class_node_id("MemoryManagement"))
        # 参照操作は可能
        self.assertEqual(len(graph.neighbors(entity_node_id("malloc"))), 2)

    def test_neighbors_order_and_direction(self):
        """重み降順・ID昇順で並ぶ"""
        graph = _small_graph()
        neighbors = graph.neighbors(entity_node_id("malloc"), EdgeKind.INDICATOR_OF)
        self.assertEqual([node.id for node, _ in neighbors], ["CWE-401", "CWE-404"])
        incoming = graph.neighbors("CWE-401", direction=Direction.IN)
        self.assertEqual([node.id for node, _ in incoming], [entity_node_id("malloc")])
        self.assertEqual(graph.degree("CWE-401", EdgeKind.MEMBER_OF), 1)

    def test_round_trip_equal(self):
        graph = _small_graph()
        restored = round_trip(graph)
        self.assertEqual(restored, graph)
        self.assertEqual(restored.attributes, {"cwe_version": "4.14"})

    def test_serialization_independent_of_insertion_order(self):
        """挿入順が違っても同じバイト列になる"""
        first = _small_graph()
        second = KnowledgeGraph(attributes={"cwe_version": "4.14"})
        for node in reversed(list(first.iter_nodes())):
            second.upsert_node(node)
        for edge in reversed(list(first.iter_edges())):
            second.link(edge.source, edge.kind, edge.target, edge.weight, edge.provenance)
        self.assertEqual(first.to_bytes(), second.to_bytes())

    def test_corrupt_input(self):
        with self.assertRaises(CorruptInput):
            KnowledgeGraph.from_bytes(b"\xff\xfe")
        with self.assertRaises(CorruptInput):
            KnowledgeGraph.from_bytes(b"{not json")
        document = json.loads(_small_graph().to_bytes())
        document["edges"].append({"source": "CWE-401", "target": "CWE-777", "kind": "ChildOf",
                                  "weight": 1.0, "provenance": "Curated"})
        with self.assertRaises(CorruptInput):
            KnowledgeGraph.from_bytes(json.dumps(document).encode("utf-8"))
        document = json.loads(_small_graph().to_bytes())
        del document["nodes"][0]["kind"]
        with self.assertRaises(CorruptInput):
            KnowledgeGraph.from_bytes(json.dumps(document).encode("utf-8"))

    def test_returned_nodes_are_read_only(self):
        """取り出したノードを書き換えても凍結済みグラフは変わらない"""
        graph = _small_graph().freeze()
        before = graph.to_bytes()
        node = graph.get_node("CWE-401")
        with self.assertRaises(AttributeError):
            node.kind = NodeKind.ENTITY
        with self.assertRaises(TypeError):
            node.attributes["x"] = "y"
        with self.assertRaises(TypeError):
            graph.attributes["cwe_version"] = "0"
        for listed in list(graph.nodes.values()) + list(graph.iter_nodes()):
            with self.assertRaises(AttributeError):
                listed.name = "renamed"
        self.assertEqual(graph.to_bytes(), before)

    def test_caller_dict_is_copied(self):
        attributes = {"source": "mitre"}
        graph = KnowledgeGraph()
        graph.upsert_node(GraphNode(id="CWE-20", kind=NodeKind.CWE, attributes=attributes))
        attributes["source"] = "changed"
        self.assertEqual(graph.get_node("CWE-20").attributes["source"], "mitre")

    def test_link_rejects_bad_weights(self):
        graph = _small_graph()
        for bad in (float("inf"), float("nan"), -1.0, "2.0", True):
            with self.assertRaises(ValidationError):
                graph.link("CWE-401", EdgeKind.CHILD_OF, "CWE-404", weight=bad)
        self.assertEqual(graph.get_edge("CWE-401", EdgeKind.CHILD_OF, "CWE-404").weight, 1.0)

    def test_corrupt_field_types(self):
        """型の不正なフィールドも CorruptInput になる"""
        def broken(mutate):
            document = json.loads(_small_graph().to_bytes())
            mutate(document)
            return json.dumps(document).encode("utf-8")

        cases = {
            "文字列の重み": lambda d: d["edges"][0].update(weight="heavy"),
            "リストの属性": lambda d: d["nodes"][0].update(attributes=["a"]),
            "数値の名前": lambda d: d["nodes"][0].update(name=7),
            "リストのID": lambda d: d["edges"][0].update(source=["CWE-401"]),
            "リストのグラフ属性": lambda d: d.update(attributes=["x"]),
            "ノード列が数値": lambda d: d.update(nodes=3),
        }
        for label, mutate in cases.items():
            with self.subTest(label):
                with self.assertRaises(CorruptInput):
                    KnowledgeGraph.from_bytes(broken(mutate))
        infinite = _small_graph().to_bytes().replace(b'"weight": 3.0', b'"weight": Infinity')
        with self.assertRaises(CorruptInput):
            KnowledgeGraph.from_bytes(infinite)

    @settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(graphs())
    def test_round_trip_property(self, graph):
        """型制約を満たす任意のグラフで round_trip(g) == g"""
        restored = round_trip(graph)
        self.assertEqual(restored, graph)
        self.assertEqual(restored.to_bytes(), graph.to_bytes())
        self.assertEqual(restored.stats(), graph.stats())

    def test_unknown_kind(self):
        with self.assertRaises(UnknownKind):
            EdgeKind.parse("PartOf")
        with self.assertRaises(UnknownKind):
            NodeKind.parse("Project")

    def test_stats(self):
        stats = _small_graph().stats()
        self.assertEqual(stats["nodes.Cwe"], 2)
        self.assertEqual(stats["nodes.Entity"], 1)
        self.assertEqual(stats["edges.IndicatorOf"], 2)
        self.assertEqual(stats["edges.total"], 4)

    def test_export_statements(self):
        statements = _small_graph().export_statements()
        self.assertEqual(len(statements), 4 + 4)
        self.assertTrue(statements[0].startswith("MERGE (n:Cwe {id: \"CWE-401\"})"))
        self.assertTrue(any("MERGE (a)-[r:IndicatorOf]->(b)" in s for s in statements))

    def test_copy_is_mutable(self):
        frozen = _small_graph().freeze()
        copy = frozen.copy()
        self.assertFalse(copy.frozen)
        copy.upsert_node(GraphNode(id="CWE-20", kind=NodeKind.CWE))
        self.assertFalse(frozen.has_node("CWE-20"))


if __name__ == "__main__":
    unittest.main()
