#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
class_mapping.pyのテストモジュール

キーワード照合の優先、埋め込みによる補完、全CWEの被覆を検証します。
"""

import json
import os
import tempfile
import unittest

from support import corpus_graph

from src.kg.class_mapping import (
    AbstractClassDef,
    add_class_nodes,
    embedding_assign,
    keyword_assign,
    load_class_definitions,
    map_corpus,
)
from src.kg.cwe_ingest import CweRecord, load_into_graph
from src.kg.knowledge_graph import EdgeKind, KnowledgeGraph, NodeKind, Provenance, class_node_id
from src.utils.embedding_generator import HashEmbedder
from src.utils.exceptions import ConfigError, ZeroVector

# どのクラスのキーワードにも当たらない語
_NEUTRAL_WORDS = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
                  "india", "juliet", "kilo", "lima", "mike", "november", "oscar", "papa"]


class _ConstantEmbedder:
    """常に同じベクトルを返す（同点の扱いの確認用）"""

    dimension = 2

    def embed(self, text):
        return [1.0, 0.0]


class _ZeroEmbedder:
    dimension = 4

    def embed(self, text):
        return [0.0] * 4


def _synthetic_corpus(count: int = 50):
    """3件に1件はキーワードを含まない説明文を持つ合成コーパス"""
    records = []
    for n in range(1, count + 1):
        if n % 3 == 0:
            words = [_NEUTRAL_WORDS[(n + k) % len(_NEUTRAL_WORDS)] for k in range(6)]
            description = " ".join(words) + f" variant {n}"
        else:
            description = f"The product mishandles a heap buffer in routine {n}."
        records.append(CweRecord(id=f"CWE-{1000 + n}", name=f"Synthetic {n}", description=description))
    return records


class TestLoadClassDefinitions(unittest.TestCase):
    """クラス定義の読み込みテスト"""

    def test_default_has_thirteen_classes(self):
        classes = load_class_definitions(expect_default_count=True)
        self.assertEqual(len(classes), 13)
        self.assertEqual([c.id for c in classes], sorted(c.id for c in classes))
        self.assertIn("MemoryManagement", {c.id for c in classes})

    def test_duplicate_id(self):
        entry = {"id": "A", "name": "A", "description": "a", "keywords": ["x"]}
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "classes.json")
            with open(path, "w", encoding="utf-8") as f:
                json.dump([entry, entry], f)
            with self.assertRaises(ConfigError):
                load_class_definitions(path)

    def test_empty_keywords(self):
        with self.assertRaises(ConfigError):
            AbstractClassDef(id="A", name="A", description="a", keywords=frozenset())

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_class_definitions("/nonexistent/classes.json")


class TestKeywordAssign(unittest.TestCase):
    """キーワード照合のテスト"""

    def setUp(self):
        self.classes = load_class_definitions()

    def _assign(self, description):
        return keyword_assign(CweRecord(id="CWE-1", name="x", description=description), self.classes)

    def test_multiple_classes(self):
        matched = self._assign("An integer overflow leads to a heap buffer write.")
        self.assertIn("MemoryManagement", matched)
        self.assertIn("NumericAndTypeErrors", matched)

    def test_token_boundaries(self):
        """単一トークンは単語境界で照合し、部分一致しない"""
        self.assertNotIn("Cryptography", self._assign("The keyboard driver hangs."))
        self.assertIn("Cryptography", self._assign("A hard-coded key is used."))

    def test_phrase_is_substring(self):
        self.assertIn("MemoryManagement", self._assign("A classic Use After Free in the parser."))

    def test_no_match(self):
        self.assertEqual(self._assign(" ".join(_NEUTRAL_WORDS)), set())


class TestMapCorpus(unittest.TestCase):
    """map_corpus のテスト"""

    def test_fixture_corpus_is_keyword_only(self):
        """全CWEがキーワード一致する場合、埋め込みは一度も呼ばれない"""
        graph = corpus_graph(mapped=False)
        classes = load_class_definitions()
        add_class_nodes(graph, classes)
        embedder = HashEmbedder(32)
        report = map_corpus(graph, classes, embedder)
        self.assertEqual(report.keyword_assigned, 13)
        self.assertEqual(report.embedding_assigned, 0)
        self.assertEqual(embedder.calls, 0)
        for edge in graph.iter_edges(EdgeKind.MEMBER_OF):
            self.assertEqual(edge.provenance, Provenance.KEYWORD_MATCH)
            self.assertEqual(edge.weight, 1.0)
        member = {node.id for node, _ in graph.neighbors("CWE-401", EdgeKind.MEMBER_OF)}
        self.assertIn(class_node_id("MemoryManagement"), member)

    def test_every_cwe_is_covered(self):
        """キーワードのないCWEは埋め込みで1クラスに割り当てられる"""
        graph = KnowledgeGraph()
        load_into_graph(_synthetic_corpus(), graph)
        classes = load_class_definitions()
        add_class_nodes(graph, classes)
        report = map_corpus(graph, classes, HashEmbedder(64))

        self.assertEqual(report.keyword_assigned + report.embedding_assigned, 50)
        self.assertEqual(report.embedding_assigned, 16)
        for node in graph.iter_nodes(NodeKind.CWE):
            self.assertGreaterEqual(graph.degree(node.id, EdgeKind.MEMBER_OF), 1)
        for cwe_id, assignment in report.per_cwe.items():
            if assignment.method == "embedding":
                self.assertEqual(len(assignment.classes), 1)
                edges = graph.neighbors(cwe_id, EdgeKind.MEMBER_OF)
                self.assertEqual(len(edges), 1)
                self.assertEqual(edges[0][1].provenance, Provenance.EMBEDDING_MATCH)

    def test_mapping_is_deterministic(self):
        outputs = []
        for _ in range(2):
            graph = KnowledgeGraph()
            load_into_graph(_synthetic_corpus(), graph)
            classes = load_class_definitions()
            add_class_nodes(graph, classes)
            map_corpus(graph, classes, HashEmbedder(64))
            outputs.append(graph.to_bytes())
        self.assertEqual(outputs[0], outputs[1])

    def test_non_ascii_description(self):
        """キーワードに当たらない日本語の説明文も埋め込みで割り当てられる"""
        graph = KnowledgeGraph()
        load_into_graph([CweRecord(id="CWE-5001", name="日本語", description="解放後のポインタを再利用する")], graph)
        classes = load_class_definitions()
        add_class_nodes(graph, classes)
        report = map_corpus(graph, classes, HashEmbedder(64))
        self.assertEqual(report.embedding_assigned, 1)
        self.assertEqual(graph.degree("CWE-5001", EdgeKind.MEMBER_OF), 1)


class TestEmbeddingAssign(unittest.TestCase):
    """埋め込み照合のテスト"""

    def setUp(self):
        self.classes = load_class_definitions()
        self.record = CweRecord(id="CWE-5000", name="x", description="alpha bravo charlie")

    def test_tie_breaks_to_smallest_id(self):
        class_id, similarity = embedding_assign(self.record, self.classes, _ConstantEmbedder())
        self.assertEqual(class_id, "AccessControl")
        self.assertAlmostEqual(similarity, 1.0)

    def test_zero_vector(self):
        with self.assertRaises(ZeroVector):
            embedding_assign(self.record, self.classes, _ZeroEmbedder())


if __name__ == "__main__":
    unittest.main()
