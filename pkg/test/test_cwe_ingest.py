#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
cwe_ingest.pyのテストモジュール
"""

import unittest

from support import CWE_CSV, CWE_XML

from src.kg.cwe_ingest import (
    CweRecord,
    canonical_cwe_id,
    load_into_graph,
    parse_cwe_corpus,
    records_to_csv,
)
from src.kg.knowledge_graph import EdgeKind, KnowledgeGraph, NodeKind
from src.utils.exceptions import DecodeError, FrozenGraph, SchemaError


def _read(path: str) -> bytes:
    with open(path, "rb") as f:
        return f.read()


class TestParseCsv(unittest.TestCase):
    """CSV版コーパスの解析テスト"""

    def setUp(self):
        self.records, self.report = parse_cwe_corpus(_read(CWE_CSV), "csv")

    def test_counts(self):
        """非推奨・説明なしのエントリが除外される"""
        self.assertEqual(self.report.parsed, 13)
        self.assertEqual(self.report.dropped_deprecated, 1)
        self.assertEqual(self.report.dropped_empty_description, 1)
        self.assertEqual(self.report.dangling_parent_links, 3)
        ids = [record.id for record in self.records]
        self.assertNotIn("CWE-21", ids)
        self.assertNotIn("CWE-9999", ids)

    def test_sorted_by_number(self):
        numbers = [int(record.id.split("-")[1]) for record in self.records]
        self.assertEqual(numbers, sorted(numbers))

    def test_extended_description_is_appended(self):
        record = next(r for r in self.records if r.id == "CWE-78")
        self.assertTrue(record.description.startswith("The product constructs all or part of an OS command"))
        self.assertIn("upstream component. This could allow attackers", record.description)

    def test_parents_resolved_within_corpus(self):
        parents = {record.id: record.parents for record in self.records}
        self.assertEqual(parents["CWE-125"], ["CWE-119"])
        self.assertEqual(parents["CWE-787"], ["CWE-119"])
        self.assertEqual(parents["CWE-20"], [])

    def test_missing_column(self):
        payload = b'"CWE-ID","Name"\n"79","XSS"\n'
        with self.assertRaises(SchemaError):
            parse_cwe_corpus(payload, "csv")

    def test_non_utf8(self):
        with self.assertRaises(DecodeError):
            parse_cwe_corpus(b"\xff\xfe\x00\x41", "csv")


class TestParseXml(unittest.TestCase):
    """XML版コーパスの解析テスト"""

    def test_counts_and_version(self):
        records, report = parse_cwe_corpus(_read(CWE_XML), "xml")
        self.assertEqual(report.parsed, 5)
        self.assertEqual(report.dropped_deprecated, 1)
        self.assertEqual(report.dangling_parent_links, 1)
        self.assertEqual(report.version, "4.14")
        self.assertEqual([r.id for r in records], ["CWE-74", "CWE-79", "CWE-89", "CWE-415", "CWE-416"])

    def test_only_child_of_relations(self):
        records, _ = parse_cwe_corpus(_read(CWE_XML), "xml")
        by_id = {r.id: r for r in records}
        self.assertEqual(by_id["CWE-79"].parents, ["CWE-74"])
        self.assertEqual(by_id["CWE-415"].parents, ["CWE-416"])
        self.assertIn("untrusted data", by_id["CWE-79"].description)

    def test_missing_weaknesses(self):
        payload = b'<?xml version="1.0"?><Weakness_Catalog Version="1"><Categories/></Weakness_Catalog>'
        with self.assertRaises(SchemaError):
            parse_cwe_corpus(payload, "xml")

    def test_broken_xml(self):
        with self.assertRaises(SchemaError):
            parse_cwe_corpus(b"<Weakness_Catalog><Weaknesses>", "xml")


class TestLoadIntoGraph(unittest.TestCase):
    """知識グラフへの読み込みテスト"""

    def test_child_of_edges(self):
        records, _ = parse_cwe_corpus(_read(CWE_CSV), "csv")
        graph = KnowledgeGraph()
        added = load_into_graph(records, graph)
        self.assertEqual(added, 13)
        self.assertEqual(graph.stats()["nodes.Cwe"], 13)
        edges = {(e.source, e.target) for e in graph.iter_edges(EdgeKind.CHILD_OF)}
        self.assertEqual(edges, {
            ("CWE-78", "CWE-77"),
            ("CWE-125", "CWE-119"),
            ("CWE-787", "CWE-119"),
            ("CWE-401", "CWE-404"),
            ("CWE-763", "CWE-404"),
        })

    def test_idempotent(self):
        """同じレコードの再読み込みでグラフは変わらない"""
        records, _ = parse_cwe_corpus(_read(CWE_CSV), "csv")
        graph = KnowledgeGraph()
        load_into_graph(records, graph)
        before = graph.to_bytes()
        self.assertEqual(load_into_graph(records, graph), 0)
        self.assertEqual(graph.to_bytes(), before)

    def test_frozen_graph(self):
        records, _ = parse_cwe_corpus(_read(CWE_XML), "xml")
        with self.assertRaises(FrozenGraph):
            load_into_graph(records, KnowledgeGraph().freeze())

    def test_csv_round_trip(self):
        """records_to_csv で書き出したCSVを読み戻すと同じレコードになる"""
        records, _ = parse_cwe_corpus(_read(CWE_XML), "xml")
        again, _ = parse_cwe_corpus(records_to_csv(records), "csv")
        self.assertEqual(again, records)

    def test_unresolved_parent_is_skipped(self):
        graph = KnowledgeGraph()
        record = CweRecord(id="CWE-79", name="XSS", description="script injection", parents=["CWE-74"])
        load_into_graph([record], graph)
        self.assertEqual(graph.get_node("CWE-79").kind, NodeKind.CWE)
        self.assertEqual(graph.edge_count(), 0)


class TestCanonicalCweId(unittest.TestCase):
    def test_variants(self):
        self.assertEqual(canonical_cwe_id("79"), "CWE-79")
        self.assertEqual(canonical_cwe_id("cwe-079"), "CWE-79")
        self.assertEqual(canonical_cwe_id("CWE 20"), "CWE-20")
        self.assertIsNone(canonical_cwe_id("NVD-CWE-Other"))


if __name__ == "__main__":
    unittest.main()
