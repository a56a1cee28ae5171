#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
テスト共通のヘルパー

フィクスチャのパス、合成サンプル、小さな知識グラフを作る関数を提供します。
"""

import os
import sys
from typing import Dict, List, Sequence

# 親ディレクトリをパスに追加して、srcモジュールをインポートできるようにする
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.dataset.samples import FunctionSample
from src.kg.class_mapping import add_class_nodes, load_class_definitions, map_corpus
from src.kg.cwe_ingest import load_into_graph, parse_cwe_corpus
from src.kg.knowledge_graph import EdgeKind, GraphNode, KnowledgeGraph, NodeKind, Provenance, entity_node_id
from src.utils.embedding_generator import HashEmbedder

FIXTURES_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")
CWE_CSV = os.path.join(FIXTURES_DIR, "cwe_small.csv")
CWE_XML = os.path.join(FIXTURES_DIR, "cwe_small.xml")
CHAT_RESPONSE = os.path.join(FIXTURES_DIR, "chat_response.json")

# 合成サンプル用の関数テンプレート（脆弱 / 安全）
_VULNERABLE_CODE = """#include <stdlib.h>
#include <string.h>
/* fixed upstream as CVE-2021-3156 */
char *copy_name_{n}(const char *name) {{
    char *buf = malloc(16);
    strcpy(buf, name);
    return buf;
}}
"""

_SAFE_CODE = """#include <string.h>
size_t name_length_{n}(const char *name) {{
    if (name == NULL) {{
        return 0;
    }}
    return strnlen(name, 64);
}}
"""

_CWE_CYCLE = ("CWE-787", "CWE-401", "CWE-476", "CWE-190", "CWE-22")


def synthetic_samples(count: int = 50) -> List[FunctionSample]:
    """脆弱と安全が交互に並ぶ合成サンプル。脆弱サンプルには CWE を1つ割り当てる"""
    samples = []
    for n in range(count):
        if n % 2 == 0:
            samples.append(FunctionSample(
                id=f"s{n:03d}",
                code=_VULNERABLE_CODE.format(n=n),
                label=1,
                cwe_ids=frozenset({_CWE_CYCLE[(n // 2) % len(_CWE_CYCLE)]}),
                source="synthetic",
            ))
        else:
            samples.append(FunctionSample(
                id=f"s{n:03d}",
                code=_SAFE_CODE.format(n=n),
                label=0,
                source="synthetic",
            ))
    return samples


def corpus_graph(path: str = CWE_CSV, fmt: str = "csv", mapped: bool = True) -> KnowledgeGraph:
    """フィクスチャのCWEコーパスから（必要ならクラス割り当て済みの）グラフを作る"""
    with open(path, "rb") as f:
        records, _ = parse_cwe_corpus(f, fmt)
    graph = KnowledgeGraph()
    load_into_graph(records, graph)
    if mapped:
        classes = load_class_definitions()
        add_class_nodes(graph, classes)
        map_corpus(graph, classes, HashEmbedder(32))
    return graph


def add_indicators(graph: KnowledgeGraph, indicators: Dict[str, Sequence]) -> KnowledgeGraph:
    """{エンティティ名: [(CWE ID, 重み), ...]} から IndicatorOf エッジを追加する"""
    for name, targets in indicators.items():
        node_id = entity_node_id(name)
        if not graph.has_node(node_id):
            graph.upsert_node(GraphNode(id=node_id, kind=NodeKind.ENTITY, name=name))
        for cwe_id, weight in targets:
            graph.link(node_id, EdgeKind.INDICATOR_OF, cwe_id, weight=weight, provenance=Provenance.MINED)
    return graph
