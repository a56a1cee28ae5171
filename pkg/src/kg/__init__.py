#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
知識グラフモジュールパッケージ

CWEコーパスの取り込み、抽象クラスへの割り当て、コードエンティティの抽出、
グラフ検索と拡張を提供します。
"""

from .knowledge_graph import Direction, EdgeKind, GraphEdge, GraphNode, KnowledgeGraph, NodeKind, Provenance
from .cwe_ingest import CweRecord, IngestReport, load_into_graph, parse_cwe_corpus
from .class_mapping import AbstractClassDef, load_class_definitions, map_corpus
from .entity_extractor import CodeEntity, EntityKind, EntityExtractor, extract_entities
from .retrieval import AugmentReport, RetrievalContext, augment, retrieve
