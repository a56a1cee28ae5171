#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
VulReaDパッケージ

知識グラフに導かれた脆弱性推論の蒸留・学習・評価ツールキットを提供します。
"""

__version__ = "0.1.0"

# サブパッケージをエクスポート
from . import utils
from . import config
from . import kg
from . import llm
from . import dataset
from . import distill
from . import orpo
from . import evaluation

# 主要クラスを直接エクスポート
from .kg import KnowledgeGraph, retrieve
from .distill import Distiller
from .evaluation import evaluate
from .utils import setup_logger
