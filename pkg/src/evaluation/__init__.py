#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
評価モジュールパッケージ
"""

from .output_parser import extract_cwe_ids, parse_verdict
from .metrics import MetricsReport, binary_metrics, evaluate, multilabel_metrics
