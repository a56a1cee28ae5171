#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
蒸留モジュールパッケージ

プロンプトの組み立て、教師応答の構造化解析、根拠文対と選好レコードの生成を提供します。
"""

from .prompt_manager import PromptManager, build_prompt
from .rationale import StructuredRationale, Verdict, mask_cve, parse_rationale, render_rationale
from .distiller import Distiller, PreferenceRecord, RationalePair, distill_sample
