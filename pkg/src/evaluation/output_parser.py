#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
モデル出力の解析モジュール

生成された推論テキストから二値判定と CWE ID 集合を取り出します。
"""

import re
from typing import Optional, Set

from src.distill.rationale import Verdict

_VERDICT_LINE = re.compile(r"^[ \t]*VERDICT[ \t]*:[ \t]*(.*)$", re.IGNORECASE | re.MULTILINE)
# "not vulnerable" / "non-vulnerable" / "NOT_SAFE" は判定を反転する
_VERDICT_WORD = re.compile(r"\b(?:(not|non)[\s_-]+)?(vulnerable|safe)\b", re.IGNORECASE)
_CWE_TOKEN = re.compile(r"(?<![A-Za-z0-9])CWE[\s-]?(\d{1,5})(?!\d)", re.IGNORECASE)


def _word_verdict(text: str) -> Optional[Verdict]:
    match = _VERDICT_WORD.search(text)
    if not match:
        return None
    vulnerable = match.group(2).lower() == "vulnerable"
    if match.group(1):
        vulnerable = not vulnerable
    return Verdict.VULNERABLE if vulnerable else Verdict.SAFE


def parse_verdict(text: str) -> Verdict:
    """
    判定を取り出します。最初の VERDICT: 行の値を優先し（否定形は反転）、
    値から判定できなければ残りの本文で単語 "vulnerable" / "safe" の最初の出現を使います。
    どちらもなければ Unparseable。
    """
    text = text or ""
    line = _VERDICT_LINE.search(text)
    if line:
        verdict = _word_verdict(line.group(1))
        if verdict is not None:
            return verdict
        text = text[:line.start()] + text[line.end():]
    verdict = _word_verdict(text)
    return verdict if verdict is not None else Verdict.UNPARSEABLE


def extract_cwe_ids(text: str) -> Set[str]:
    """"CWE-79" / "cwe 79" / "CWE079" を "CWE-79" に正規化した集合。CVE ID には一致しない"""
    return {f"CWE-{int(number)}" for number in _CWE_TOKEN.findall(text or "")}
