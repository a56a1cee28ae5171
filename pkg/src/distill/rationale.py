#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
構造化根拠文モジュール

教師LLMの応答（VERDICT / ENTITIES / CLASSES / CWE / SUMMARY の行区切り形式）を
StructuredRationale に解析し、学習用テキストとして描画します。
CVE IDのマスキングもここで行います。
"""

import re
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Tuple

from src.kg.cwe_ingest import canonical_cwe_id
from src.utils.exceptions import ParseError

CVE_PATTERN = re.compile(r"CVE-\d{4}-\d{4,}", re.IGNORECASE)
CVE_MASK = "[CVE-MASKED]"

SECTIONS = ("VERDICT", "ENTITIES", "CLASSES", "CWE", "SUMMARY")

_ENTITY_LINE = re.compile(r"^-\s*(.+?)\s*\(([^()]*)\)\s*$")
_BARE_ENTITY_LINE = re.compile(r"^-\s*(.+?)\s*$")
_CLASS_LINE = re.compile(r"^-\s*(.+?)\s*->\s*(\S+)\s*$")


def mask_cve(text: str) -> str:
    """CVE ID（大文字小文字を問わない）をすべて [CVE-MASKED] に置き換える"""
    return CVE_PATTERN.sub(CVE_MASK, text)


def contains_cve(text: str) -> bool:
    return bool(CVE_PATTERN.search(text))


class Verdict(str, Enum):
    VULNERABLE = "Vulnerable"
    SAFE = "Safe"
    UNPARSEABLE = "Unparseable"

    @classmethod
    def from_label(cls, label: int) -> "Verdict":
        return cls.VULNERABLE if label == 1 else cls.SAFE

    @property
    def label(self) -> int:
        """Vulnerable→1、それ以外→0（判定不能は安全として扱う）"""
        return 1 if self == Verdict.VULNERABLE else 0

    @property
    def marker(self) -> str:
        return self.value.upper()


class RationaleEntity(NamedTuple):
    name: str
    kind: str


@dataclass(frozen=True)
class StructuredRationale:
    """
    構造化根拠文

    Attributes:
        verdict: Vulnerable または Safe
        entities: (名前, 種別) の列
        class_links: (エンティティ番号, 抽象クラスID) の列
        cwe_attribution: CWE ID集合（Safeなら空）
        summary: 要約（CVE IDを含まない）
    """
    verdict: Verdict
    entities: Tuple[RationaleEntity, ...] = ()
    class_links: Tuple[Tuple[int, str], ...] = ()
    cwe_attribution: FrozenSet[str] = frozenset()
    summary: str = ""

    def validate(self, known_classes: Optional[Iterable[str]] = None) -> None:
        """
        Raises:
            ParseError: 判定とCWEの矛盾、不正なエンティティ番号・クラスID、CVE IDの残存
        """
        if self.verdict not in (Verdict.VULNERABLE, Verdict.SAFE):
            raise ParseError(f"根拠文の判定が不正です: {self.verdict}", section="VERDICT")
        if self.verdict == Verdict.SAFE and self.cwe_attribution:
            raise ParseError(
                f"SAFE 判定なのにCWEが指定されています: {', '.join(sorted(self.cwe_attribution))}", section="CWE"
            )
        known = set(known_classes) if known_classes is not None else None
        for index, class_id in self.class_links:
            if not 0 <= index < len(self.entities):
                raise ParseError(f"クラス対応が存在しないエンティティ番号を参照しています: {index}", section="CLASSES")
            if known is not None and class_id not in known:
                raise ParseError(f"知識グラフにない抽象クラスです: {class_id}", section="CLASSES")
        if contains_cve(self.summary):
            raise ParseError("要約にCVE IDが残っています", section="SUMMARY")

    def sorted_cwes(self) -> List[str]:
        return sorted(self.cwe_attribution, key=lambda c: int(c.split("-")[1]))

    def to_dict(self) -> Dict[str, object]:
        return {
            "verdict": self.verdict.value,
            "entities": [{"name": e.name, "kind": e.kind} for e in self.entities],
            "class_links": [{"entity": index, "class": class_id} for index, class_id in self.class_links],
            "cwe_attribution": self.sorted_cwes(),
            "summary": self.summary,
        }


def _locate_sections(lines: List[str]) -> Dict[str, int]:
    positions: Dict[str, int] = {}
    for number, line in enumerate(lines):
        stripped = line.strip()
        for section in SECTIONS:
            if section not in positions and stripped.upper().startswith(f"{section}:"):
                positions[section] = number
                break
    return positions


def _inline_value(line: str) -> str:
    return line.split(":", 1)[1].strip()


def parse_rationale(raw: str, known_classes: Optional[Iterable[str]] = None) -> StructuredRationale:
    """
    教師応答を構造化根拠文に解析します。

    Args:
        raw: 応答テキスト（CVEマスク済み）
        known_classes: 知識グラフにある抽象クラスID（指定時のみ検証）

    Returns:
        StructuredRationale: 解析結果

    Raises:
        ParseError: 最初に欠落しているセクション名、または不整合の内容
    """
    lines = (raw or "").splitlines()
    positions = _locate_sections(lines)
    for section in SECTIONS:
        if section not in positions:
            raise ParseError(f"応答に {section} セクションがありません", section=section)
    order = [positions[section] for section in SECTIONS]
    if order != sorted(order):
        raise ParseError("応答のセクションの順序が不正です", section=SECTIONS[0])

    verdict_text = _inline_value(lines[positions["VERDICT"]]).upper()
    if verdict_text.startswith("VULNERABLE"):
        verdict = Verdict.VULNERABLE
    elif verdict_text.startswith("SAFE"):
        verdict = Verdict.SAFE
    else:
        raise ParseError(f"VERDICT の値が不正です: {verdict_text!r}", section="VERDICT")

    entities: List[RationaleEntity] = []
    for line in lines[positions["ENTITIES"] + 1:positions["CLASSES"]]:
        stripped = line.strip()
        if not stripped.startswith("-"):
            continue
        match = _ENTITY_LINE.match(stripped) or _BARE_ENTITY_LINE.match(stripped)
        name = match.group(1).strip()
        kind = match.group(2).strip() if match.re is _ENTITY_LINE else "other"
        if name:
            entities.append(RationaleEntity(name, kind or "other"))

    first_index: Dict[str, int] = {}
    for index, entity in enumerate(entities):
        first_index.setdefault(entity.name, index)
    class_links: List[Tuple[int, str]] = []
    for line in lines[positions["CLASSES"] + 1:positions["CWE"]]:
        stripped = line.strip()
        if not stripped.startswith("-"):
            continue
        match = _CLASS_LINE.match(stripped)
        if not match:
            raise ParseError(f"CLASSES の行を解析できません: {stripped!r}", section="CLASSES")
        entity_name, class_id = match.group(1).strip(), match.group(2).strip()
        if entity_name not in first_index:
            raise ParseError(f"CLASSES が ENTITIES にないエンティティを参照しています: {entity_name!r}", section="CLASSES")
        link = (first_index[entity_name], class_id)
        if link not in class_links:
            class_links.append(link)

    cwe_text = _inline_value(lines[positions["CWE"]])
    cwes = set()
    if cwe_text and cwe_text.upper() != "NONE":
        for token in cwe_text.split(","):
            if not token.strip():
                continue
            cwe_id = canonical_cwe_id(token.strip())
            if cwe_id is None:
                raise ParseError(f"CWE の値が不正です: {token.strip()!r}", section="CWE")
            cwes.add(cwe_id)

    summary_lines = [_inline_value(lines[positions["SUMMARY"]])]
    summary_lines += [line.strip() for line in lines[positions["SUMMARY"] + 1:]]
    summary = " ".join(part for part in summary_lines if part)

    rationale = StructuredRationale(
        verdict=verdict,
        entities=tuple(entities),
        class_links=tuple(class_links),
        cwe_attribution=frozenset(cwes),
        summary=summary,
    )
    rationale.validate(known_classes)
    return rationale


def render_rationale(rationale: StructuredRationale) -> str:
    """構造化根拠文を応答と同じセクション形式のテキストに描画する"""
    lines = [f"VERDICT: {rationale.verdict.marker}", "ENTITIES:"]
    lines += [f"- {entity.name} ({entity.kind})" for entity in rationale.entities]
    lines.append("CLASSES:")
    lines += [f"- {rationale.entities[index].name} -> {class_id}" for index, class_id in rationale.class_links]
    cwes = rationale.sorted_cwes()
    lines.append(f"CWE: {', '.join(cwes) if cwes else 'NONE'}")
    lines.append(f"SUMMARY: {rationale.summary}")
    return "\n".join(lines)
