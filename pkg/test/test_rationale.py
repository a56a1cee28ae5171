#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
rationale.py と prompt_manager.py のテストモジュール
"""

import json
import unittest

from hypothesis import given, settings, strategies as st

from support import CHAT_RESPONSE, synthetic_samples

from src.dataset.samples import FunctionSample
from src.distill.prompt_manager import PromptManager, get_prompt_manager, placeholders
from src.distill.rationale import (
    CVE_MASK,
    StructuredRationale,
    Verdict,
    contains_cve,
    mask_cve,
    parse_rationale,
    render_rationale,
)
from src.kg.retrieval import RetrievalContext
from src.utils.exceptions import BudgetExceeded, ParseError, TemplateMissingPlaceholder

VALID = """VERDICT: VULNERABLE
ENTITIES:
- malloc (ApiCall)
- buf (Identifier)
CLASSES:
- malloc -> MemoryManagement
- buf -> MemoryManagement
CWE: CWE-401, cwe-763
SUMMARY: The buffer allocated with malloc is never released
on the error path."""


def _recorded_content() -> str:
    with open(CHAT_RESPONSE, "r", encoding="utf-8") as f:
        return json.load(f)["choices"][0]["message"]["content"]


class TestParseRationale(unittest.TestCase):
    """構造化根拠文の解析テスト"""

    def test_parse_valid(self):
        rationale = parse_rationale(VALID)
        self.assertEqual(rationale.verdict, Verdict.VULNERABLE)
        self.assertEqual([e.name for e in rationale.entities], ["malloc", "buf"])
        self.assertEqual(rationale.class_links, ((0, "MemoryManagement"), (1, "MemoryManagement")))
        self.assertEqual(rationale.cwe_attribution, frozenset({"CWE-401", "CWE-763"}))
        self.assertEqual(rationale.summary, "The buffer allocated with malloc is never released on the error path.")

    def test_render_then_parse(self):
        rationale = parse_rationale(VALID)
        self.assertEqual(parse_rationale(render_rationale(rationale)), rationale)

    def test_missing_section_is_named(self):
        """最初に欠落しているセクション名がエラーに含まれる"""
        text = VALID.replace("CLASSES:", "LINKS:")
        with self.assertRaises(ParseError) as ctx:
            parse_rationale(text)
        self.assertEqual(ctx.exception.section, "CLASSES")

    def test_safe_with_cwe_is_rejected(self):
        text = "VERDICT: SAFE\nENTITIES:\nCLASSES:\nCWE: CWE-79\nSUMMARY: fine"
        with self.assertRaises(ParseError) as ctx:
            parse_rationale(text)
        self.assertEqual(ctx.exception.section, "CWE")

    def test_unknown_class(self):
        with self.assertRaises(ParseError):
            parse_rationale(VALID, known_classes=["InputValidation"])

    def test_class_link_to_unknown_entity(self):
        text = VALID.replace("- buf -> MemoryManagement", "- ptr -> MemoryManagement")
        with self.assertRaises(ParseError):
            parse_rationale(text)

    def test_cve_in_summary(self):
        """マスク前の記録済み応答は要約にCVE IDが残るため拒否される"""
        content = _recorded_content()
        with self.assertRaises(ParseError):
            parse_rationale(content)
        rationale = parse_rationale(mask_cve(content))
        self.assertIn(CVE_MASK, rationale.summary)
        self.assertEqual(rationale.sorted_cwes(), ["CWE-401"])


class TestCveMasking(unittest.TestCase):
    def test_case_insensitive(self):
        self.assertEqual(mask_cve("see cve-2021-3156 and CVE-2019-1234567"), f"see {CVE_MASK} and {CVE_MASK}")

    def test_long_sequence_number_is_fully_masked(self):
        self.assertEqual(mask_cve("fixed in CVE-2021-123456789."), f"fixed in {CVE_MASK}.")

    def test_non_matching(self):
        self.assertFalse(contains_cve("CWE-2021-3156 CVE-21-3156"))

    @settings(max_examples=200, deadline=None)
    @given(st.text(), st.integers(min_value=1990, max_value=2099), st.integers(min_value=1000, max_value=10 ** 12))
    def test_masked_text_has_no_cve(self, text, year, number):
        """任意のテキストに埋め込んだCVE IDはマスク後に残らない"""
        masked = mask_cve(f"{text} CVE-{year}-{number} {text}")
        self.assertFalse(contains_cve(masked))
        self.assertEqual(masked, f"{mask_cve(text)} {CVE_MASK} {mask_cve(text)}")


class TestPromptManager(unittest.TestCase):
    """プロンプトマネージャーのテスト"""

    def setUp(self):
        self.manager = get_prompt_manager()
        self.vulnerable, self.safe = synthetic_samples(2)

    def test_teacher_prompt_contains_label_and_target(self):
        prompt = self.manager.build_prompt(self.vulnerable, asserted_label=1)
        self.assertIn("Assume the function is VULNERABLE.", prompt)
        self.assertIn("CWE mapping target: CWE-787", prompt)
        self.assertIn(self.vulnerable.code, prompt)
        self.assertIn("KG CONTEXT: no KG matches", prompt)

    def test_flipped_label_has_no_target(self):
        prompt = self.manager.build_prompt(self.vulnerable, asserted_label=0)
        self.assertIn("Assume the function is SAFE.", prompt)
        self.assertIn("CWE mapping target: NONE", prompt)

    def test_inference_prompt_has_no_label(self):
        prompt = self.manager.build_prompt(self.safe, RetrievalContext.without_kg())
        self.assertNotIn("Assume the function is", prompt)
        self.assertIn("KG CONTEXT: disabled", prompt)
        self.assertEqual(placeholders(prompt), [])

    def test_code_is_not_reexpanded(self):
        sample = FunctionSample(id="t1", code="x = \"{{kg_context}}\";", label=0)
        prompt = self.manager.build_prompt(sample)
        self.assertIn("{{kg_context}}", prompt)

    def test_budget(self):
        manager = PromptManager.from_files(token_budget=50)
        with self.assertRaises(BudgetExceeded):
            manager.build_prompt(self.vulnerable)

    def test_missing_placeholder(self):
        with self.assertRaises(TemplateMissingPlaceholder):
            PromptManager("{{code}} {{kg_context}}", "{{code}} {{kg_context}}")

    def test_unknown_placeholder(self):
        teacher = "{{code}} {{kg_context}} {{asserted_label}}"
        with self.assertRaises(TemplateMissingPlaceholder):
            PromptManager(teacher, "{{code}} {{kg_context}} {{label}}")


class TestVerdict(unittest.TestCase):
    def test_labels(self):
        self.assertEqual(Verdict.from_label(1), Verdict.VULNERABLE)
        self.assertEqual(Verdict.UNPARSEABLE.label, 0)
        self.assertEqual(StructuredRationale(verdict=Verdict.SAFE).sorted_cwes(), [])


if __name__ == "__main__":
    unittest.main()
