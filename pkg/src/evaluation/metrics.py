#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
評価指標モジュール

二値判定の適合率・再現率・F1 と、CWE 単位のマルチラベル（micro / macro）指標を計算し、
JSON と整列したプレーンテキスト表で出力します。
"""

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from src.dataset.samples import FunctionSample, cwe_sort_key
from src.distill.rationale import Verdict
from src.evaluation.output_parser import extract_cwe_ids, parse_verdict
from src.utils.exceptions import EmptyInput
from src.utils.logger_util import setup_logger

logger = setup_logger(__name__)

REPORT_DECIMALS = 4


def _ratio(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator > 0 else 0.0


def f1_score(precision: float, recall: float) -> float:
    """2PR/(P+R)。P+R=0 なら0"""
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


@dataclass(frozen=True)
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)


@dataclass(frozen=True)
class BinaryMetrics:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0


def binary_metrics(pairs: Sequence[Tuple[int, Verdict]]) -> BinaryMetrics:
    """
    正例を Vulnerable とした二値指標。Unparseable は Safe として扱います。

    Raises:
        EmptyInput: 入力が空
    """
    if not pairs:
        raise EmptyInput("評価対象が空です")
    tp = fp = fn = tn = 0
    for gold, predicted in pairs:
        positive = Verdict(predicted) == Verdict.VULNERABLE
        if gold == 1 and positive:
            tp += 1
        elif gold == 1:
            fn += 1
        elif positive:
            fp += 1
        else:
            tn += 1
    counts = ClassCounts(tp, fp, fn)
    return BinaryMetrics(counts.precision, counts.recall, counts.f1, tp, fp, fn, tn)


@dataclass
class MultilabelMetrics:
    micro_p: float
    micro_r: float
    micro_f1: float
    macro_p: float
    macro_r: float
    macro_f1: float
    per_class: Dict[str, ClassCounts] = field(default_factory=dict)


def multilabel_metrics(
    pairs: Sequence[Tuple[Iterable[str], Iterable[str]]],
    restrict_to: Optional[Iterable[str]] = None,
) -> MultilabelMetrics:
    """
    CWE単位のマルチラベル指標。

    macro はクラス集合 = (いずれかの正解に現れるクラス) ∪ (いずれかの予測に現れるクラス) で平均します。

    Args:
        pairs: (正解CWE集合, 予測CWE集合) の列
        restrict_to: 指定された場合、このCWE集合の外のIDを正解・予測の両方から除く

    Raises:
        EmptyInput: 入力が空
    """
    if not pairs:
        raise EmptyInput("評価対象が空です")
    allowed: Optional[Set[str]] = set(restrict_to) if restrict_to is not None else None

    tallies: Dict[str, List[int]] = {}
    for gold_raw, pred_raw in pairs:
        gold, pred = set(gold_raw), set(pred_raw)
        if allowed is not None:
            gold &= allowed
            pred &= allowed
        for cwe in gold | pred:
            tally = tallies.setdefault(cwe, [0, 0, 0])
            if cwe in gold and cwe in pred:
                tally[0] += 1
            elif cwe in pred:
                tally[1] += 1
            else:
                tally[2] += 1

    per_class = {
        cwe: ClassCounts(*tallies[cwe])
        for cwe in sorted(tallies, key=cwe_sort_key)
    }
    micro = ClassCounts(
        sum(c.tp for c in per_class.values()),
        sum(c.fp for c in per_class.values()),
        sum(c.fn for c in per_class.values()),
    )
    n = len(per_class)
    return MultilabelMetrics(
        micro_p=micro.precision,
        micro_r=micro.recall,
        micro_f1=micro.f1,
        macro_p=sum(c.precision for c in per_class.values()) / n if n else 0.0,
        macro_r=sum(c.recall for c in per_class.values()) / n if n else 0.0,
        macro_f1=sum(c.f1 for c in per_class.values()) / n if n else 0.0,
        per_class=per_class,
    )


@dataclass
class MetricsReport:
    """
    評価レポート

    Attributes:
        binary: 二値指標
        multilabel: マルチラベル指標（per_class を含む）
        unparseable_count: 判定を取り出せなかった出力の数
        sample_count: 評価したサンプル数
        missing_predictions: 予測がなかったサンプルID
    """
    binary: BinaryMetrics
    multilabel: MultilabelMetrics
    unparseable_count: int = 0
    sample_count: int = 0
    missing_predictions: List[str] = field(default_factory=list)

    def to_dict(self, per_class: bool = True) -> Dict[str, object]:
        def r(value: float) -> float:
            return round(value, REPORT_DECIMALS)

        result: Dict[str, object] = {
            "samples": self.sample_count,
            "unparseable_count": self.unparseable_count,
            "missing_predictions": list(self.missing_predictions),
            "binary": {
                "precision": r(self.binary.precision),
                "recall": r(self.binary.recall),
                "f1": r(self.binary.f1),
                "tp": self.binary.tp,
                "fp": self.binary.fp,
                "fn": self.binary.fn,
                "tn": self.binary.tn,
            },
            "multilabel": {
                "micro_p": r(self.multilabel.micro_p),
                "micro_r": r(self.multilabel.micro_r),
                "micro_f1": r(self.multilabel.micro_f1),
                "macro_p": r(self.multilabel.macro_p),
                "macro_r": r(self.multilabel.macro_r),
                "macro_f1": r(self.multilabel.macro_f1),
            },
        }
        if per_class:
            result["per_class"] = {
                cwe: {
                    "tp": c.tp, "fp": c.fp, "fn": c.fn,
                    "precision": r(c.precision), "recall": r(c.recall), "f1": r(c.f1),
                }
                for cwe, c in self.multilabel.per_class.items()
            }
        return result

    def to_json(self, per_class: bool = True) -> str:
        return json.dumps(self.to_dict(per_class), indent=2, sort_keys=True) + "\n"

    def render_table(self, per_class: bool = False) -> str:
        """整列したプレーンテキスト表"""
        rows = [
            ("binary", self.binary.precision, self.binary.recall, self.binary.f1),
            ("micro", self.multilabel.micro_p, self.multilabel.micro_r, self.multilabel.micro_f1),
            ("macro", self.multilabel.macro_p, self.multilabel.macro_r, self.multilabel.macro_f1),
        ]
        lines = [_row(["metric", "precision", "recall", "f1"])]
        lines += [_row([name, f"{p:.4f}", f"{rc:.4f}", f"{f:.4f}"]) for name, p, rc, f in rows]
        lines.append(f"samples: {self.sample_count}  unparseable: {self.unparseable_count}")
        if per_class and self.multilabel.per_class:
            lines.append("")
            lines.append(_row(["cwe", "tp", "fp", "fn", "precision", "recall", "f1"]))
            for cwe, c in self.multilabel.per_class.items():
                lines.append(_row([cwe, str(c.tp), str(c.fp), str(c.fn),
                                   f"{c.precision:.4f}", f"{c.recall:.4f}", f"{c.f1:.4f}"]))
        return "\n".join(lines) + "\n"


def _row(cells: Sequence[str]) -> str:
    return cells[0].ljust(10) + "".join(cell.rjust(11) for cell in cells[1:])


def evaluate(
    gold: Sequence[FunctionSample],
    predictions: Sequence[Dict[str, str]],
    restrict_to: Optional[Iterable[str]] = None,
) -> MetricsReport:
    """
    正解サンプルと予測レコード {id, output_text} から評価レポートを作ります。
    予測のないサンプルは空出力（Unparseable）として扱います。

    Raises:
        EmptyInput: 正解サンプルが空
    """
    if not gold:
        raise EmptyInput("正解サンプルが空です")
    outputs = {str(record["id"]): record.get("output_text", "") or "" for record in predictions}
    unknown = sorted(set(outputs) - {sample.id for sample in gold})
    if unknown:
        logger.warning(f"正解にない予測を {len(unknown)} 件無視します")

    binary_pairs: List[Tuple[int, Verdict]] = []
    label_pairs: List[Tuple[Set[str], Set[str]]] = []
    missing: List[str] = []
    unparseable = 0
    for sample in sorted(gold, key=lambda s: s.id):
        if sample.id not in outputs:
            missing.append(sample.id)
        text = outputs.get(sample.id, "")
        verdict = parse_verdict(text)
        if verdict == Verdict.UNPARSEABLE:
            unparseable += 1
        binary_pairs.append((sample.label, verdict))
        label_pairs.append((set(sample.cwe_ids), extract_cwe_ids(text)))
    if missing:
        logger.warning(f"予測のないサンプルが {len(missing)} 件あります（判定不能として扱います）")

    report = MetricsReport(
        binary=binary_metrics(binary_pairs),
        multilabel=multilabel_metrics(label_pairs, restrict_to),
        unparseable_count=unparseable,
        sample_count=len(gold),
        missing_predictions=missing,
    )
    logger.info(
        f"評価しました: 二値F1 {report.binary.f1:.4f}、micro-F1 {report.multilabel.micro_f1:.4f}、"
        f"macro-F1 {report.multilabel.macro_f1:.4f}"
    )
    return report
