#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
データセットの分割・バランス調整モジュール

シードに基づく決定的なシャッフルで train/val/test に分割し、
脆弱サンプルを保持したまま安全サンプルをダウンサンプリングして目標件数に揃えます。
"""

import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from src.dataset.samples import FunctionSample, cwe_sort_key
from src.utils.exceptions import ValidationError
from src.utils.logger_util import setup_logger

logger = setup_logger(__name__)


def partition_sizes(n: int, ratios: Sequence[int]) -> Tuple[int, ...]:
    """各区分を floor(n*r/Σr) とし、余りを先頭（train）に加える"""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValidationError(f"分割比は非負の整数3つ（合計が正）である必要があります: {list(ratios)}")
    total = sum(ratios)
    sizes = [n * r // total for r in ratios]
    sizes[0] += n - sum(sizes)
    return tuple(sizes)


def _cut(items: List[FunctionSample], sizes: Tuple[int, ...]) -> Tuple[List[FunctionSample], ...]:
    train_end = sizes[0]
    val_end = train_end + sizes[1]
    return items[:train_end], items[train_end:val_end], items[val_end:]


def split(
    samples: Sequence[FunctionSample],
    ratios: Sequence[int] = (8, 1, 1),
    seed: int = 42,
    stratify: bool = False,
) -> Tuple[List[FunctionSample], List[FunctionSample], List[FunctionSample]]:
    """
    サンプルを train / val / test に分割します。

    Args:
        samples: サンプル列
        ratios: (train, val, test) の比
        seed: シャッフルのシード
        stratify: True なら (ラベル, 主CWE) ごとに同じ比で分割

    Returns:
        Tuple: 互いに素で和集合が入力に等しい3区分
    """
    if not samples:
        raise ValidationError("分割するサンプルがありません")
    rng = random.Random(seed)

    if not stratify:
        items = list(samples)
        rng.shuffle(items)
        train, val, test = _cut(items, partition_sizes(len(items), ratios))
    else:
        groups: Dict[Tuple[int, str], List[FunctionSample]] = defaultdict(list)
        for sample in samples:
            groups[(sample.label, sample.primary_cwe)].append(sample)
        train, val, test = [], [], []
        for key in sorted(groups):
            items = groups[key]
            rng.shuffle(items)
            part_train, part_val, part_test = _cut(items, partition_sizes(len(items), ratios))
            train.extend(part_train)
            val.extend(part_val)
            test.extend(part_test)
        for part in (train, val, test):
            rng.shuffle(part)

    logger.info(f"データセットを分割しました: train {len(train)}、val {len(val)}、test {len(test)}")
    return train, val, test


@dataclass
class BalanceReport:
    input_total: int = 0
    excluded_no_cwe: int = 0
    positives_before: int = 0
    positives_after: int = 0
    negatives_before: int = 0
    negatives_after: int = 0
    per_cwe_before: Dict[str, int] = field(default_factory=dict)
    per_cwe_after: Dict[str, int] = field(default_factory=dict)
    eliminated_cwes: List[str] = field(default_factory=list)
    noop: bool = False
    note: str = ""

    def to_dict(self) -> Dict[str, object]:
        return {
            "input_total": self.input_total,
            "excluded_no_cwe": self.excluded_no_cwe,
            "positives_before": self.positives_before,
            "positives_after": self.positives_after,
            "negatives_before": self.negatives_before,
            "negatives_after": self.negatives_after,
            "per_cwe_before": dict(sorted(self.per_cwe_before.items(), key=lambda kv: cwe_sort_key(kv[0]))),
            "per_cwe_after": dict(sorted(self.per_cwe_after.items(), key=lambda kv: cwe_sort_key(kv[0]))),
            "eliminated_cwes": list(self.eliminated_cwes),
            "noop": self.noop,
            "note": self.note,
        }


def _per_cwe(samples: Sequence[FunctionSample]) -> Dict[str, int]:
    counts: Counter = Counter()
    for sample in samples:
        if sample.label == 1:
            counts.update(sample.cwe_ids)
    return dict(counts)


def _apportion(groups: Dict[str, List[FunctionSample]], budget: int) -> Dict[str, int]:
    """
    正例を主CWEごとに比例配分する（最大剰余法）。
    予算がカテゴリ数以上なら各カテゴリに最低1件を割り当てる。
    """
    total = sum(len(items) for items in groups.values())
    keys = sorted(groups, key=cwe_sort_key)
    quotas = {key: len(groups[key]) * budget // total for key in keys}
    if budget >= len(keys):
        for key in keys:
            quotas[key] = max(quotas[key], 1)
    while sum(quotas.values()) > budget:
        # 最低保証で超過した分は最大のカテゴリから削る
        largest = max(keys, key=lambda k: (quotas[k], -cwe_sort_key(k)))
        quotas[largest] -= 1
    remainders = sorted(
        keys,
        key=lambda k: (-(len(groups[k]) * budget % total), cwe_sort_key(k)),
    )
    index = 0
    while sum(quotas.values()) < budget:
        key = remainders[index % len(remainders)]
        if quotas[key] < len(groups[key]):
            quotas[key] += 1
        index += 1
    return quotas


def balance(
    samples: Sequence[FunctionSample],
    target_total: int = 18000,
    seed: int = 42,
) -> Tuple[List[FunctionSample], BalanceReport]:
    """
    脆弱サンプルを残し、安全サンプルを無作為に間引いて target_total 件にします。

    CWE ID を持たない脆弱サンプルは最初に除外します。脆弱サンプルだけで目標を超える場合は
    主CWEごとに比例配分して間引き、CWEカテゴリが消えないようにします。
    出力は入力の並び順を保ちます。

    Returns:
        Tuple[List[FunctionSample], BalanceReport]: 調整後のサンプルとレポート
    """
    if target_total < 1:
        raise ValidationError(f"目標件数は正の整数である必要があります: {target_total}")
    report = BalanceReport(input_total=len(samples))
    kept_input = [sample for sample in samples if sample.is_consistent]
    report.excluded_no_cwe = len(samples) - len(kept_input)
    if report.excluded_no_cwe:
        logger.warning(f"CWE IDを持たない脆弱サンプルを {report.excluded_no_cwe} 件除外しました")

    positives = [sample for sample in kept_input if sample.label == 1]
    negatives = [sample for sample in kept_input if sample.label == 0]
    report.positives_before = len(positives)
    report.negatives_before = len(negatives)
    report.per_cwe_before = _per_cwe(positives)

    if target_total >= len(kept_input):
        report.noop = True
        report.note = f"目標件数 {target_total} が入力件数 {len(kept_input)} 以上のため調整しません"
        logger.info(report.note)
        report.positives_after = len(positives)
        report.negatives_after = len(negatives)
        report.per_cwe_after = dict(report.per_cwe_before)
        return kept_input, report

    rng = random.Random(seed)
    selected: set = set()
    if len(positives) <= target_total:
        selected.update(id(sample) for sample in positives)
        for sample in rng.sample(negatives, target_total - len(positives)):
            selected.add(id(sample))
    else:
        groups: Dict[str, List[FunctionSample]] = defaultdict(list)
        for sample in positives:
            groups[sample.primary_cwe].append(sample)
        quotas = _apportion(groups, target_total)
        for key in sorted(groups, key=cwe_sort_key):
            for sample in rng.sample(groups[key], quotas[key]):
                selected.add(id(sample))
        report.note = "脆弱サンプルだけで目標件数を超えるため、主CWEごとに比例配分しました"

    result = [sample for sample in kept_input if id(sample) in selected]
    report.positives_after = sum(1 for sample in result if sample.label == 1)
    report.negatives_after = len(result) - report.positives_after
    report.per_cwe_after = _per_cwe(result)
    report.eliminated_cwes = sorted(
        (cwe for cwe in report.per_cwe_before if cwe not in report.per_cwe_after), key=cwe_sort_key
    )
    if report.eliminated_cwes:
        logger.warning(f"保持できなかったCWEカテゴリがあります: {', '.join(report.eliminated_cwes)}")
    logger.info(
        f"バランス調整しました: 脆弱 {report.positives_before}→{report.positives_after}、"
        f"安全 {report.negatives_before}→{report.negatives_after}"
    )
    return result, report
