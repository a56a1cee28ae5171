#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
根拠文蒸留モジュール

教師LLMに真のラベルと反転したラベルの2通りでプロンプトを送り、
妥当な根拠文 r⁺ と欠陥のある根拠文 r⁻ の対を作ります。
対から (prompt, chosen, rejected) の選好レコードを組み立て、
生徒モデルによる推論（予測ファイルの作成）も行います。
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from src.dataset.samples import FunctionSample
from src.distill.prompt_manager import PromptManager, get_prompt_manager
from src.distill.rationale import (
    StructuredRationale,
    Verdict,
    contains_cve,
    mask_cve,
    parse_rationale,
    render_rationale,
)
from src.kg.entity_extractor import EntityExtractor, entities_from_rationale
from src.kg.knowledge_graph import CLASS_PREFIX, KnowledgeGraph, NodeKind
from src.kg.retrieval import DEFAULT_MAX_BLOCK_CHARS, RetrievalContext, retrieve
from src.llm.llm_client import ChatRequest, LlmBackend
from src.utils.exceptions import (
    BackendError,
    BudgetExceeded,
    ConfigError,
    ContrastCollapse,
    GraphNotFrozen,
    MissingSample,
    ParseError,
)
from src.utils.logger_util import setup_logger

logger = setup_logger(__name__)

ENTITY_MODES = ("lexical", "llm")


@dataclass(frozen=True)
class RationalePair:
    """
    1サンプルに対する根拠文の対

    Attributes:
        sample_id: サンプルID
        valid: 真のラベルに基づく根拠文 r⁺
        flawed: 反転したラベルに基づく根拠文 r⁻
        teacher_model: 教師モデル名
        valid_raw: r⁺ の応答テキスト（CVEマスク済み）
        flawed_raw: r⁻ の応答テキスト（CVEマスク済み）
    """
    sample_id: str
    valid: StructuredRationale
    flawed: StructuredRationale
    teacher_model: str
    valid_raw: str
    flawed_raw: str

    def to_dict(self) -> Dict[str, object]:
        return {
            "id": self.sample_id,
            "teacher_model": self.teacher_model,
            "valid": self.valid.to_dict(),
            "flawed": self.flawed.to_dict(),
            "valid_raw": self.valid_raw,
            "flawed_raw": self.flawed_raw,
        }

    @classmethod
    def from_dict(cls, record: Dict[str, object]) -> "RationalePair":
        """保存済みの対を読み戻す（構造は応答テキストから再解析する）"""
        return cls(
            sample_id=str(record["id"]),
            valid=parse_rationale(str(record["valid_raw"])),
            flawed=parse_rationale(str(record["flawed_raw"])),
            teacher_model=str(record.get("teacher_model", "")),
            valid_raw=str(record["valid_raw"]),
            flawed_raw=str(record["flawed_raw"]),
        )


@dataclass(frozen=True)
class PreferenceRecord:
    sample_id: str
    prompt: str
    chosen: str
    rejected: str

    def to_dict(self) -> Dict[str, str]:
        return {"id": self.sample_id, "prompt": self.prompt, "chosen": self.chosen, "rejected": self.rejected}


@dataclass(frozen=True)
class QuarantineEntry:
    sample_id: str
    stage: str
    error: str

    def to_dict(self) -> Dict[str, str]:
        return {"id": self.sample_id, "stage": self.stage, "error": self.error}


@dataclass
class DistillResult:
    pairs: List[RationalePair] = field(default_factory=list)
    quarantine: List[QuarantineEntry] = field(default_factory=list)


@dataclass
class PreferenceReport:
    emitted: int = 0
    contrast_collapsed: int = 0
    collapsed_ids: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            "emitted": self.emitted,
            "contrast_collapsed": self.contrast_collapsed,
            "collapsed_ids": list(self.collapsed_ids),
        }


def known_class_ids(graph: Optional[KnowledgeGraph]) -> Optional[List[str]]:
    """グラフにある抽象クラスID（クラスノードがなければ None で検証しない）"""
    if graph is None:
        return None
    ids = [
        node.attributes.get("class_id") or node.id[len(CLASS_PREFIX):]
        for node in graph.iter_nodes(NodeKind.ABSTRACT_CLASS)
    ]
    return ids or None


class Distiller:
    """
    教師LLMによる根拠文蒸留と生徒LLMによる推論を行うクラス

    バックエンドへの同時リクエスト数は parallel で制限し、
    結果は完了順に関係なくサンプルID順に並べます。
    """

    def __init__(
        self,
        backend: LlmBackend,
        graph: Optional[KnowledgeGraph],
        teacher_model: str = "Qwen2.5-32B-Instruct",
        prompt_manager: Optional[PromptManager] = None,
        max_tokens: int = 1024,
        k: int = 5,
        max_block_chars: int = DEFAULT_MAX_BLOCK_CHARS,
        no_kg: bool = False,
        extractor: Optional[EntityExtractor] = None,
        seed: Optional[int] = None,
        entity_mode: str = "lexical",
    ):
        """
        Args:
            backend: LLMバックエンド
            graph: 凍結済みの知識グラフ（no_kg の場合は None 可）
            teacher_model: 教師モデル名
            prompt_manager: プロンプトマネージャー（Noneなら同梱テンプレート）
            max_tokens: 生成トークン上限
            k: 候補CWE数
            max_block_chars: KGコンテキストの文字数上限
            no_kg: True なら KG コンテキストを使わない
            extractor: エンティティ抽出器
            seed: リクエストに付与するシード
            entity_mode: "lexical" ならコードから字句抽出、"llm" なら教師の根拠文の ENTITIES を選好プロンプトの検索に使う
        """
        if not no_kg:
            if graph is None:
                raise GraphNotFrozen("KGコンテキストを使う蒸留には知識グラフが必要です")
            if not graph.frozen:
                raise GraphNotFrozen("蒸留には凍結済みの知識グラフが必要です")
        self.backend = backend
        self.graph = graph
        self.teacher_model = teacher_model
        self.prompt_manager = prompt_manager or get_prompt_manager()
        self.max_tokens = max_tokens
        self.k = k
        self.max_block_chars = max_block_chars
        self.no_kg = no_kg
        self.extractor = extractor or EntityExtractor.from_files()
        self.seed = seed
        if entity_mode not in ENTITY_MODES:
            raise ConfigError(f"未知のエンティティ抽出モードです: {entity_mode}")
        self.entity_mode = entity_mode
        self.known_classes = known_class_ids(graph)

    def context_for(self, sample: FunctionSample, entities_hint: Optional[StructuredRationale] = None) -> RetrievalContext:
        """
        サンプルのKGコンテキストを検索します。

        Args:
            sample: 対象サンプル
            entities_hint: 指定された場合は根拠文の ENTITIES をエンティティとして使う（LLM抽出モード）
        """
        if self.no_kg:
            return RetrievalContext.without_kg()
        if entities_hint is not None:
            entities = entities_from_rationale(entities_hint.entities)
        else:
            entities = self.extractor.extract(sample.code)
        return retrieve(self.graph, entities, self.k, self.max_block_chars)

    def _ask(self, prompt: str, model: str) -> str:
        request = ChatRequest.user(model, prompt, max_tokens=self.max_tokens, seed=self.seed)
        response = self.backend.chat(request)
        return mask_cve(response.content)

    def _rationale(self, prompt: str, expected: Verdict, role: str, sample_id: str) -> Tuple[StructuredRationale, str]:
        raw = self._ask(prompt, self.teacher_model)
        try:
            rationale = parse_rationale(raw, self.known_classes)
        except ParseError as e:
            raise ParseError(f"サンプル {sample_id} の {role} 応答: {e}", section=e.section) from e
        if rationale.verdict != expected:
            raise ParseError(
                f"サンプル {sample_id} の {role} 応答の判定 {rationale.verdict.value} が指定ラベル {expected.value} と一致しません",
                section="VERDICT",
            )
        return rationale, raw

    def distill_sample(self, sample: FunctionSample, context: Optional[RetrievalContext] = None) -> RationalePair:
        """
        1サンプルについて r⁺（真のラベル）と r⁻（反転ラベル）を生成します。

        Raises:
            BackendError: バックエンドの再試行上限を超えた
            ParseError: 応答から構造化セクションを取り出せない、または判定が指定ラベルと異なる
            BudgetExceeded: プロンプトがトークン予算を超える
        """
        context = context or self.context_for(sample)
        flipped = 1 - sample.label
        valid_prompt = self.prompt_manager.build_prompt(sample, context, asserted_label=sample.label)
        flawed_prompt = self.prompt_manager.build_prompt(sample, context, asserted_label=flipped)
        valid, valid_raw = self._rationale(valid_prompt, Verdict.from_label(sample.label), "valid", sample.id)
        flawed, flawed_raw = self._rationale(flawed_prompt, Verdict.from_label(flipped), "flawed", sample.id)
        logger.debug(f"サンプル {sample.id} の根拠文対を生成しました")
        return RationalePair(
            sample_id=sample.id,
            valid=valid,
            flawed=flawed,
            teacher_model=self.teacher_model,
            valid_raw=valid_raw,
            flawed_raw=flawed_raw,
        )

    def _run_parallel(
        self,
        samples: Sequence[FunctionSample],
        task: Callable[[FunctionSample], object],
        parallel: int,
    ) -> Tuple[Dict[str, object], List[QuarantineEntry]]:
        results: Dict[str, object] = {}
        quarantine: List[QuarantineEntry] = []

        def _guarded(sample: FunctionSample):
            try:
                return sample.id, task(sample), None
            except BudgetExceeded as e:
                return sample.id, None, QuarantineEntry(sample.id, "prompt", str(e))
            except ParseError as e:
                return sample.id, None, QuarantineEntry(sample.id, "parse", str(e))
            except BackendError as e:
                return sample.id, None, QuarantineEntry(sample.id, "backend", str(e))

        with ThreadPoolExecutor(max_workers=max(1, parallel)) as executor:
            for sample_id, result, entry in executor.map(_guarded, samples):
                if entry is not None:
                    logger.warning(f"サンプル {sample_id} を隔離しました（{entry.stage}）: {entry.error}")
                    quarantine.append(entry)
                else:
                    results[sample_id] = result
        quarantine.sort(key=lambda e: e.sample_id)
        return results, quarantine

    def distill_corpus(self, samples: Sequence[FunctionSample], parallel: int = 4) -> DistillResult:
        """
        全サンプルを蒸留します。失敗したサンプルは捨てずに隔離リストに記録します。

        Returns:
            DistillResult: サンプルID順の根拠文対と隔離リスト
        """
        logger.info(f"{len(samples)} 件のサンプルを蒸留します（並列数 {parallel}）")
        results, quarantine = self._run_parallel(samples, self.distill_sample, parallel)
        pairs = [results[sample_id] for sample_id in sorted(results)]
        logger.info(f"蒸留が完了しました: 根拠文対 {len(pairs)} 件、隔離 {len(quarantine)} 件")
        return DistillResult(pairs=pairs, quarantine=quarantine)

    def inference_prompt(self, sample: FunctionSample, context: Optional[RetrievalContext] = None) -> str:
        return self.prompt_manager.build_prompt(sample, context or self.context_for(sample), asserted_label=None)

    def to_preference_records(
        self,
        pairs: Sequence[RationalePair],
        samples: Sequence[FunctionSample],
    ) -> Tuple[List[PreferenceRecord], PreferenceReport]:
        """
        根拠文対から選好レコードを作ります。prompt はラベル指定のない推論用プロンプトです。

        Raises:
            MissingSample: 対に対応するサンプルがない
        """
        by_id = {sample.id: sample for sample in samples}
        report = PreferenceReport()
        records: List[PreferenceRecord] = []
        for pair in sorted(pairs, key=lambda p: p.sample_id):
            sample = by_id.get(pair.sample_id)
            if sample is None:
                raise MissingSample(f"根拠文対に対応するサンプルがありません: {pair.sample_id}")
            try:
                hint = pair.valid if self.entity_mode == "llm" else None
                prompt = self.inference_prompt(sample, self.context_for(sample, hint))
                records.append(build_preference_record(pair, prompt))
            except ContrastCollapse as e:
                report.contrast_collapsed += 1
                report.collapsed_ids.append(pair.sample_id)
                logger.warning(str(e))
        report.emitted = len(records)
        logger.info(f"選好レコードを {report.emitted} 件作成しました（chosen=rejected で除外 {report.contrast_collapsed} 件）")
        return records, report

    def predict_samples(
        self,
        samples: Sequence[FunctionSample],
        student_model: str,
        parallel: int = 4,
    ) -> Tuple[List[Dict[str, str]], List[QuarantineEntry]]:
        """
        生徒モデルで推論し、予測レコード {id, output_text} をサンプルID順に返します。
        失敗したサンプルは output_text を空にして隔離リストにも記録します。
        """

        def _predict(sample: FunctionSample) -> str:
            return self._ask(self.inference_prompt(sample), student_model)

        results, quarantine = self._run_parallel(samples, _predict, parallel)
        failed = {entry.sample_id for entry in quarantine}
        predictions = [
            {"id": sample.id, "output_text": "" if sample.id in failed else results[sample.id]}
            for sample in sorted(samples, key=lambda s: s.id)
        ]
        logger.info(f"推論が完了しました: {len(predictions)} 件（失敗 {len(failed)} 件）")
        return predictions, quarantine


def build_preference_record(pair: RationalePair, prompt: str) -> PreferenceRecord:
    """
    Raises:
        ContrastCollapse: chosen と rejected が同一
    """
    chosen = render_rationale(pair.valid)
    rejected = render_rationale(pair.flawed)
    if chosen == rejected:
        raise ContrastCollapse(f"サンプル {pair.sample_id} の chosen と rejected が同一です")
    if contains_cve(prompt):
        prompt = mask_cve(prompt)
    return PreferenceRecord(sample_id=pair.sample_id, prompt=prompt, chosen=chosen, rejected=rejected)


def distill_sample(
    sample: FunctionSample,
    backend: LlmBackend,
    graph: KnowledgeGraph,
    **options,
) -> RationalePair:
    """Distiller を作って1サンプルを蒸留する"""
    return Distiller(backend, graph, **options).distill_sample(sample)
