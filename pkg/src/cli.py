#!/usr/bin/env python
"""
VulReaD CLI

知識グラフの構築、根拠文の蒸留、ORPOの検証、検索の確認、評価を
段階ごとのサブコマンドとして実行するコマンドラインインターフェース

終了コード: 0 成功 / 1 入力・設定の検証エラー / 2 実行時・バックエンドのエラー
"""

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from dotenv import load_dotenv

from src.config.config_manager import ConfigManager, PipelineConfig
from src.dataset.samples import (
    PUBLIC_SOURCES,
    FunctionSample,
    load_public_dataset,
    read_jsonl,
    read_samples,
    write_jsonl,
    write_samples,
)
from src.dataset.splitting import balance, split
from src.distill.distiller import ENTITY_MODES, Distiller, RationalePair
from src.distill.prompt_manager import PromptManager
from src.evaluation.metrics import evaluate
from src.kg.class_mapping import add_class_nodes, load_class_definitions, map_corpus
from src.kg.cwe_ingest import CorpusFormat, canonical_cwe_id, load_into_graph, parse_cwe_corpus
from src.kg.entity_extractor import EntityExtractor
from src.kg.knowledge_graph import KnowledgeGraph
from src.kg.retrieval import augment, retrieve
from src.llm.llm_client import HttpChatBackend, LlmBackend, create_backend
from src.orpo.losses import OrpoConfig
from src.orpo.toy_model import (
    ToyLmParams,
    audit_rows,
    grad_check,
    synthetic_preference_set,
    train_toy,
)
from src.utils.embedding_generator import CachedEmbedder, EmbeddingProvider, create_embedder
from src.utils.exceptions import ConfigError, RuntimeFailure, ValidationError, VulReadError
from src.utils.logger_util import setup_logger
from src.utils.manifest import RunManifest

logger = setup_logger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

GRAD_CHECK_TOLERANCE = 1e-4


@dataclass
class CliContext:
    """
    1回の実行で共有する設定・バックエンド・マニフェスト
    """
    manager: ConfigManager
    manifest: RunManifest
    manifest_dir: Optional[str] = None
    _backend: Optional[LlmBackend] = field(default=None, repr=False)
    _embedder: Optional[EmbeddingProvider] = field(default=None, repr=False)

    @property
    def seed(self) -> int:
        return int(self.manager.get("seed", 42))

    @property
    def parallel(self) -> int:
        return int(self.manager.get("backend.parallel", 4))

    @property
    def no_kg(self) -> bool:
        return bool(self.manager.get("distill.no_kg", False))

    def path(self, value: Optional[str], key: str) -> str:
        """
        入力パスを解決して存在を確認し、マニフェストに記録します。
        value が None なら設定の paths.<key> を使います。
        """
        resolved = value or self.manager.get(f"paths.{key}")
        if not resolved:
            raise ConfigError(f"入力 '{key}' が指定されていません")
        if not Path(resolved).is_file():
            raise ConfigError(f"入力ファイル '{resolved}' が見つかりません")
        self.manifest.add_inputs([resolved])
        return str(resolved)

    def output(self, path: str) -> str:
        """出力パスを記録し、親ディレクトリを作成する。マニフェストは最初の出力の隣に置く"""
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        self.manifest.add_output(str(target))
        if self.manifest_dir is None:
            self.manifest_dir = str(target.parent)
        return str(target)

    def backend(self) -> LlmBackend:
        if self._backend is None:
            self._backend = create_backend(self.manager.get_backend_config(), seed=self.seed)
        return self._backend

    def embedder(self) -> EmbeddingProvider:
        if self._embedder is None:
            config = self.manager.get_embedding_config()
            http = self.backend() if config.get("backend") == "http" else None
            if http is not None and not isinstance(http, HttpChatBackend):
                raise ConfigError("埋め込みバックエンド 'http' を使うには --backend http が必要です")
            self._embedder = create_embedder(config, http)
        return self._embedder

    def flush_embedder(self) -> None:
        if isinstance(self._embedder, CachedEmbedder):
            self._embedder.flush()

    def load_graph(self, path: Optional[str], freeze: bool = True) -> KnowledgeGraph:
        graph = KnowledgeGraph.load(self.path(path, "kg"))
        return graph.freeze() if freeze else graph

    def prompt_manager(self) -> PromptManager:
        backend = self.manager.get_backend_config()
        return PromptManager.from_files(
            self.path(None, "teacher_template"),
            self.path(None, "inference_template"),
            token_budget=backend.get("token_budget", 4096),
            chars_per_token=int(backend.get("chars_per_token", 4)),
        )

    def extractor(self) -> EntityExtractor:
        return EntityExtractor.from_files(self.path(None, "stoplist"), self.path(None, "known_libraries"))

    def distiller(self, graph: Optional[KnowledgeGraph], entity_mode: Optional[str] = None) -> Distiller:
        backend = self.manager.get_backend_config()
        retrieval = self.manager.get_retrieval_config()
        return Distiller(
            self.backend(),
            graph,
            teacher_model=backend.get("teacher_model"),
            prompt_manager=self.prompt_manager(),
            max_tokens=int(backend.get("max_tokens", 1024)),
            k=int(retrieval.get("k", 5)),
            max_block_chars=int(retrieval.get("max_block_chars", 1200)),
            no_kg=self.no_kg,
            extractor=self.extractor(),
            seed=self.seed,
            entity_mode=entity_mode or self.manager.get("distill.entity_mode", "lexical"),
        )


def _print_json(document: Any) -> None:
    print(json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False))


def _write_json(path: str, document: Any) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def _print_stats(graph: KnowledgeGraph) -> None:
    stats = graph.stats()
    print("知識グラフ:")
    for key in sorted(stats):
        print(f"- {key}: {stats[key]}")


def _graph_or_none(ctx: CliContext, path: Optional[str]) -> Optional[KnowledgeGraph]:
    if ctx.no_kg:
        logger.info("KGなしモードのため知識グラフを読み込みません")
        return None
    return ctx.load_graph(path)


# ----------------------------------------------------------------------
# kg
# ----------------------------------------------------------------------
def cmd_kg_build(ctx: CliContext, args: argparse.Namespace) -> int:
    """CWEコーパスを読み込み、抽象クラスに割り当てた知識グラフを作る"""
    corpus_path = ctx.path(args.cwe, "cwe_corpus")
    fmt = args.format or (CorpusFormat.CSV.value if corpus_path.lower().endswith(".csv") else CorpusFormat.XML.value)
    with open(corpus_path, "rb") as f:
        records, report = parse_cwe_corpus(f, fmt)

    graph = KnowledgeGraph()
    if report.version:
        graph.set_attribute("cwe_version", report.version)
    load_into_graph(records, graph, report)
    print(f"CWEを {report.parsed} 件読み込みました（説明なし {report.dropped_empty_description}、"
          f"非推奨 {report.dropped_deprecated}、未解決の親リンク {report.dangling_parent_links}）")

    if not args.no_map:
        classes = load_class_definitions(ctx.path(args.classes, "classes"))
        add_class_nodes(graph, classes)
        mapping = map_corpus(graph, classes, ctx.embedder())
        ctx.flush_embedder()
        print(f"クラス割り当て: キーワード {mapping.keyword_assigned} 件、埋め込み {mapping.embedding_assigned} 件")

    graph.save(ctx.output(args.output))
    _print_stats(graph)
    return EXIT_OK


def cmd_kg_map(ctx: CliContext, args: argparse.Namespace) -> int:
    """既存グラフのCweノードを抽象クラスに割り当て直す"""
    graph = ctx.load_graph(args.kg, freeze=False)
    classes = load_class_definitions(ctx.path(args.classes, "classes"))
    add_class_nodes(graph, classes)
    mapping = map_corpus(graph, classes, ctx.embedder())
    ctx.flush_embedder()
    graph.save(ctx.output(args.output))
    if args.report:
        _write_json(ctx.output(args.report), mapping.to_dict())
    print(f"クラス割り当て: キーワード {mapping.keyword_assigned} 件、埋め込み {mapping.embedding_assigned} 件")
    _print_stats(graph)
    return EXIT_OK


def cmd_kg_augment(ctx: CliContext, args: argparse.Namespace) -> int:
    """蒸留済みの根拠文対からエンティティをグラフに追加する"""
    graph = ctx.load_graph(args.kg, freeze=False)
    samples = {sample.id: sample for sample in read_samples(ctx.path(args.samples, "samples"))}
    rationales = []
    for record in read_jsonl(ctx.path(args.pairs, "pairs")):
        pair = RationalePair.from_dict(record)
        sample = samples.get(pair.sample_id)
        if sample is None:
            logger.warning(f"根拠文対 {pair.sample_id} に対応するサンプルがないためスキップします")
            continue
        rationales.append((pair.valid, sample))

    retrieval = ctx.manager.get_retrieval_config()
    report = augment(
        graph,
        rationales,
        min_count=args.min_count if args.min_count is not None else int(retrieval.get("min_count", 3)),
        min_similarity=(
            args.min_similarity if args.min_similarity is not None else float(retrieval.get("min_similarity", 0.5))
        ),
        embedder=ctx.embedder() if args.embedding_fallback else None,
    )
    ctx.flush_embedder()
    graph.save(ctx.output(args.output))
    print(f"エンティティ {report.entities_added} 件、エッジ {report.edges_added} 件を追加、"
          f"{report.edges_updated} 件を更新しました")
    _print_stats(graph)
    return EXIT_OK


def cmd_kg_export(ctx: CliContext, args: argparse.Namespace) -> int:
    """グラフをグラフDB投入用の文に書き出す"""
    graph = ctx.load_graph(args.kg)
    statements = graph.export_statements()
    with open(ctx.output(args.output), "w", encoding="utf-8", newline="\n") as f:
        for statement in statements:
            f.write(statement + "\n")
    print(f"{len(statements)} 文を書き出しました: {args.output}")
    return EXIT_OK


# ----------------------------------------------------------------------
# distill / prefs / predict / retrieve
# ----------------------------------------------------------------------
def cmd_distill(ctx: CliContext, args: argparse.Namespace) -> int:
    samples = read_samples(ctx.path(args.samples, "samples"))
    distiller = ctx.distiller(_graph_or_none(ctx, args.kg))
    result = distiller.distill_corpus(samples, parallel=ctx.parallel)

    output = ctx.output(args.output)
    write_jsonl(output, (pair.to_dict() for pair in result.pairs))
    quarantine_path = args.quarantine or str(
        Path(output).parent / ctx.manager.get("distill.quarantine_file", "quarantine.jsonl")
    )
    write_jsonl(ctx.output(quarantine_path), (entry.to_dict() for entry in result.quarantine))
    print(f"根拠文対 {len(result.pairs)} 件を書き出しました: {output}（隔離 {len(result.quarantine)} 件: {quarantine_path}）")
    return EXIT_OK


def cmd_prefs_export(ctx: CliContext, args: argparse.Namespace) -> int:
    samples = read_samples(ctx.path(args.samples, "samples"))
    pairs = [RationalePair.from_dict(record) for record in read_jsonl(ctx.path(args.pairs, "pairs"))]
    distiller = ctx.distiller(_graph_or_none(ctx, args.kg), entity_mode=args.entity_mode)
    records, report = distiller.to_preference_records(pairs, samples)
    write_jsonl(ctx.output(args.output), (record.to_dict() for record in records))
    print(f"選好レコード {report.emitted} 件を書き出しました: {args.output}（除外 {report.contrast_collapsed} 件）")
    return EXIT_OK


def cmd_predict(ctx: CliContext, args: argparse.Namespace) -> int:
    samples = read_samples(ctx.path(args.samples, "samples"), strict=False)
    distiller = ctx.distiller(_graph_or_none(ctx, args.kg))
    student = ctx.manager.get("backend.student_model")
    predictions, quarantine = distiller.predict_samples(samples, student, parallel=ctx.parallel)
    output = ctx.output(args.output)
    write_jsonl(output, predictions)
    if quarantine:
        quarantine_path = str(Path(output).parent / ctx.manager.get("distill.quarantine_file", "quarantine.jsonl"))
        write_jsonl(ctx.output(quarantine_path), (entry.to_dict() for entry in quarantine))
    print(f"予測 {len(predictions)} 件を書き出しました: {output}（失敗 {len(quarantine)} 件）")
    return EXIT_OK


def cmd_retrieve(ctx: CliContext, args: argparse.Namespace) -> int:
    """コードに対するKGコンテキストを表示する"""
    if args.code:
        with open(ctx.path(args.code, "code"), "r", encoding="utf-8") as f:
            code = f.read()
    else:
        if not args.id:
            raise ConfigError("--code か --samples と --id のどちらかを指定してください")
        by_id = {sample.id: sample for sample in read_samples(ctx.path(args.samples, "samples"), strict=False)}
        if args.id not in by_id:
            raise ValidationError(f"サンプル {args.id} が見つかりません")
        code = by_id[args.id].code

    graph = ctx.load_graph(args.kg)
    retrieval = ctx.manager.get_retrieval_config()
    context = retrieve(
        graph,
        ctx.extractor().extract(code),
        k=args.k or int(retrieval.get("k", 5)),
        max_block_chars=int(retrieval.get("max_block_chars", 1200)),
    )
    if args.json:
        _print_json(context.to_dict())
    else:
        print(context.rendered)
    return EXIT_OK


# ----------------------------------------------------------------------
# eval / split / balance / dataset
# ----------------------------------------------------------------------
def _read_cwe_subset(path: str) -> List[str]:
    subset: List[str] = []
    with open(path, "r", encoding="utf-8") as f:
        for token in f.read().replace(",", "\n").split():
            cwe = canonical_cwe_id(token)
            if cwe is None:
                raise ValidationError(f"CWE IDとして解釈できません: {token}")
            subset.append(cwe)
    if not subset:
        raise ValidationError(f"CWEサブセットが空です: {path}")
    return subset


def cmd_eval(ctx: CliContext, args: argparse.Namespace) -> int:
    gold = read_samples(ctx.path(args.gold, "gold"))
    predictions = read_jsonl(ctx.path(args.pred, "pred"))
    subset = _read_cwe_subset(ctx.path(args.cwe_subset, "cwe_subset")) if args.cwe_subset else None
    report = evaluate(gold, predictions, restrict_to=subset)
    if args.output:
        with open(ctx.output(args.output), "w", encoding="utf-8", newline="\n") as f:
            f.write(report.to_json(per_class=args.per_class))
    print(report.render_table(per_class=args.per_class), end="")
    return EXIT_OK


def cmd_split(ctx: CliContext, args: argparse.Namespace) -> int:
    samples = read_samples(ctx.path(args.samples, "samples"))
    config = ctx.manager.get("split", {})
    ratios = args.ratios or config.get("ratios", [8, 1, 1])
    stratify = args.stratify or bool(config.get("stratify", False))
    parts = split(samples, ratios=ratios, seed=ctx.seed, stratify=stratify)
    for name, part in zip(("train", "val", "test"), parts):
        write_samples(ctx.output(str(Path(args.output) / f"{name}.jsonl")), part)
    print(f"分割しました: train {len(parts[0])} / val {len(parts[1])} / test {len(parts[2])}")
    return EXIT_OK


def cmd_balance(ctx: CliContext, args: argparse.Namespace) -> int:
    samples = read_samples(ctx.path(args.samples, "samples"), strict=False)
    target = args.target or int(ctx.manager.get("balance.target_total", 18000))
    balanced, report = balance(samples, target_total=target, seed=ctx.seed)
    output = ctx.output(args.output)
    write_samples(output, balanced)
    report_path = args.report or str(Path(output).with_suffix(".report.json"))
    _write_json(ctx.output(report_path), report.to_dict())
    print(f"調整しました: {report.input_total} → {len(balanced)} 件"
          f"（脆弱 {report.positives_after}、安全 {report.negatives_after}）")
    if report.note:
        print(report.note)
    return EXIT_OK


def cmd_dataset_import(ctx: CliContext, args: argparse.Namespace) -> int:
    samples, report = load_public_dataset(ctx.path(args.input, "input"), args.source, language=args.language)
    write_samples(ctx.output(args.output), samples)
    _print_json(report.to_dict())
    return EXIT_OK


# ----------------------------------------------------------------------
# orpo
# ----------------------------------------------------------------------
def _orpo_config(ctx: CliContext, args: argparse.Namespace) -> OrpoConfig:
    value = getattr(args, "lambda_", None)
    return OrpoConfig(lambda_=float(value if value is not None else ctx.manager.get("orpo.lambda", 0.1)))


def _orpo_seed(ctx: CliContext, args: argparse.Namespace) -> int:
    """--seed > orpo.seed > seed の順でトイ実験のシードを決め、マニフェストに記録する"""
    if getattr(args, "seed", None) is not None:
        seed = int(args.seed)
    else:
        configured = ctx.manager.get("orpo.seed")
        seed = int(configured) if configured is not None else ctx.seed
    ctx.manifest.seed = seed
    return seed


def cmd_orpo_verify(ctx: CliContext, args: argparse.Namespace) -> int:
    """トイモデルで解析的勾配と差分勾配を比較する"""
    config = _orpo_config(ctx, args)
    seed = _orpo_seed(ctx, args)
    pairs = synthetic_preference_set(args.pairs, args.vocab, seed=seed)
    params = ToyLmParams.random(args.vocab, seed=seed)
    error = grad_check(params, pairs, config)
    print(f"max grad-check error: {error:.3e}")
    if error >= GRAD_CHECK_TOLERANCE:
        raise RuntimeFailure(f"勾配の相対誤差 {error:.3e} が許容値 {GRAD_CHECK_TOLERANCE:g} を超えました")
    return EXIT_OK


def cmd_orpo_toy_train(ctx: CliContext, args: argparse.Namespace) -> int:
    config = _orpo_config(ctx, args)
    orpo = ctx.manager.get_orpo_config()
    seed = _orpo_seed(ctx, args)
    pairs = synthetic_preference_set(args.pairs, args.vocab, seed=seed)
    result = train_toy(
        pairs,
        config,
        learning_rate=args.learning_rate or float(orpo.get("learning_rate", 0.01)),
        steps=args.steps or int(orpo.get("steps", 200)),
        vocab_size=args.vocab,
        seed=seed,
    )
    if args.audit:
        write_jsonl(ctx.output(args.audit), audit_rows(result.params, pairs, config))
    if args.output:
        _write_json(ctx.output(args.output), {
            "losses": result.losses,
            "separation_before": result.separation_before,
            "separation_after": result.separation_after,
            "clamped": result.clamped,
        })
    first = result.losses[0] if result.losses else 0.0
    last = result.losses[-1] if result.losses else 0.0
    print(f"損失: {first:.6f} → {last:.6f}")
    print(f"分離率: {result.separation_before:.2f} → {result.separation_after:.2f}")
    return EXIT_OK


# ----------------------------------------------------------------------
# パーサー
# ----------------------------------------------------------------------
def _add_global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # サブコマンドの後ろに書いた場合も受け付ける
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="設定ファイル（JSON）のパス")
    parser.add_argument("--seed", type=int, default=default, help="乱数シード（デフォルト42）")
    parser.add_argument("--parallel", type=int, default=default, help="バックエンドへの同時リクエスト数")
    parser.add_argument("--backend", choices=["mock", "http"], default=default, help="LLMバックエンド")
    parser.add_argument("--no-kg", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="KGコンテキストを使わない（比較実験用）")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vulread",
        description="VulReaD CLI - 知識グラフに導かれた脆弱性推論の蒸留と評価を行うためのコマンドラインインターフェース",
    )
    _add_global_options(parser, suppress=False)
    subparsers = parser.add_subparsers(dest="command", help="実行するコマンド")

    def leaf(sub, name: str, handler: Callable, help_text: str) -> argparse.ArgumentParser:
        child = sub.add_parser(name, help=help_text)
        _add_global_options(child, suppress=True)
        child.set_defaults(handler=handler)
        return child

    # kg
    kg_parser = subparsers.add_parser("kg", help="知識グラフの構築・割り当て・拡張・エクスポート")
    kg_sub = kg_parser.add_subparsers(dest="kg_command")
    p = leaf(kg_sub, "build", cmd_kg_build, "CWEコーパスから知識グラフを作る")
    p.add_argument("--cwe", help="CWEコーパス（XML または CSV）")
    p.add_argument("--format", choices=[fmt.value for fmt in CorpusFormat], help="コーパス形式（拡張子から推定）")
    p.add_argument("--classes", help="抽象クラス定義（JSON）")
    p.add_argument("--no-map", action="store_true", help="クラス割り当てを行わない")
    p.add_argument("--output", "-o", required=True, help="出力する知識グラフ（JSON）")

    p = leaf(kg_sub, "map", cmd_kg_map, "Cweノードを抽象クラスに割り当てる")
    p.add_argument("--kg", help="入力の知識グラフ")
    p.add_argument("--classes", help="抽象クラス定義（JSON）")
    p.add_argument("--report", help="割り当てレポート（JSON）の出力先")
    p.add_argument("--output", "-o", required=True, help="出力する知識グラフ")

    p = leaf(kg_sub, "augment", cmd_kg_augment, "根拠文の共起からエンティティを追加する")
    p.add_argument("--kg", help="入力の知識グラフ")
    p.add_argument("--pairs", required=True, help="distill の出力（根拠文対 JSONL）")
    p.add_argument("--samples", help="サンプル（JSONL）")
    p.add_argument("--min-count", type=int, help="共起回数のしきい値")
    p.add_argument("--min-similarity", type=float, help="埋め込み類似度のしきい値")
    p.add_argument("--embedding-fallback", action="store_true", help="回数不足でも埋め込み類似度で接続する")
    p.add_argument("--output", "-o", required=True, help="出力する知識グラフ")

    p = leaf(kg_sub, "export", cmd_kg_export, "グラフDB投入用の文を書き出す")
    p.add_argument("--kg", help="入力の知識グラフ")
    p.add_argument("--output", "-o", required=True, help="出力ファイル")

    # distill
    p = leaf(subparsers, "distill", cmd_distill, "教師LLMで根拠文対を生成する")
    p.add_argument("--samples", help="サンプル（JSONL）")
    p.add_argument("--kg", help="凍結して使う知識グラフ")
    p.add_argument("--quarantine", help="隔離レポートの出力先（デフォルトは出力と同じディレクトリ）")
    p.add_argument("--output", "-o", required=True, help="根拠文対（JSONL）の出力先")

    # prefs
    prefs_parser = subparsers.add_parser("prefs", help="選好データ")
    prefs_sub = prefs_parser.add_subparsers(dest="prefs_command")
    p = leaf(prefs_sub, "export", cmd_prefs_export, "根拠文対から選好レコードを書き出す")
    p.add_argument("--pairs", required=True, help="根拠文対（JSONL）")
    p.add_argument("--samples", help="サンプル（JSONL）")
    p.add_argument("--kg", help="知識グラフ")
    p.add_argument("--entity-mode", choices=list(ENTITY_MODES), help="検索に使うエンティティの抽出方法")
    p.add_argument("--output", "-o", required=True, help="選好レコード（JSONL）の出力先")

    # predict
    p = leaf(subparsers, "predict", cmd_predict, "生徒モデルで推論し予測ファイルを作る")
    p.add_argument("--samples", help="サンプル（JSONL）")
    p.add_argument("--kg", help="知識グラフ")
    p.add_argument("--output", "-o", required=True, help="予測（JSONL）の出力先")

    # retrieve
    p = leaf(subparsers, "retrieve", cmd_retrieve, "コードに対するKGコンテキストを表示する")
    p.add_argument("--kg", help="知識グラフ")
    p.add_argument("--code", help="関数のソースコードファイル")
    p.add_argument("--samples", help="サンプル（JSONL）")
    p.add_argument("--id", help="--samples 内のサンプルID")
    p.add_argument("--k", type=int, help="候補CWE数")
    p.add_argument("--json", action="store_true", help="JSONで出力する")

    # orpo
    orpo_parser = subparsers.add_parser("orpo", help="ORPO損失の検証")
    orpo_sub = orpo_parser.add_subparsers(dest="orpo_command")
    for name, handler, help_text in (
        ("verify", cmd_orpo_verify, "トイモデルで勾配を差分近似と照合する"),
        ("toy-train", cmd_orpo_toy_train, "合成データでトイモデルを学習する"),
    ):
        p = leaf(orpo_sub, name, handler, help_text)
        p.add_argument("--pairs", type=int, default=20, help="合成する選好対の数")
        p.add_argument("--vocab", type=int, default=16, help="語彙サイズ")
        p.add_argument("--lambda", dest="lambda_", type=float, help="オッズ比損失の重み λ")
        if name == "toy-train":
            p.add_argument("--steps", type=int, help="学習ステップ数")
            p.add_argument("--learning-rate", type=float, help="学習率")
            p.add_argument("--audit", help="対ごとの損失内訳（JSONL）の出力先")
            p.add_argument("--output", "-o", help="学習結果（JSON）の出力先")

    # eval
    p = leaf(subparsers, "eval", cmd_eval, "予測を評価する")
    p.add_argument("--gold", required=True, help="正解サンプル（JSONL）")
    p.add_argument("--pred", required=True, help="予測（JSONL、{id, output_text}）")
    p.add_argument("--per-class", action="store_true", help="CWEごとの指標も出力する")
    p.add_argument("--cwe-subset", help="評価対象に限定するCWE IDの一覧ファイル")
    p.add_argument("--output", "-o", help="レポート（JSON）の出力先")

    # split / balance
    p = leaf(subparsers, "split", cmd_split, "train / val / test に分割する")
    p.add_argument("--samples", help="サンプル（JSONL）")
    p.add_argument("--ratios", type=int, nargs=3, help="分割比（例: 8 1 1）")
    p.add_argument("--stratify", action="store_true", help="(ラベル, 主CWE) で層化する")
    p.add_argument("--output", "-o", required=True, help="出力ディレクトリ")

    p = leaf(subparsers, "balance", cmd_balance, "安全サンプルを間引いて件数を調整する")
    p.add_argument("--samples", help="サンプル（JSONL）")
    p.add_argument("--target", type=int, help="目標件数")
    p.add_argument("--report", help="調整レポート（JSON）の出力先")
    p.add_argument("--output", "-o", required=True, help="出力するサンプル（JSONL）")

    # dataset
    dataset_parser = subparsers.add_parser("dataset", help="公開データセットの取り込み")
    dataset_sub = dataset_parser.add_subparsers(dest="dataset_command")
    p = leaf(dataset_sub, "import", cmd_dataset_import, "公開データセットをサンプル形式に変換する")
    p.add_argument("--source", required=True, choices=list(PUBLIC_SOURCES), help="データセット名")
    p.add_argument("--input", required=True, help="元データ（JSONL または JSON配列）")
    p.add_argument("--language", default="c", help="言語")
    p.add_argument("--output", "-o", required=True, help="サンプル（JSONL）の出力先")

    return parser


def _subcommand_name(args: argparse.Namespace) -> str:
    parts = [args.command]
    for key in ("kg_command", "prefs_command", "orpo_command", "dataset_command"):
        value = getattr(args, key, None)
        if value:
            parts.append(value)
    return " ".join(parts)


def _apply_overrides(manager: ConfigManager, args: argparse.Namespace) -> None:
    """CLI引数 > 設定ファイル > 環境変数 > デフォルト の順で反映する"""
    if getattr(args, "seed", None) is not None:
        manager.set("seed", args.seed)
    if getattr(args, "parallel", None) is not None:
        if args.parallel < 1:
            raise ConfigError(f"--parallel は1以上である必要があります: {args.parallel}")
        manager.set("backend.parallel", args.parallel)
    if getattr(args, "backend", None):
        manager.set("backend.kind", args.backend)
    if getattr(args, "no_kg", False):
        manager.set("distill.no_kg", True)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    コマンドライン引数を解析してサブコマンドを実行し、終了コードを返します。
    """
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # 使い方の誤りは入力の検証エラーとして扱う
        return EXIT_OK if not e.code else EXIT_VALIDATION

    handler = getattr(args, "handler", None)
    if handler is None:
        parser.print_help(sys.stderr)
        return EXIT_VALIDATION

    subcommand = _subcommand_name(args)
    ctx: Optional[CliContext] = None
    code = EXIT_RUNTIME
    try:
        manager = ConfigManager(args.config)
        _apply_overrides(manager, args)
        PipelineConfig.from_manager(manager).validate()
        manifest = RunManifest(subcommand=subcommand, config_hash=manager.config_hash(), seed=int(manager.get("seed", 42)))
        if args.config:
            manifest.add_inputs([args.config])
        ctx = CliContext(manager=manager, manifest=manifest)
        logger.info(f"'{subcommand}' を実行します（シード {ctx.seed}）")
        code = handler(ctx, args)
    except ValidationError as e:
        logger.error(f"'{subcommand}' の入力が不正です: {e}")
        print(f"エラー: {e}", file=sys.stderr)
        code = EXIT_VALIDATION
    except VulReadError as e:
        logger.error(f"'{subcommand}' の実行に失敗しました: {e}", exc_info=True)
        print(f"エラー: {e}", file=sys.stderr)
        code = EXIT_RUNTIME
    except OSError as e:
        logger.error(f"'{subcommand}' でファイル操作に失敗しました: {e}", exc_info=True)
        print(f"エラー: {e}", file=sys.stderr)
        code = EXIT_RUNTIME

    if ctx is not None:
        ctx.manifest.status = "ok" if code == EXIT_OK else "failed"
        try:
            ctx.manifest.write(ctx.manifest_dir or ctx.manager.get("paths.output_dir", "./output"))
        except OSError as e:
            logger.error(f"マニフェストを書き出せませんでした: {e}")
    return code


def main():
    """
    メイン関数

    コマンドライン引数を解析し、適切な処理を実行します。
    """
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
