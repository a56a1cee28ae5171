"""設定ファイルを管理するモジュール"""
import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.utils.exceptions import ConfigError

# パッケージ同梱のデフォルト設定ファイル群
DEFAULTS_DIR = Path(__file__).resolve().parent / "defaults"

DEFAULT_SETTINGS: Dict[str, Any] = {
    "seed": 42,
    "paths": {
        "cwe_corpus": None,
        "classes": str(DEFAULTS_DIR / "abstract_classes.json"),
        "samples": None,
        "output_dir": "./output",
        "stoplist": str(DEFAULTS_DIR / "stoplist.txt"),
        "known_libraries": str(DEFAULTS_DIR / "known_libraries.txt"),
        "teacher_template": str(DEFAULTS_DIR / "prompts" / "teacher.txt"),
        "inference_template": str(DEFAULTS_DIR / "prompts" / "inference.txt"),
    },
    "backend": {
        "kind": "mock",
        "teacher_model": "Qwen2.5-32B-Instruct",
        "student_model": "Qwen2.5-7B-Instruct",
        "max_tokens": 1024,
        "token_budget": 4096,
        "chars_per_token": 4,
        "timeout": 60.0,
        "max_retries": 3,
        "backoff_base": 1.0,
        "parallel": 4,
    },
    "embedding": {
        "backend": "hash",
        "model_name": "sentence-transformers/all-MiniLM-L6-v2",
        "cache_dir": "./models",
        "cache_file": None,
        "dimension": 64,
    },
    "retrieval": {
        "k": 5,
        "min_count": 3,
        "min_similarity": 0.5,
        "max_block_chars": 1200,
    },
    "orpo": {
        "lambda": 0.1,
        "learning_rate": 0.01,
        "steps": 200,
        # None ならトップレベルの seed を使う
        "seed": None,
    },
    "distill": {
        "no_kg": False,
        "entity_mode": "lexical",
        "quarantine_file": "quarantine.jsonl",
    },
    "split": {
        "ratios": [8, 1, 1],
        "stratify": False,
    },
    "balance": {
        "target_total": 18000,
    },
}


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """overrideの値でbaseを再帰的に上書きした新しい辞書を返す"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        # "// ..." 形式のキーは設定例のコメントとして無視する
        if key.startswith("//"):
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class ConfigManager:
    def __init__(self, config_path: Optional[str] = None):
        """
        設定マネージャーの初期化

        Args:
            config_path: 設定ファイルのパス（Noneの場合は vulread_settings.json を探す）
        """
        self.config_path = Path(config_path or "vulread_settings.json")
        self._explicit = config_path is not None
        self._config: Dict[str, Any] = {}
        self.load_config()

    def load_config(self) -> None:
        """設定ファイルを読み込み、デフォルト値とマージする"""
        file_config: Dict[str, Any] = {}
        if self.config_path.exists():
            try:
                with open(self.config_path, 'r', encoding='utf-8') as f:
                    file_config = json.load(f)
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"設定ファイル '{self.config_path}' を読み込めません: {e}") from e
        elif self._explicit:
            raise ConfigError(f"設定ファイル '{self.config_path}' が見つかりません")
        self._config = _deep_merge(DEFAULT_SETTINGS, file_config)
        self._apply_env()

    def _apply_env(self) -> None:
        """設定ファイルで未指定の項目を環境変数で補完する"""
        backend = self._config["backend"]
        if os.getenv("VULREAD_TEACHER_MODEL") and backend.get("teacher_model") == DEFAULT_SETTINGS["backend"]["teacher_model"]:
            backend["teacher_model"] = os.getenv("VULREAD_TEACHER_MODEL")
        if os.getenv("VULREAD_STUDENT_MODEL") and backend.get("student_model") == DEFAULT_SETTINGS["backend"]["student_model"]:
            backend["student_model"] = os.getenv("VULREAD_STUDENT_MODEL")
        embedding = self._config["embedding"]
        if os.getenv("VULREAD_EMBEDDING_MODEL") and embedding.get("model_name") == DEFAULT_SETTINGS["embedding"]["model_name"]:
            embedding["model_name"] = os.getenv("VULREAD_EMBEDDING_MODEL")

    def get(self, dotted_key: str, default: Any = None) -> Any:
        """"orpo.lambda" のようなドット区切りキーで値を取得"""
        node: Any = self._config
        for part in dotted_key.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def set(self, dotted_key: str, value: Any) -> None:
        """ドット区切りキーで値を上書き（CLI引数の反映用）"""
        parts = dotted_key.split(".")
        node = self._config
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value

    def get_backend_config(self) -> Dict[str, Any]:
        """LLMバックエンドの設定を取得"""
        return self._config.get("backend", {})

    def get_embedding_config(self) -> Dict[str, Any]:
        """埋め込みモデルの設定を取得"""
        return self._config.get("embedding", {})

    def get_retrieval_config(self) -> Dict[str, Any]:
        """KG検索の設定を取得"""
        return self._config.get("retrieval", {})

    def get_orpo_config(self) -> Dict[str, Any]:
        """ORPOの設定を取得"""
        return self._config.get("orpo", {})

    def get_distill_config(self) -> Dict[str, Any]:
        """蒸留パイプラインの設定を取得"""
        return self._config.get("distill", {})

    def get_paths_config(self) -> Dict[str, Any]:
        """パス設定を取得"""
        return self._config.get("paths", {})

    def as_dict(self) -> Dict[str, Any]:
        """実効設定のコピーを返す"""
        return copy.deepcopy(self._config)

    def config_hash(self) -> str:
        """実効設定の正規化JSONのSHA-256"""
        canonical = json.dumps(self._config, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def save_config(self) -> None:
        """設定をファイルに保存"""
        with open(self.config_path, 'w', encoding='utf-8') as f:
            json.dump(self._config, f, indent=2, ensure_ascii=False)


@dataclass
class PipelineConfig:
    """
    パイプライン実行設定

    Attributes:
        paths: 入出力パス（CWEコーパス、クラス定義、サンプル、出力先など）
        backend: バックエンド設定
        retrieval: 検索閾値
        orpo: ORPO設定
        seed: 乱数シード（デフォルト42）
    """
    paths: Dict[str, Any] = field(default_factory=dict)
    backend: Dict[str, Any] = field(default_factory=dict)
    retrieval: Dict[str, Any] = field(default_factory=dict)
    orpo: Dict[str, Any] = field(default_factory=dict)
    seed: int = 42

    @classmethod
    def from_manager(cls, manager: ConfigManager) -> "PipelineConfig":
        return cls(
            paths=dict(manager.get_paths_config()),
            backend=dict(manager.get_backend_config()),
            retrieval=dict(manager.get_retrieval_config()),
            orpo=dict(manager.get_orpo_config()),
            seed=int(manager.get("seed", 42)),
        )

    def validate(self, required: Optional[List[str]] = None) -> None:
        """
        参照されているパスの存在を検証します。

        Args:
            required: 必須のパスキー（指定されたキーは未設定でもエラー）

        Raises:
            ConfigError: パスが存在しない場合
        """
        required = required or []
        for key, value in self.paths.items():
            if key == "output_dir":
                continue
            if value is None:
                if key in required:
                    raise ConfigError(f"必須のパス '{key}' が指定されていません")
                continue
            if not Path(value).exists():
                raise ConfigError(f"パス '{key}' = '{value}' が存在しません")
