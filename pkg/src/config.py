"""Configuration and settings management."""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.constants import (
    AGGREGATION_MEAN,
    AGGREGATIONS,
    ALL_VARIANTS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_BUDGET,
    DEFAULT_CHUNK_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_K_Q,
    DEFAULT_LAMBDA,
    DEFAULT_LEARNING_RATE,
    DEFAULT_OLLAMA_ENDPOINT,
    DEFAULT_PAIR_SAMPLES,
    DEFAULT_QUERY_COUNT,
    DEFAULT_SEED,
    DEFAULT_SEPARATOR,
    DROP_GLOBAL,
    DROP_PER_DOCUMENT,
    EFFECTIVE_CONFIG_FILE_NAME,
    EMBEDDER_HASH,
    ENCODER_HASH,
    GAIN_EXPONENTIAL,
    GAIN_LINEAR,
    HASH_EMBEDDER_DIM,
    HASH_ENCODER_DIM,
    SEGMENTER_FALLBACK,
    SUMMARIZER_OLLAMA,
    VARIANT_FULL,
    WORKER_POOL_MAX_WORKERS,
)
from src.errors import ConfigurationError
from src.logger import get_logger

logger = get_logger(__name__)


class TrainingConfig(BaseModel):
    """EM training hyperparameters."""

    model_config = ConfigDict(populate_by_name=True)

    lam: float = Field(DEFAULT_LAMBDA, alias="lambda")
    k: int = DEFAULT_QUERY_COUNT
    k_q: int = DEFAULT_K_Q
    k_f: Optional[int] = None  # None: 20% of a set's EDUs
    learning_rate: float = DEFAULT_LEARNING_RATE
    batch_size: int = DEFAULT_BATCH_SIZE
    epochs: int = DEFAULT_EPOCHS
    pair_samples_per_set: int = DEFAULT_PAIR_SAMPLES
    full_pairs: bool = False
    seed: int = DEFAULT_SEED
    unfreeze_backend: bool = False
    aggregation: str = AGGREGATION_MEAN
    residual: bool = False

    @field_validator("lam")
    @classmethod
    def _check_lambda(cls, value: float) -> float:
        if value < 0:
            raise ValueError("lambda must be non-negative")
        return value

    @field_validator("k", "k_q", "batch_size")
    @classmethod
    def _check_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("epochs")
    @classmethod
    def _check_epochs(cls, value: int) -> int:
        if value < 0:
            raise ValueError("epochs must be >= 0")
        return value

    @field_validator("aggregation")
    @classmethod
    def _check_aggregation(cls, value: str) -> str:
        if value not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        return value


class CorpusPaths(BaseModel):
    """Corpus files per split."""

    train: Optional[Path] = None
    validation: Optional[Path] = None
    test: Optional[Path] = None

    def available(self) -> Dict[str, Path]:
        return {split: path for split, path in self.model_dump().items() if path is not None}


class BackendConfig(BaseModel):
    """Segmenter, embedder and encoder selection."""

    segmenter: str = SEGMENTER_FALLBACK
    segmenter_endpoint: Optional[str] = None
    embedder: str = EMBEDDER_HASH
    embedder_model: Optional[str] = None
    embedder_dim: int = HASH_EMBEDDER_DIM
    encoder: str = ENCODER_HASH
    encoder_model: Optional[str] = None
    encoder_dim: int = HASH_ENCODER_DIM


class SummarizerConfig(BaseModel):
    """Optional downstream summarizer hook."""

    enabled: bool = False
    kind: str = SUMMARIZER_OLLAMA
    endpoint: str = DEFAULT_OLLAMA_ENDPOINT
    model: str = ""
    api_key: Optional[str] = None


class PipelineConfig(BaseSettings):
    """Effective configuration of a pipeline run.

    Values come from (highest priority first) the JSON config file with CLI
    overrides merged on top, environment variables prefixed ``EDU_RETRIEVER_``
    (nested with ``__``), and the defaults below.
    """

    model_config = SettingsConfigDict(
        env_prefix="EDU_RETRIEVER_", env_nested_delimiter="__", populate_by_name=True
    )

    corpus: CorpusPaths = Field(default_factory=CorpusPaths)
    backends: BackendConfig = Field(default_factory=BackendConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    chunk_size: int = DEFAULT_CHUNK_SIZE
    budget: int = DEFAULT_BUDGET
    variants: List[str] = Field(default_factory=lambda: [VARIANT_FULL])
    drop_mode: str = DROP_GLOBAL
    separator: str = DEFAULT_SEPARATOR
    ndcg_gain: str = GAIN_LINEAR
    few_shot: Optional[float] = None
    out_dir: Path = Path("runs/default")
    seed: int = DEFAULT_SEED
    workers: int = WORKER_POOL_MAX_WORKERS
    resume: bool = False
    summarizer: SummarizerConfig = Field(default_factory=SummarizerConfig)

    @field_validator("chunk_size", "budget", "workers")
    @classmethod
    def _check_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("variants")
    @classmethod
    def _check_variants(cls, value: List[str]) -> List[str]:
        unknown = [v for v in value if v not in ALL_VARIANTS]
        if unknown:
            raise ValueError(f"unknown variants {unknown}; expected {ALL_VARIANTS}")
        return value

    @field_validator("drop_mode")
    @classmethod
    def _check_drop_mode(cls, value: str) -> str:
        if value not in (DROP_GLOBAL, DROP_PER_DOCUMENT):
            raise ValueError("drop_mode must be 'global' or 'per_document'")
        return value

    @field_validator("ndcg_gain")
    @classmethod
    def _check_gain(cls, value: str) -> str:
        if value not in (GAIN_LINEAR, GAIN_EXPONENTIAL):
            raise ValueError("ndcg_gain must be 'linear' or 'exponential'")
        return value

    @field_validator("few_shot")
    @classmethod
    def _check_few_shot(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not 0.0 < value <= 1.0:
            raise ValueError("few_shot must be in (0, 1]")
        return value


def _deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """Load the JSON config file and apply CLI overrides on top.

    The top-level seed is propagated into the training configuration so every
    stochastic component draws from it.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"cannot read config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"config {path} must hold a JSON object")

    data = _deep_merge(data, {k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        config = PipelineConfig(**data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration: {e}") from e

    config.training = config.training.model_copy(update={"seed": config.seed})
    return config


def save_effective_config(config: PipelineConfig, out_dir: Optional[Path] = None) -> Path:
    """Echo the effective configuration into the output directory."""
    out_dir = Path(out_dir or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / EFFECTIVE_CONFIG_FILE_NAME
    payload = config.model_dump(mode="json", by_alias=True)
    with open(target, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    logger.debug(f"Effective config written to {target}")
    return target
