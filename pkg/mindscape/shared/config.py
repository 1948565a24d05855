# Copyright 2025 Google LLC
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Configuration models and loading.

A run is described by one MindscapeConfig. It can be built in code, loaded from
a YAML file, and adjusted through MINDSCAPE_* environment variables (a .env
file is honored via python-dotenv).
"""

import logging
import os
from pathlib import Path
from typing import Any, Literal

import immutabledict
import yaml
from dotenv import find_dotenv, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .utils import canonical_json, sha256_hex

logger = logging.getLogger(__name__)

mindscape_constants_dict: immutabledict.immutabledict[str, Any] = (
    immutabledict.immutabledict(
        {
            # Words per chunk for plain-text documents.
            "chunk_words": 200,
            # Chunks per session window (one summary per window).
            "window_size": 20,
            # Query-only candidates retrieved before signature selection.
            "k0": 50,
            # Maximum session summaries in the initial signature.
            "k_sum": 5,
            # Chunks retrieved at every agent step.
            "step_k": 20,
            # Weight of the signature signal in dual retrieval.
            "alpha": 0.5,
            # Update-call budget of the agent loop.
            "steps": 3,
            # Relevance, coverage and diversity weights of the step-0 objective.
            "weights": (0.3, 0.4, 0.3),
            # Buckets of the offline hash embedder.
            "hash_dim": 256,
            # Provider retries after the first attempt.
            "max_retries": 2,
            # Base delay of the exponential retry backoff, in seconds.
            "backoff_seconds": 0.5,
            # Cut-off used for the headline recall metric.
            "recall_k": 10,
            # Text embeddings kept by each Retriever.
            "embedding_cache_size": 4096,
        }
    )
)

AnswerVariantName = Literal["chunks", "chunks+sig", "chunks+evi", "chunks+sig+evi"]
MethodName = Literal["query-only", "mia-emb", "mia-rag", "agent", "agent-no-sig"]


class EmbeddingConfig(BaseModel):
    """Embedding provider section."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["offline-hash", "http", "gemini"] = "offline-hash"
    dim: int = Field(default=mindscape_constants_dict["hash_dim"], ge=1)
    endpoint: str | None = None
    token_env: str | None = None
    model: str | None = None
    batch_size: int = Field(default=64, ge=1)
    timeout: float = Field(default=60.0, gt=0)
    single_flight: bool = False


class LLMRoleConfig(BaseModel):
    """Provider settings for one LLM role (summarizer, updater, generator)."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["scripted", "http", "gemini"] = "scripted"
    # Named offline script, see llm_provider.OFFLINE_SCRIPTS.
    script: str | None = None
    # Fixed reply queue for the scripted kind; used when no script is named.
    responses: list[str] = Field(default_factory=list)
    endpoint: str | None = None
    model: str | None = None
    token_env: str | None = None
    temperature: float = 0.0
    timeout: float = Field(default=60.0, gt=0)
    max_retries: int = Field(default=mindscape_constants_dict["max_retries"], ge=0)
    backoff_seconds: float = Field(
        default=mindscape_constants_dict["backoff_seconds"], ge=0
    )
    max_in_flight: int = Field(default=4, ge=1)


class ProvidersConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    summarizer: LLMRoleConfig = Field(
        default_factory=lambda: LLMRoleConfig(script="summary-echo")
    )
    updater: LLMRoleConfig = Field(
        default_factory=lambda: LLMRoleConfig(script="update-answer")
    )
    generator: LLMRoleConfig = Field(
        default_factory=lambda: LLMRoleConfig(script="answer-extractive")
    )


class IndexConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    chunk_words: int = Field(default=mindscape_constants_dict["chunk_words"], ge=1)
    window_size: int = Field(default=mindscape_constants_dict["window_size"], ge=1)
    cache_dir: str | None = None
    # Parallel summary calls; single-flight summarizers are always sequential.
    workers: int = Field(default=1, ge=1)


class SignatureConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k0: int = Field(default=mindscape_constants_dict["k0"], ge=1)
    k_sum: int = Field(default=mindscape_constants_dict["k_sum"], ge=1)
    mode: Literal["coverage", "first-k"] = "coverage"
    weights: tuple[float, float, float] = mindscape_constants_dict["weights"]

    @field_validator("weights")
    @classmethod
    def _check_weights(cls, value: tuple[float, float, float]):
        if any(w < 0 for w in value) or abs(sum(value) - 1.0) > 1e-9:
            raise ValueError(f"weights must be nonnegative and sum to 1, got {value}")
        return value


class RetrievalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(default=mindscape_constants_dict["alpha"], ge=0.0, le=1.0)
    step_k: int = Field(default=mindscape_constants_dict["step_k"], ge=1)


class AgentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    steps: int = Field(default=mindscape_constants_dict["steps"], ge=1)
    rewrite: bool = True
    variant: AnswerVariantName = "chunks+sig+evi"
    init_mode: Literal["coverage", "first-k"] = "first-k"


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset: str | None = None
    corpus: str | None = None
    # Root directory holding one saved index per document (built on demand).
    index: str | None = None
    method: MethodName = "agent"
    variant: AnswerVariantName | None = None
    # series_id -> ordered doc_ids merged into one retrieval corpus.
    series: dict[str, list[str]] = Field(default_factory=dict)
    seeds: list[int] = Field(default_factory=lambda: [0])
    workers: int = Field(default=1, ge=1)
    recall_k: int = Field(default=mindscape_constants_dict["recall_k"], ge=1)


class MindscapeConfig(BaseModel):
    """Root configuration object."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    embedding: EmbeddingConfig = Field(default_factory=EmbeddingConfig)
    providers: ProvidersConfig = Field(default_factory=ProvidersConfig)
    index: IndexConfig = Field(default_factory=IndexConfig)
    signature: SignatureConfig = Field(default_factory=SignatureConfig)
    retrieval: RetrievalConfig = Field(default_factory=RetrievalConfig)
    agent: AgentConfig = Field(default_factory=AgentConfig)
    evaluation: EvalConfig = Field(default_factory=EvalConfig, alias="eval")

    def fingerprint(self) -> str:
        """sha256 of the canonical JSON form of this config."""
        return sha256_hex(canonical_json(self.model_dump(mode="json", by_alias=True)))


# Keys under `eval` and `index` that name filesystem paths.
_PATH_KEYS = {
    "eval": ("dataset", "corpus", "index"),
    "index": ("cache_dir",),
}


def _resolve_paths(data: dict[str, Any], base_dir: Path) -> None:
    for section, keys in _PATH_KEYS.items():
        block = data.get(section) or {}
        for key in keys:
            value = block.get(key)
            if value and not Path(value).is_absolute():
                block[key] = str((base_dir / value).resolve())


def _apply_env_overrides(data: dict[str, Any]) -> None:
    overrides = {
        "MINDSCAPE_ALPHA": ("retrieval", "alpha", float),
        "MINDSCAPE_STEPS": ("agent", "steps", int),
        "MINDSCAPE_CACHE_DIR": ("index", "cache_dir", str),
        "MINDSCAPE_INDEX_PATH": ("eval", "index", str),
    }
    for env_name, (section, key, cast) in overrides.items():
        raw = os.getenv(env_name)
        if raw is None or raw == "":
            continue
        data.setdefault(section, {})[key] = cast(raw)
        logger.info(f"⚙️ {env_name} overrides {section}.{key}")


def load_config(path: str | Path | None = None, apply_env: bool = True) -> MindscapeConfig:
    """Loads a MindscapeConfig from YAML.

    Args:
        path: YAML file. Falls back to $MINDSCAPE_CONFIG, then to defaults.
        apply_env: Whether MINDSCAPE_* environment variables override the file.

    Returns:
        The validated configuration.
    """
    load_dotenv(find_dotenv(usecwd=True))

    if path is None:
        path = os.getenv("MINDSCAPE_CONFIG") or None

    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ValueError(f"Config file {path} must hold a mapping at top level")
        _resolve_paths(data, path.parent)

    if apply_env:
        _apply_env_overrides(data)

    return MindscapeConfig.model_validate(data)


def with_overrides(config: MindscapeConfig, **sections: dict[str, Any]) -> MindscapeConfig:
    """Copy of config with fields of the named sections replaced.

    The result is validated like a loaded config, so overrides obey the same
    field constraints.

    Raises:
        pydantic.ValidationError: An override breaks a constraint (a ValueError).
    """
    data = config.model_dump()
    for section, updates in sections.items():
        if section not in data:
            raise ValueError(f"Unknown config section: {section}")
        data[section] = {**data[section], **updates}
    return MindscapeConfig.model_validate(data)
