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

"""Shared utilities, configuration and providers for mindscape."""

# Import utility functions
from .utils import (
    get_env_var,
    extract_json_from_model_output,
    sha256_hex,
    canonical_json,
    atomic_write_bytes,
    atomic_write_text,
    estimate_tokens,
)

# Import configuration
from .config import (
    MindscapeConfig,
    EmbeddingConfig,
    LLMRoleConfig,
    ProvidersConfig,
    IndexConfig,
    SignatureConfig,
    RetrievalConfig,
    AgentConfig,
    EvalConfig,
    load_config,
    mindscape_constants_dict,
    with_overrides,
)

# Import embedding primitives and providers
from .embeddings import (
    normalize,
    cosine,
    hash_embed,
    reserved_vector,
    EmbeddingProvider,
    HashEmbeddingProvider,
    HttpEmbeddingProvider,
    GeminiEmbeddingProvider,
    build_embedding_provider,
)

# Import LLM providers
from .llm_provider import (
    LLMProvider,
    RetryPolicy,
    ScriptedLLMProvider,
    HttpChatProvider,
    GeminiProvider,
    OFFLINE_SCRIPTS,
    build_llm_provider,
    complete,
    get_genai_client,
)

__all__ = [
    # Utility functions
    "get_env_var",
    "extract_json_from_model_output",
    "sha256_hex",
    "canonical_json",
    "atomic_write_bytes",
    "atomic_write_text",
    "estimate_tokens",
    # Configuration
    "MindscapeConfig",
    "EmbeddingConfig",
    "LLMRoleConfig",
    "ProvidersConfig",
    "IndexConfig",
    "SignatureConfig",
    "RetrievalConfig",
    "AgentConfig",
    "EvalConfig",
    "load_config",
    "mindscape_constants_dict",
    "with_overrides",
    # Embeddings
    "normalize",
    "cosine",
    "hash_embed",
    "reserved_vector",
    "EmbeddingProvider",
    "HashEmbeddingProvider",
    "HttpEmbeddingProvider",
    "GeminiEmbeddingProvider",
    "build_embedding_provider",
    # LLM providers
    "LLMProvider",
    "RetryPolicy",
    "ScriptedLLMProvider",
    "HttpChatProvider",
    "GeminiProvider",
    "OFFLINE_SCRIPTS",
    "build_llm_provider",
    "complete",
    "get_genai_client",
]
