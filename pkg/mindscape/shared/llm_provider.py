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

"""Chat-completion providers for the summarizer, updater and generator roles.

Every provider goes through LLMProvider.complete, which owns call logging, the
per-provider in-flight limiter and the retry policy. Backends only implement
_complete and signal retryable failures with TransientProviderError.
"""

import json
import logging
import os
import threading
import time
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

import regex
import requests

from .config import LLMRoleConfig
from .errors import (
    ProviderFailureError,
    ProviderTimeoutError,
    TransientProviderError,
)
from .utils import estimate_tokens

logger = logging.getLogger(__name__)

# Lazily created google-genai client, shared by gemini providers.
genai_client = None

Responder = Callable[[str, str], str]


class TransientTimeoutError(TransientProviderError):
    """A retryable timeout; becomes ProviderTimeoutError once retries run out."""


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 2
    backoff_seconds: float = 0.5
    backoff_factor: float = 2.0

    def delay(self, attempt: int) -> float:
        """Sleep before retry number `attempt` (1-based)."""
        return self.backoff_seconds * (self.backoff_factor ** (attempt - 1))


def get_genai_client():
    """Get the google-genai client with lazy initialization.

    Uses GOOGLE_API_KEY when set, otherwise Vertex AI with
    GOOGLE_CLOUD_PROJECT / GOOGLE_CLOUD_LOCATION.
    """
    global genai_client
    if genai_client is None:
        from google.genai import Client

        api_key = os.getenv("GOOGLE_API_KEY")
        if api_key:
            genai_client = Client(api_key=api_key)
        else:
            project = os.getenv("GOOGLE_CLOUD_PROJECT", None)
            location = os.getenv("GOOGLE_CLOUD_LOCATION", "us-central1")
            if not project:
                raise ProviderFailureError(
                    "Neither GOOGLE_API_KEY nor GOOGLE_CLOUD_PROJECT is set"
                )
            genai_client = Client(vertexai=True, project=project, location=location)
    return genai_client


class LLMProvider(ABC):
    """Maps (system prompt, user prompt) to completion text."""

    def __init__(
        self,
        name: str,
        retry_policy: RetryPolicy | None = None,
        timeout: float = 60.0,
        max_in_flight: int = 4,
        single_flight: bool = False,
    ):
        self.name = name
        self.retry_policy = retry_policy or RetryPolicy()
        self.timeout = timeout
        self.single_flight = single_flight
        self._limiter = threading.BoundedSemaphore(1 if single_flight else max_in_flight)
        self._count_lock = threading.Lock()
        self.call_count = 0

    @abstractmethod
    def _complete(self, system: str, user: str) -> str:
        """Performs one backend call."""

    def complete(self, system: str, user: str, template_id: str = "adhoc") -> str:
        """Returns the completion for (system, user), retrying transient failures.

        Raises:
            ProviderTimeoutError: Every attempt timed out.
            ProviderFailureError: The backend failed for good.
        """
        attempts = self.retry_policy.max_retries + 1
        last_error: Exception | None = None
        for attempt in range(1, attempts + 1):
            logger.info(
                f"🧠 {self.name} template={template_id} "
                f"~{estimate_tokens(system) + estimate_tokens(user)} tokens "
                f"(attempt {attempt}/{attempts})"
            )
            try:
                with self._limiter:
                    with self._count_lock:
                        self.call_count += 1
                    return self._complete(system, user)
            except TransientProviderError as e:
                last_error = e
                logger.warning(f"⚠️ {self.name} transient failure: {e}")
                if attempt < attempts:
                    time.sleep(self.retry_policy.delay(attempt))

        if isinstance(last_error, TransientTimeoutError):
            raise ProviderTimeoutError(
                f"{self.name} timed out after {attempts} attempts"
            ) from last_error
        raise ProviderFailureError(
            f"{self.name} failed after {attempts} attempts: {last_error}"
        ) from last_error


def complete(
    provider: LLMProvider, system: str, user: str, template_id: str = "adhoc"
) -> str:
    """Module-level shorthand for provider.complete."""
    return provider.complete(system, user, template_id=template_id)


class ScriptedLLMProvider(LLMProvider):
    """Deterministic provider for tests and offline runs.

    Either replays a fixed queue of replies (erroring once it is exhausted) or
    answers through a pure responder function of (system, user).
    """

    def __init__(
        self,
        responses: Sequence[str] | None = None,
        responder: Responder | None = None,
        name: str = "scripted",
    ):
        if responses is not None and responder is not None:
            raise ValueError("Pass either responses or responder, not both")
        # A queue is order sensitive, so it is single-flight.
        super().__init__(
            name=name,
            retry_policy=RetryPolicy(max_retries=0),
            single_flight=responder is None,
        )
        self._queue = deque(responses or [])
        self._responder = responder
        self.calls: list[tuple[str, str]] = []

    @property
    def remaining(self) -> int:
        return len(self._queue)

    def _complete(self, system: str, user: str) -> str:
        self.calls.append((system, user))
        if self._responder is not None:
            return self._responder(system, user)
        if not self._queue:
            raise ProviderFailureError(f"{self.name}: scripted queue exhausted")
        return self._queue.popleft()


class HttpChatProvider(LLMProvider):
    """OpenAI-style chat-completions backend over requests."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        token_env: str | None = None,
        temperature: float = 0.0,
        retry_policy: RetryPolicy | None = None,
        timeout: float = 60.0,
        max_in_flight: int = 4,
    ):
        super().__init__(
            name=f"http:{model}",
            retry_policy=retry_policy,
            timeout=timeout,
            max_in_flight=max_in_flight,
        )
        self.endpoint = endpoint
        self.model = model
        self.token_env = token_env
        self.temperature = temperature

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.token_env:
            token = os.getenv(self.token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
            else:
                logger.warning(f"⚠️ {self.token_env} is not set; calling without auth")
        return headers

    def _complete(self, system: str, user: str) -> str:
        messages = []
        if system:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": user})
        payload = {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
        }
        try:
            response = requests.post(
                self.endpoint,
                json=payload,
                headers=self._headers(),
                timeout=self.timeout,
            )
        except requests.Timeout as e:
            raise TransientTimeoutError(str(e)) from e
        except requests.ConnectionError as e:
            raise TransientProviderError(str(e)) from e

        if response.status_code == 429 or response.status_code >= 500:
            raise TransientProviderError(f"HTTP {response.status_code}")
        if response.status_code >= 400:
            raise ProviderFailureError(
                f"HTTP {response.status_code}: {response.text[:200]}"
            )

        try:
            body = response.json()
            content = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise ProviderFailureError(f"Malformed chat completion payload: {e}") from e
        if not isinstance(content, str):
            raise ProviderFailureError("Chat completion content is not a string")
        return content


def _is_timeout(error: BaseException) -> bool:
    """True for socket and HTTP client timeouts, which google-genai re-raises as is."""
    return isinstance(error, TimeoutError) or any(
        "Timeout" in cls.__name__ for cls in type(error).__mro__
    )


class GeminiProvider(LLMProvider):
    """google-genai generate_content backend."""

    def __init__(
        self,
        model: str,
        temperature: float = 0.0,
        retry_policy: RetryPolicy | None = None,
        timeout: float = 60.0,
        max_in_flight: int = 4,
    ):
        super().__init__(
            name=f"gemini:{model}",
            retry_policy=retry_policy,
            timeout=timeout,
            max_in_flight=max_in_flight,
        )
        self.model = model
        self.temperature = temperature

    def _complete(self, system: str, user: str) -> str:
        client = get_genai_client()
        config = {
            "temperature": self.temperature,
            # HttpOptions.timeout is in milliseconds.
            "http_options": {"timeout": int(self.timeout * 1000)},
        }
        if system:
            config["system_instruction"] = system
        try:
            response = client.models.generate_content(
                model=self.model, contents=user, config=config
            )
        except Exception as e:
            if _is_timeout(e):
                raise TransientTimeoutError(f"Gemini call timed out: {e}") from e
            raise TransientProviderError(f"Gemini call failed: {e}") from e
        return response.text or ""


# --- Offline scripts -------------------------------------------------------
# Pure functions of the rendered prompts, so scripted runs stay deterministic
# under any worker count.

_RAW_TEXT_RE = regex.compile(r"<Raw_Text>\n(.*?)\n</Raw_Text>", regex.DOTALL)
_CHUNK_LINE_RE = regex.compile(r"^\[Chunk (\d+)\] (.*)$", regex.MULTILINE)
_SESSION_LINE_RE = regex.compile(r"^\[Session (\d+)\] (.*)$", regex.MULTILINE)
_PASSAGE_LINE_RE = regex.compile(r"^\[1\] (.*)$", regex.MULTILINE)
_OPTION_LINE_RE = regex.compile(r"^([A-D])\. (.+)$", regex.MULTILINE)
_QUESTION_RE = regex.compile(r"^Question:\n(.*?)\n\nOptions:", regex.DOTALL | regex.MULTILINE)
_WORD_RE = regex.compile(r"\w+")


def _first_words(text: str, n: int) -> str:
    return " ".join(text.split()[:n])


def summary_echo(system: str, user: str) -> str:
    """Session summary = first 50 words of the window text."""
    match = _RAW_TEXT_RE.search(user)
    return _first_words(match.group(1) if match else user, 50)


def _evidence_from_passages(user: str) -> str:
    match = _CHUNK_LINE_RE.search(user)
    if not match:
        return "- no passage retrieved"
    return f"- chunk {match.group(1)}: {_first_words(match.group(2), 12)}"


def update_answer(system: str, user: str) -> str:
    """Always ANSWER with HIGH confidence, citing the first passage."""
    return (
        f"<evidence_memory>\n{_evidence_from_passages(user)}\n</evidence_memory>\n"
        "<confidence>HIGH</confidence>\n"
        "<thought>The first passage addresses the question.</thought>\n"
        "<action>ANSWER</action>"
    )


def update_refine(system: str, user: str) -> str:
    """Always REFINE, steering toward the first session summary."""
    session = _SESSION_LINE_RE.search(user)
    question = _QUESTION_RE.search(user)
    compass = _first_words(session.group(2), 20) if session else "the main storyline"
    query = question.group(1).strip() if question else "missing evidence"
    return (
        f"<evidence_memory>\n{_evidence_from_passages(user)}\n</evidence_memory>\n"
        "<confidence>LOW</confidence>\n"
        "<thought>Key evidence is still missing.</thought>\n"
        "<action>REFINE</action>\n"
        f"<refined_signature>Focus on: {compass}</refined_signature>\n"
        f"<rewritten_query>{query} (details)</rewritten_query>"
    )


def _overlap(a: str, b: str) -> int:
    return len(set(_WORD_RE.findall(a.lower())) & set(_WORD_RE.findall(b.lower())))


def answer_extractive(system: str, user: str) -> str:
    """Answers from surface overlap with the context.

    Detective: the option sharing most words with the context (ties go to the
    earlier letter). Claim: TRUE. Open QA: first five words of passage [1].
    """
    if "TRUE or FALSE" in system:
        return (
            "<explanation>Offline verifier accepts every claim.</explanation>\n"
            "<answer>TRUE</answer>"
        )
    if '"answer":"x"' in user:
        context, _, tail = user.partition(
            "Please answer the question based on the current novel content:"
        )
        options = _OPTION_LINE_RE.findall(tail)
        best_letter = "A"
        best_score = -1
        for letter, text in options:
            score = _overlap(text, context)
            if score > best_score:
                best_letter, best_score = letter, score
        return json.dumps({"answer": best_letter, "reasoning": "word overlap"})
    match = _PASSAGE_LINE_RE.search(user)
    return _first_words(match.group(1), 5) if match else ""


OFFLINE_SCRIPTS: dict[str, Responder] = {
    "summary-echo": summary_echo,
    "update-answer": update_answer,
    "update-refine": update_refine,
    "answer-extractive": answer_extractive,
}


def build_llm_provider(config: LLMRoleConfig, role: str = "llm") -> LLMProvider:
    """Instantiates the provider for one role from its config section."""
    policy = RetryPolicy(
        max_retries=config.max_retries, backoff_seconds=config.backoff_seconds
    )
    if config.kind == "scripted":
        if config.script:
            if config.script not in OFFLINE_SCRIPTS:
                raise ValueError(
                    f"Unknown offline script {config.script!r}; "
                    f"choose from {sorted(OFFLINE_SCRIPTS)}"
                )
            return ScriptedLLMProvider(
                responder=OFFLINE_SCRIPTS[config.script], name=f"{role}:{config.script}"
            )
        return ScriptedLLMProvider(responses=config.responses, name=f"{role}:scripted")
    if config.kind == "http":
        if not config.endpoint or not config.model:
            raise ValueError(f"{role}: http providers need endpoint and model")
        return HttpChatProvider(
            endpoint=config.endpoint,
            model=config.model,
            token_env=config.token_env,
            temperature=config.temperature,
            retry_policy=policy,
            timeout=config.timeout,
            max_in_flight=config.max_in_flight,
        )
    if config.kind == "gemini":
        return GeminiProvider(
            model=config.model or os.getenv("ROOT_AGENT_MODEL", "gemini-2.0-flash"),
            temperature=config.temperature,
            retry_policy=policy,
            timeout=config.timeout,
            max_in_flight=config.max_in_flight,
        )
    raise ValueError(f"Unknown LLM provider kind: {config.kind}")
