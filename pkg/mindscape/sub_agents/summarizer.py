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

"""Summarizer: writes one narrative summary per session window.

The summaries are query independent, so they are produced once per document
and cached on disk. The cache key covers the document, the window index, the
window text and the prompt template hash; editing the prompt file invalidates
every cached summary.
"""

import json
import logging
from pathlib import Path

from ..prompts import load_template, render_messages
from ..shared.errors import EmptySummaryError
from ..shared.llm_provider import LLMProvider
from ..shared.utils import atomic_write_text, canonical_json, sha256_hex

logger = logging.getLogger(__name__)

SUMMARY_TEMPLATE_ID = "session_summary"


def summary_prompt_hash() -> str:
    return load_template(SUMMARY_TEMPLATE_ID).content_hash


def render_summary_prompt(idx: int, total: int, raw_text: str) -> tuple[str, str]:
    """Fills {idx}, {total} and {raw_text} of the session-summary prompt."""
    template = load_template(SUMMARY_TEMPLATE_ID)
    return render_messages(
        template, {"idx": idx, "total": total, "raw_text": raw_text}
    )


def summarize_window(idx: int, total: int, raw_text: str, llm: LLMProvider) -> str:
    """Summarizes one window, asking once more if the reply is blank.

    Raises:
        EmptySummaryError: The provider returned blank text twice.
    """
    system, user = render_summary_prompt(idx, total, raw_text)
    for attempt in (1, 2):
        summary = llm.complete(system, user, template_id=SUMMARY_TEMPLATE_ID).strip()
        if summary:
            return summary
        logger.warning(f"⚠️ Blank summary for window {idx}/{total} (attempt {attempt})")
    raise EmptySummaryError(f"Summarizer returned blank text twice for window {idx}/{total}")


class SummaryCache:
    """One JSON file per summary under a cache directory."""

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)

    @staticmethod
    def key(doc_id: str, window: int, raw_text: str, prompt_hash: str) -> str:
        return sha256_hex(
            canonical_json(
                {
                    "doc_id": doc_id,
                    "window": window,
                    "text_sha256": sha256_hex(raw_text),
                    "prompt_hash": prompt_hash,
                }
            )
        )

    def _path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            with open(path, "r", encoding="utf-8") as f:
                record = json.load(f)
            text = record["summary"]
        except (OSError, ValueError, KeyError, TypeError) as e:
            logger.warning(f"⚠️ Ignoring unreadable cache entry {path.name}: {e}")
            return None
        return text if isinstance(text, str) and text.strip() else None

    def put(self, key: str, doc_id: str, window: int, summary: str) -> None:
        record = {"doc_id": doc_id, "window": window, "summary": summary}
        atomic_write_text(self._path(key), json.dumps(record, ensure_ascii=False))
