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

"""Utility functions shared across the mindscape package."""

import hashlib
import json
import logging
import os
import threading
from pathlib import Path
from typing import Any

logger = logging.getLogger(__name__)


def get_env_var(var_name: str) -> str:
    """Retrieves the value of an environment variable.

    Args:
        var_name: The name of the environment variable.

    Returns:
        The value of the environment variable.

    Raises:
        ValueError: If the environment variable is not set.
    """
    try:
        value = os.environ[var_name]
        return value
    except KeyError:
        raise ValueError(f'Missing environment variable: {var_name}')


def extract_json_from_model_output(model_output: str) -> dict[str, Any]:
    """Extracts the first JSON object from a model reply.

    Markdown code fences are stripped first. If the cleaned text is not a JSON
    document on its own, the first balanced ``{...}`` span that decodes to an
    object is used, so replies with prose around the JSON still parse.

    Args:
        model_output: Raw completion text.

    Returns:
        The decoded object, or a dict with an 'error' key if nothing decodes.
    """
    cleaned_output = (
        model_output.replace('```json', '').replace('```', '').strip()
    )
    try:
        json_object = json.loads(cleaned_output)
        if isinstance(json_object, dict):
            return json_object
    except json.JSONDecodeError:
        pass

    decoder = json.JSONDecoder()
    start = cleaned_output.find('{')
    while start != -1:
        try:
            json_object, _ = decoder.raw_decode(cleaned_output, start)
            if isinstance(json_object, dict):
                return json_object
        except json.JSONDecodeError:
            pass
        start = cleaned_output.find('{', start + 1)

    msg = 'Error decoding JSON: no object found in model output'
    logger.debug(msg)
    return {'error': msg}


def sha256_hex(data: bytes | str) -> str:
    """Returns the hex sha256 digest of bytes or UTF-8 text."""
    if isinstance(data, str):
        data = data.encode('utf-8')
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj: Any) -> str:
    """Serializes obj with sorted keys and no whitespace, for hashing."""
    return json.dumps(obj, sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Writes data to path via a temp file and rename.

    Readers see either the old file or the complete new one, never a partial
    write.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(f'.{path.name}.{os.getpid()}.{threading.get_ident()}.tmp')
    with open(tmp_path, 'wb') as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp_path, path)


def atomic_write_text(path: str | Path, text: str) -> None:
    """Text variant of atomic_write_bytes (UTF-8)."""
    atomic_write_bytes(path, text.encode('utf-8'))


def estimate_tokens(text: str) -> int:
    """Rough token count used in call logs (about 4/3 tokens per word)."""
    return (len(text.split()) * 4 + 2) // 3
