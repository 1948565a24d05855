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

"""Mindscape - signature-guided retrieval and reasoning over long documents."""

import importlib

__all__ = ["agent", "root_agent"]


def __getattr__(name: str):
    # The ADK coordinator pulls in google-adk; load it only when asked for.
    if name == "agent":
        return importlib.import_module(".agent", __name__)
    if name == "root_agent":
        return importlib.import_module(".agent", __name__).root_agent
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
