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

"""Exception hierarchy for the mindscape package.

Every error raised on purpose by the library derives from MindscapeError, so
callers (CLI, API, benchmark runner) can separate expected failures from bugs.
"""


class MindscapeError(Exception):
    """Base class for all mindscape errors."""


# Vector primitives
class ZeroVectorError(MindscapeError):
    """Raised when normalizing an all-zero vector."""


class DimMismatchError(MindscapeError):
    """Raised when two vectors (or a vector and an index) disagree on dim."""


# Index construction and persistence
class EmptyDocumentError(MindscapeError):
    """Raised when a document has no words to chunk."""


class OutOfRangeError(MindscapeError):
    """Raised when a chunk id falls outside 1..L."""


class CorruptIndexError(MindscapeError):
    """Raised when an index on disk fails structural or checksum checks."""


class VersionMismatchError(MindscapeError):
    """Raised when an index was written by a newer format version."""


class EmptySummaryError(MindscapeError):
    """Raised when the summarizer returns blank text twice for a window."""


# Signature selection
class EmptyPoolError(MindscapeError):
    """Raised when selection is asked to pick from an empty candidate pool."""


class AlreadySelectedError(MindscapeError):
    """Raised when a marginal gain is requested for a selected summary."""


class PoolTooLargeError(MindscapeError):
    """Raised when brute-force enumeration is requested on a large pool."""


class InvalidWeightsError(MindscapeError, ValueError):
    """Raised when objective weights are negative or do not sum to one."""


# Retrieval and metrics
class EmptyIndexError(MindscapeError):
    """Raised when retrieving from an index with no chunks."""


class EmptyGoldError(MindscapeError):
    """Raised when a metric needs gold labels and none are usable."""


# Providers and prompts
class ProviderFailureError(MindscapeError):
    """Raised when a provider call fails for good (after retries)."""


class ProviderTimeoutError(ProviderFailureError):
    """Raised when a provider call exceeds its timeout on every attempt."""


class TransientProviderError(MindscapeError):
    """Raised by provider backends for failures worth retrying."""


class MissingPlaceholderError(MindscapeError):
    """Raised when a template placeholder has no binding."""


class UnknownPlaceholderError(MindscapeError):
    """Raised when a binding names a placeholder the template lacks."""


class UnparseableAnswerError(MindscapeError):
    """Raised when a generator reply does not carry a usable answer."""


# Update-model output parsing
class ParseError(MindscapeError):
    """Base class for malformed update-model output."""


class MissingActionError(ParseError):
    """Raised when the update output has no <action> tag."""


class InvalidActionError(ParseError):
    """Raised when <action> is neither ANSWER nor REFINE."""


class MissingRefinementError(ParseError):
    """Raised when a REFINE output lacks <refined_signature>."""


# Evaluation
class EmptySeriesError(MindscapeError):
    """Raised when a series has no books."""


class MalformedPairError(MindscapeError):
    """Raised when a claim pair does not have exactly two records."""


class CorruptReportError(MindscapeError):
    """Raised when stored report aggregates disagree with its records."""
