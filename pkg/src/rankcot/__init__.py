"""Knowledge refinement toolkit for retrieval-augmented generation.

Ranks and refines retrieved documents with chain-of-thought prompting, builds
preference data for DPO training and scores refinements with QA metrics.
"""

from rankcot.errors import (
    BackendError,
    ConfigError,
    EmptyResultError,
    ForgeError,
    InputError,
    SchemaError,
)
from rankcot.text import contains_answer, normalize_answer, tokenize
from rankcot.types import (
    CorpusDocument,
    GenerationRecord,
    QueryRecord,
    RefinementOutput,
    ScoredDocument,
)

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "ConfigError",
    "CorpusDocument",
    "EmptyResultError",
    "ForgeError",
    "GenerationRecord",
    "InputError",
    "QueryRecord",
    "RefinementOutput",
    "SchemaError",
    "ScoredDocument",
    "contains_answer",
    "normalize_answer",
    "tokenize",
]
