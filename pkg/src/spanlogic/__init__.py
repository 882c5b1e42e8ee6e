"""Span-level natural language inference.

The package classifies premise/hypothesis pairs by scoring hypothesis
spans for neutrality and contradiction, then composing those span
decisions into the sentence decision. Besides the three-way label, the
span scores yield token-level explanations without any span supervision.
"""

from .corpus import (
    DataFormat,
    DatasetSplit,
    Label,
    NLIExample,
    attach_rationales,
    load_nli_dataset,
    subsample,
)
from .errors import (
    CheckpointError,
    DataError,
    LogicError,
    SegmentationError,
    SpanlogicError,
    TrainingError,
)
from .segmenter import Segmenter, Span, SpanKind, SpanSet, tokenize

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "DataError",
    "DataFormat",
    "DatasetSplit",
    "Label",
    "LogicError",
    "NLIExample",
    "SegmentationError",
    "Segmenter",
    "Span",
    "SpanKind",
    "SpanSet",
    "SpanlogicError",
    "TrainingError",
    "attach_rationales",
    "load_nli_dataset",
    "subsample",
    "tokenize",
    "__version__",
]
