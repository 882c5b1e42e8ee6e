"""Logical rules tying span decisions to sentence decisions.

Three pieces live here: deriving per-head supervision targets from a
gold label, composing per-span detection scores into the sentence
prediction, and reducing the predicted spans to a minimal explanation
set. Everything is a pure function over floats and labels; no tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .corpus import Label
from .errors import LogicError
from .segmenter import Span, SpanKind, SpanSet

DETECTION_THRESHOLD = 0.5


@dataclass(frozen=True)
class SupervisionTarget:
    """Per-head regression targets for one example.

    ``neutral`` is None for contradiction gold: whether such an example
    also contains neutral spans is unknowable from the sentence label,
    so the neutral head gets no signal there.
    """

    neutral: float | None
    contradiction: float

    def __post_init__(self) -> None:
        if self.neutral is not None and self.neutral not in (0.0, 1.0):
            raise LogicError(f"neutral target must be 0 or 1, got {self.neutral}")
        if self.contradiction not in (0.0, 1.0):
            raise LogicError(
                f"contradiction target must be 0 or 1, got {self.contradiction}"
            )


def training_targets(gold: Label) -> SupervisionTarget:
    """Map a gold sentence label to per-head targets.

    contradiction -> contradiction head on, neutral head unsupervised;
    neutral -> neutral on, contradiction off; entailment -> both off.
    """
    if gold == Label.CONTRADICTION:
        return SupervisionTarget(neutral=None, contradiction=1.0)
    if gold == Label.NEUTRAL:
        return SupervisionTarget(neutral=1.0, contradiction=0.0)
    if gold == Label.ENTAILMENT:
        return SupervisionTarget(neutral=0.0, contradiction=0.0)
    raise LogicError(f"unknown gold label {gold!r}")


def span_prediction(
    neutral_score: float,
    contradiction_score: float,
    threshold: float = DETECTION_THRESHOLD,
) -> Label:
    """Classify one span from its two detection scores.

    Contradiction wins when both heads fire; scores exactly at the
    threshold do not count as detections.
    """
    if contradiction_score > threshold:
        return Label.CONTRADICTION
    if neutral_score > threshold:
        return Label.NEUTRAL
    return Label.ENTAILMENT


def aggregate_prediction(
    neutral_scores: Sequence[float],
    contradiction_scores: Sequence[float],
    threshold: float = DETECTION_THRESHOLD,
) -> Label:
    """Classify the sentence from its per-span detection scores.

    Any contradiction detection makes the sentence a contradiction; any
    neutral detection (with none of the former) makes it neutral;
    otherwise the hypothesis is fully entailed.
    """
    if len(neutral_scores) == 0 or len(contradiction_scores) == 0:
        raise LogicError("cannot aggregate over zero spans")
    if len(neutral_scores) != len(contradiction_scores):
        raise LogicError(
            f"score lengths differ: {len(neutral_scores)} neutral vs "
            f"{len(contradiction_scores)} contradiction"
        )
    if any(s > threshold for s in contradiction_scores):
        return Label.CONTRADICTION
    if any(s > threshold for s in neutral_scores):
        return Label.NEUTRAL
    return Label.ENTAILMENT


def compose_span_labels(labels: Sequence[Label]) -> Label:
    """Sentence label implied by per-span labels: contradiction beats
    neutral beats entailment."""
    if len(labels) == 0:
        raise LogicError("cannot compose zero span labels")
    if Label.CONTRADICTION in labels:
        return Label.CONTRADICTION
    if Label.NEUTRAL in labels:
        return Label.NEUTRAL
    return Label.ENTAILMENT


@dataclass(frozen=True)
class ExplanationReport:
    """Sentence prediction plus the minimal spans that justify it."""

    spanset: SpanSet
    prediction: Label
    explanation_spans: tuple[tuple[Span, Label], ...]
    neutral_scores: tuple[float, ...]
    contradiction_scores: tuple[float, ...]
    example_id: str | None = None

    def to_dict(self) -> dict:
        spans = []
        for span, cls in self.explanation_spans:
            idx = self.spanset.all_spans().index(span)
            spans.append(
                {
                    "text": self.spanset.span_text(span),
                    "start": span.start,
                    "end": span.end,
                    "class": cls.value,
                    "a_n": self.neutral_scores[idx],
                    "a_c": self.contradiction_scores[idx],
                }
            )
        return {
            "id": self.example_id,
            "prediction": self.prediction.value,
            "spans": spans,
        }

    def render(self) -> str:
        """Plain-text view: hypothesis with each explanation span
        underlined on its own line."""
        lines = [self.spanset.text, f"prediction: {self.prediction.value}"]
        marker = {Label.NEUTRAL: "-", Label.CONTRADICTION: "~"}
        for span, cls in self.explanation_spans:
            first = self.spanset.hypothesis_tokens[span.start]
            last = self.spanset.hypothesis_tokens[span.end - 1]
            under = (
                " " * first.start
                + marker[cls] * (last.end - first.start)
                + f"  [{cls.value}]"
            )
            lines.append(under)
        return "\n".join(lines)


def _minimal_spans(
    spanset: SpanSet, span_labels: Sequence[Label], wanted: Label
) -> tuple[Span, ...]:
    spans = spanset.all_spans()
    predicted = [s for s, lab in zip(spans, span_labels) if lab == wanted]
    out = []
    for s in predicted:
        strictly_inside = any(
            s.contains(o) and (o.start, o.end) != (s.start, s.end) for o in predicted
        )
        if not strictly_inside:
            out.append(s)
    return tuple(out)


def extract_explanation_spans(
    spanset: SpanSet,
    span_labels: Sequence[Label],
    sentence_prediction: Label,
) -> tuple[tuple[Span, Label], ...]:
    """Reduce predicted spans to the smallest set that still covers them.

    A predicted span is kept only when no other predicted span of the
    same class sits strictly inside it, so composites survive only where
    none of their parts carries the prediction. Contradiction sentences
    report contradiction spans alone; entailment sentences report
    nothing.
    """
    if len(span_labels) != spanset.m:
        raise LogicError(
            f"got {len(span_labels)} span labels for {spanset.m} spans"
        )
    implied = compose_span_labels(span_labels)
    if implied != sentence_prediction:
        raise LogicError(
            f"span labels imply {implied.value} but sentence prediction "
            f"is {sentence_prediction.value}"
        )
    if sentence_prediction == Label.ENTAILMENT:
        return ()
    kept = _minimal_spans(spanset, span_labels, sentence_prediction)
    return tuple((s, sentence_prediction) for s in kept)


def explain(
    spanset: SpanSet,
    neutral_scores: Sequence[float],
    contradiction_scores: Sequence[float],
    example_id: str | None = None,
    threshold: float = DETECTION_THRESHOLD,
) -> ExplanationReport:
    """Full pipeline from raw detection scores to an explanation report."""
    if len(neutral_scores) != spanset.m or len(contradiction_scores) != spanset.m:
        raise LogicError(
            f"need {spanset.m} scores per head, got {len(neutral_scores)} "
            f"neutral and {len(contradiction_scores)} contradiction"
        )
    labels = [
        span_prediction(n, c, threshold)
        for n, c in zip(neutral_scores, contradiction_scores)
    ]
    prediction = aggregate_prediction(neutral_scores, contradiction_scores, threshold)
    spans = extract_explanation_spans(spanset, labels, prediction)
    return ExplanationReport(
        spanset=spanset,
        prediction=prediction,
        explanation_spans=spans,
        neutral_scores=tuple(float(s) for s in neutral_scores),
        contradiction_scores=tuple(float(s) for s in contradiction_scores),
        example_id=example_id,
    )
