"""Metrics, out-of-distribution runs, and significance testing.

Sentence evaluation uses span detections alone: the per-span attention
values are thresholded and composed by the logic rules, and the
sentence logits learned during training are ignored. Span evaluation
scores every model span that contains a human rationale against the
example's sentence label.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .corpus import DataFormat, DatasetSplit, Label, NLIExample
from .errors import SpanlogicError
from .logic import ExplanationReport, aggregate_prediction, explain, span_prediction
from .segmenter import Segmenter, Span, align_rationale

logger = logging.getLogger(__name__)

_CLASSES = (Label.ENTAILMENT, Label.NEUTRAL, Label.CONTRADICTION)


class Scorer(Protocol):
    """Anything that turns an example and its spans into detection
    scores: two equal-length lists of values in (0, 1)."""

    def score(
        self, example: NLIExample, spanset
    ) -> tuple[list[float], list[float]]: ...


# ---------------------------------------------------------------------------
# Sentence-level evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SentencePrediction:
    example_id: str
    predicted: Label | None  # None when segmentation failed
    gold: Label

    @property
    def correct(self) -> bool:
        return self.predicted == self.gold


@dataclass(frozen=True)
class SentenceEvalReport:
    split_name: str
    predictions: tuple[SentencePrediction, ...]
    failures: int

    @property
    def accuracy(self) -> float:
        if not self.predictions:
            raise SpanlogicError("no predictions to score")
        return sum(p.correct for p in self.predictions) / len(self.predictions)

    def to_dict(self) -> dict:
        return {
            "split": self.split_name,
            "n": len(self.predictions),
            "accuracy": self.accuracy,
            "failures": self.failures,
        }


def evaluate_sentences(
    scorer: Scorer, split: DatasetSplit, segmenter: Segmenter
) -> SentenceEvalReport:
    """Accuracy of span-composed sentence predictions over a split.

    An example the segmenter cannot handle is logged and scored as
    wrong rather than dropped, so accuracy stays comparable across
    models sharing the split.
    """
    predictions = []
    failures = 0
    for ex in split:
        try:
            spanset = segmenter.segment(ex.hypothesis, ex.id)
            a_n, a_c = scorer.score(ex, spanset)
            predicted: Label | None = aggregate_prediction(a_n, a_c)
        except SpanlogicError as exc:
            failures += 1
            predicted = None
            logger.warning("example %s not scorable: %s", ex.id, exc)
        predictions.append(SentencePrediction(ex.id, predicted, ex.gold))
    return SentenceEvalReport(split.name, tuple(predictions), failures)


# ---------------------------------------------------------------------------
# Span-level evaluation against rationales
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpanEvalRecord:
    """All scored spans for one (example, rationale variant) pair."""

    example_id: str
    variant: int
    evaluated: tuple[tuple[Span, Label, Label], ...]  # (span, predicted, gold)
    rationale: tuple[int, ...]

    def __post_init__(self) -> None:
        lo, hi = self.rationale[0], self.rationale[-1]
        for span, _, _ in self.evaluated:
            if not (span.start <= lo and hi < span.end):
                raise SpanlogicError(
                    f"span [{span.start}, {span.end}) does not contain "
                    f"rationale tokens {lo}..{hi} (example {self.example_id})"
                )


def _f_scores(
    pairs: Sequence[tuple[Label, Label]]
) -> tuple[dict[Label, float], float]:
    """Per-class F1 and their unweighted mean over (predicted, gold)."""
    per_class: dict[Label, float] = {}
    for cls in _CLASSES:
        tp = sum(1 for p, g in pairs if p == cls and g == cls)
        fp = sum(1 for p, g in pairs if p == cls and g != cls)
        fn = sum(1 for p, g in pairs if p != cls and g == cls)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        if precision + recall == 0:
            per_class[cls] = 0.0
        else:
            per_class[cls] = 2 * precision * recall / (precision + recall)
    macro = sum(per_class.values()) / len(per_class)
    return per_class, macro


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate quality numbers; fields are None when not measured."""

    sentence_accuracy: float | None
    span_accuracy: float | None
    f_per_class: dict[Label, float] | None
    f_macro: float | None
    counts: dict[str, int]

    def to_dict(self) -> dict:
        out: dict = {"counts": dict(self.counts)}
        if self.sentence_accuracy is not None:
            out["sentence_accuracy"] = self.sentence_accuracy
        if self.span_accuracy is not None:
            out["span_accuracy"] = self.span_accuracy
        if self.f_per_class is not None:
            out["f_per_class"] = {k.value: v for k, v in self.f_per_class.items()}
        if self.f_macro is not None:
            out["f_macro"] = self.f_macro
        return out

    def render(self) -> str:
        rows = []
        if self.sentence_accuracy is not None:
            rows.append(("sentence accuracy", self.sentence_accuracy))
        if self.span_accuracy is not None:
            rows.append(("span accuracy", self.span_accuracy))
        if self.f_per_class is not None:
            for cls in _CLASSES:
                rows.append((f"F ({cls.value})", self.f_per_class[cls]))
        if self.f_macro is not None:
            rows.append(("F-macro", self.f_macro))
        width = max(len(name) for name, _ in rows) if rows else 0
        lines = [f"{name:<{width}}  {value * 100:6.2f}" for name, value in rows]
        lines.append(
            f"{'counts':<{width}}  "
            + " ".join(f"{k}={v}" for k, v in sorted(self.counts.items()))
        )
        return "\n".join(lines)


def evaluate_spans(
    scorer: Scorer, split: DatasetSplit, segmenter: Segmenter
) -> tuple[MetricsReport, tuple[SpanEvalRecord, ...]]:
    """Score rationale-containing spans against sentence gold labels.

    Each rationale variant that forms one consecutive token run
    contributes every span containing it; pairs are micro-averaged
    across examples and variants.
    """
    records: list[SpanEvalRecord] = []
    pairs: list[tuple[Label, Label]] = []
    examples_used = 0
    variants_skipped = 0
    for ex in split:
        if not ex.rationales:
            continue
        spanset = segmenter.segment(ex.hypothesis, ex.id)
        a_n, a_c = scorer.score(ex, spanset)
        spans = spanset.all_spans()
        used_any = False
        for v_idx, variant in enumerate(ex.rationales):
            alignment = align_rationale(spanset, variant)
            if not alignment.single_consecutive:
                variants_skipped += 1
                continue
            evaluated = []
            for i, span in enumerate(spans):
                if alignment.mask[i]:
                    predicted = span_prediction(a_n[i], a_c[i])
                    evaluated.append((span, predicted, ex.gold))
                    pairs.append((predicted, ex.gold))
            if evaluated:
                used_any = True
                records.append(
                    SpanEvalRecord(
                        example_id=ex.id,
                        variant=v_idx,
                        evaluated=tuple(evaluated),
                        rationale=tuple(sorted(set(variant))),
                    )
                )
        if used_any:
            examples_used += 1

    counts = {
        "examples": examples_used,
        "span_variant_pairs": len(pairs),
        "variants_skipped": variants_skipped,
    }
    if not pairs:
        report = MetricsReport(None, None, None, None, counts)
        return report, tuple(records)
    accuracy = sum(p == g for p, g in pairs) / len(pairs)
    per_class, macro = _f_scores(pairs)
    report = MetricsReport(
        sentence_accuracy=None,
        span_accuracy=accuracy,
        f_per_class=per_class,
        f_macro=macro,
        counts=counts,
    )
    return report, tuple(records)


# ---------------------------------------------------------------------------
# Out-of-distribution suite
# ---------------------------------------------------------------------------

_TWO_CLASS_FORMATS = {DataFormat.HANS_TSV}


def _collapse(label: Label) -> str:
    return "entailment" if label == Label.ENTAILMENT else "non-entailment"


@dataclass(frozen=True)
class OodRow:
    split_name: str
    n: int
    accuracy: float
    two_class: bool


def run_ood_suite(
    scorer: Scorer, splits: Sequence[DatasetSplit], segmenter: Segmenter
) -> tuple[OodRow, ...]:
    """Sentence accuracy per split, one row each.

    Splits of two-class origin (HANS) are scored after collapsing both
    sides to entailment vs non-entailment; everything else uses the
    identical three-class path as evaluate_sentences.
    """
    rows = []
    for split in splits:
        report = evaluate_sentences(scorer, split, segmenter)
        if split.source_format in _TWO_CLASS_FORMATS:
            hits = sum(
                p.predicted is not None
                and _collapse(p.predicted) == _collapse(p.gold)
                for p in report.predictions
            )
            accuracy = hits / len(report.predictions)
            rows.append(OodRow(split.name, len(report.predictions), accuracy, True))
        else:
            rows.append(
                OodRow(split.name, len(report.predictions), report.accuracy, False)
            )
    return tuple(rows)


def render_ood_table(rows: Sequence[OodRow]) -> str:
    width = max((len(r.split_name) for r in rows), default=5)
    width = max(width, len("split"))
    lines = [f"{'split':<{width}}  {'n':>6}  {'acc':>6}"]
    for r in rows:
        note = "  (2-class)" if r.two_class else ""
        lines.append(f"{r.split_name:<{width}}  {r.n:>6}  {r.accuracy * 100:6.2f}{note}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Paired bootstrap test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapResult:
    p_value: float
    observed_difference: float
    accuracy_a: float
    accuracy_b: float
    n_resamples: int


def bootstrap_test(
    preds_a: Sequence,
    preds_b: Sequence,
    golds: Sequence,
    n_resamples: int = 10_000,
    seed: int = 0,
) -> BootstrapResult:
    """Two-tailed paired bootstrap for an accuracy difference.

    Examples are resampled with replacement; the p-value is the share
    of recentered resampled differences at least as extreme as the
    observed one, with add-one smoothing so it is never exactly zero.
    """
    if not (len(preds_a) == len(preds_b) == len(golds)):
        raise SpanlogicError(
            f"length mismatch: {len(preds_a)}, {len(preds_b)}, {len(golds)}"
        )
    if len(golds) == 0:
        raise SpanlogicError("cannot bootstrap zero examples")
    correct_a = np.array([p == g for p, g in zip(preds_a, golds)], dtype=np.float64)
    correct_b = np.array([p == g for p, g in zip(preds_b, golds)], dtype=np.float64)
    diff = correct_a - correct_b
    observed = float(diff.mean())

    rng = np.random.default_rng(seed)
    n = len(golds)
    extreme = 0
    chunk = 1000
    done = 0
    while done < n_resamples:
        rows = min(chunk, n_resamples - done)
        idx = rng.integers(0, n, size=(rows, n))
        resampled = diff[idx].mean(axis=1)
        extreme += int(np.sum(np.abs(resampled - observed) >= abs(observed)))
        done += rows
    p = (extreme + 1) / (n_resamples + 1)
    return BootstrapResult(
        p_value=float(min(p, 1.0)),
        observed_difference=observed,
        accuracy_a=float(correct_a.mean()),
        accuracy_b=float(correct_b.mean()),
        n_resamples=n_resamples,
    )


# ---------------------------------------------------------------------------
# Explanation emission
# ---------------------------------------------------------------------------


def explain_split(
    scorer: Scorer, split: DatasetSplit, segmenter: Segmenter
) -> Iterable[ExplanationReport]:
    for ex in split:
        spanset = segmenter.segment(ex.hypothesis, ex.id)
        a_n, a_c = scorer.score(ex, spanset)
        yield explain(spanset, a_n, a_c, example_id=ex.id)


def write_predictions(
    reports: Iterable[ExplanationReport], path: str | Path
) -> int:
    """Stream explanation reports to a JSON-lines file; returns the
    number written."""
    n = 0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for report in reports:
            fh.write(json.dumps(report.to_dict()) + "\n")
            n += 1
    return n
