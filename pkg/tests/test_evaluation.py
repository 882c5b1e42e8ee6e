"""Sentence metrics, span metrics, OOD rows, and the bootstrap test."""

from __future__ import annotations

import json

import pytest

from conftest import ConstantScorer, OracleScorer
from spanlogic.corpus import DataFormat, DatasetSplit, Label, NLIExample
from spanlogic.errors import SpanlogicError
from spanlogic.evaluation import (
    SentenceEvalReport,
    SpanEvalRecord,
    bootstrap_test,
    evaluate_sentences,
    evaluate_spans,
    explain_split,
    render_ood_table,
    run_ood_suite,
    write_predictions,
)
from spanlogic.segmenter import Span, SpanKind

LOW = [0.1, 0.1, 0.1]


class TestEvaluateSentences:
    def test_oracle_scorer_scores_perfectly(self, tiny_split, segmenter):
        table = {
            "e1": (LOW, LOW),
            "n1": ([0.1, 0.9, 0.1], LOW),
            "c1": (LOW, [0.1, 0.9, 0.1]),
        }
        report = evaluate_sentences(OracleScorer(table), tiny_split, segmenter)
        assert report.accuracy == 1.0
        assert report.failures == 0
        assert report.to_dict() == {
            "split": "tiny",
            "n": 3,
            "accuracy": 1.0,
            "failures": 0,
        }

    def test_quiet_scorer_only_gets_entailment_right(self, tiny_split, segmenter):
        report = evaluate_sentences(ConstantScorer(0.1, 0.1), tiny_split, segmenter)
        assert report.accuracy == pytest.approx(1 / 3)

    def test_unsegmentable_example_counts_as_wrong(self, segmenter, caplog):
        split = DatasetSplit(
            "s",
            (
                NLIExample("ok", "a dog runs.", "a dog moves.", Label.ENTAILMENT),
                NLIExample("bad", "a dog runs.", "   ", Label.ENTAILMENT),
            ),
        )
        with caplog.at_level("WARNING"):
            report = evaluate_sentences(ConstantScorer(0.1, 0.1), split, segmenter)
        assert report.failures == 1
        assert report.accuracy == pytest.approx(0.5)
        assert report.predictions[1].predicted is None
        assert "bad" in caplog.text

    def test_empty_report_has_no_accuracy(self):
        with pytest.raises(SpanlogicError):
            SentenceEvalReport("s", (), 0).accuracy


def _rationale_split(rationales):
    # hypothesis spans: [0,2) "a dog", [2,6) "chases a ball.", [0,6) composite
    ex = NLIExample(
        "r1", "a dog runs.", "a dog chases a ball.", Label.NEUTRAL, rationales
    )
    return DatasetSplit("rat", (ex,))


class TestEvaluateSpans:
    def test_hand_enumerated_case(self, segmenter):
        split = _rationale_split(((3, 4),))
        # granular [2,6) predicted neutral, composite [0,6) stays quiet
        scorer = OracleScorer({"r1": ([0.1, 0.9, 0.2], LOW)})
        report, records = evaluate_spans(scorer, split, segmenter)

        assert report.counts == {
            "examples": 1,
            "span_variant_pairs": 2,
            "variants_skipped": 0,
        }
        assert report.span_accuracy == pytest.approx(0.5)
        assert report.f_per_class[Label.NEUTRAL] == pytest.approx(2 / 3)
        assert report.f_per_class[Label.ENTAILMENT] == 0.0
        assert report.f_per_class[Label.CONTRADICTION] == 0.0
        assert report.f_macro == pytest.approx(2 / 9, abs=1e-9)

        (record,) = records
        assert record.example_id == "r1"
        assert record.rationale == (3, 4)
        assert [p for _, p, _ in record.evaluated] == [
            Label.NEUTRAL,
            Label.ENTAILMENT,
        ]

    def test_macro_is_the_mean_of_per_class_f(self, segmenter):
        split = _rationale_split(((3, 4),))
        scorer = OracleScorer({"r1": ([0.1, 0.9, 0.2], LOW)})
        report, _ = evaluate_spans(scorer, split, segmenter)
        mean = sum(report.f_per_class.values()) / 3
        assert report.f_macro == pytest.approx(mean, abs=1e-9)

    def test_each_variant_contributes_pairs(self, segmenter):
        split = _rationale_split(((3, 4), (4,)))
        scorer = OracleScorer({"r1": ([0.1, 0.9, 0.2], LOW)})
        report, records = evaluate_spans(scorer, split, segmenter)
        assert report.counts["span_variant_pairs"] == 4
        assert [r.variant for r in records] == [0, 1]

    def test_non_consecutive_variant_skipped(self, segmenter):
        split = _rationale_split(((1, 4),))
        scorer = OracleScorer({"r1": ([0.1, 0.9, 0.2], LOW)})
        report, records = evaluate_spans(scorer, split, segmenter)
        assert report.counts["variants_skipped"] == 1
        assert report.span_accuracy is None
        assert records == ()

    def test_examples_without_rationales_skipped(self, tiny_split, segmenter):
        report, records = evaluate_spans(
            ConstantScorer(0.1, 0.1), tiny_split, segmenter
        )
        assert report.counts["examples"] == 0
        assert report.span_accuracy is None

    def test_record_rejects_span_missing_the_rationale(self):
        span = Span(0, 2, ((0, 2),), SpanKind.GRANULAR)
        with pytest.raises(SpanlogicError, match="does not contain"):
            SpanEvalRecord("x", 0, ((span, Label.NEUTRAL, Label.NEUTRAL),), (3, 4))

    def test_report_render_mentions_counts(self, segmenter):
        split = _rationale_split(((3, 4),))
        scorer = OracleScorer({"r1": ([0.1, 0.9, 0.2], LOW)})
        report, _ = evaluate_spans(scorer, split, segmenter)
        text = report.render()
        assert "span accuracy" in text
        assert "span_variant_pairs=2" in text


class TestOodSuite:
    def test_three_class_split_matches_sentence_eval(self, tiny_split, segmenter):
        scorer = ConstantScorer(0.1, 0.1)
        (row,) = run_ood_suite(scorer, [tiny_split], segmenter)
        assert row.accuracy == pytest.approx(1 / 3)
        assert not row.two_class

    def test_two_class_split_collapses_labels(self, segmenter):
        examples = (
            NLIExample("h1", "a dog runs.", "a dog moves.", Label.ENTAILMENT),
            # stored neutral stands in for non-entailment
            NLIExample("h2", "a dog runs.", "a cat sleeps.", Label.NEUTRAL),
        )
        split = DatasetSplit("hans", examples, DataFormat.HANS_TSV)
        # contradiction prediction on h2 is right after collapsing
        scorer = OracleScorer(
            {"h1": (LOW, LOW), "h2": (LOW, [0.1, 0.9, 0.1])}
        )
        (row,) = run_ood_suite(scorer, [split], segmenter)
        assert row.two_class
        assert row.accuracy == 1.0

    def test_render_marks_two_class_rows(self, segmenter):
        split = DatasetSplit(
            "hans",
            (NLIExample("h1", "a dog runs.", "a dog moves.", Label.ENTAILMENT),),
            DataFormat.HANS_TSV,
        )
        rows = run_ood_suite(ConstantScorer(0.1, 0.1), [split], segmenter)
        table = render_ood_table(rows)
        assert "hans" in table and "(2-class)" in table


class TestBootstrap:
    def test_identical_systems_get_p_one(self):
        golds = [1] * 50
        preds = [1] * 25 + [0] * 25
        result = bootstrap_test(preds, preds, golds, n_resamples=500, seed=0)
        assert result.p_value == 1.0
        assert result.observed_difference == 0.0

    def test_disjoint_systems_get_the_smallest_p(self):
        golds = [1] * 500
        a = [1] * 500
        b = [0] * 500
        result = bootstrap_test(a, b, golds, n_resamples=999, seed=0)
        assert result.p_value == pytest.approx(1 / 1000)
        assert result.accuracy_a == 1.0
        assert result.accuracy_b == 0.0

    def test_same_seed_same_p(self):
        golds = [1] * 30
        a = [1] * 20 + [0] * 10
        b = [1] * 15 + [0] * 15
        x = bootstrap_test(a, b, golds, n_resamples=300, seed=7)
        y = bootstrap_test(a, b, golds, n_resamples=300, seed=7)
        assert x == y

    def test_stronger_effect_smaller_p(self):
        golds = [1] * 100
        b = [1] * 50 + [0] * 50
        strong = [1] * 100
        weak = [1] * 54 + [0] * 46
        p_strong = bootstrap_test(strong, b, golds, n_resamples=2000, seed=1).p_value
        p_weak = bootstrap_test(weak, b, golds, n_resamples=2000, seed=1).p_value
        assert p_strong < p_weak

    def test_length_mismatch_rejected(self):
        with pytest.raises(SpanlogicError):
            bootstrap_test([1], [1, 0], [1, 0])

    def test_empty_rejected(self):
        with pytest.raises(SpanlogicError):
            bootstrap_test([], [], [])


class TestExplanationEmission:
    def test_explain_split_yields_one_report_per_example(self, tiny_split, segmenter):
        reports = list(explain_split(ConstantScorer(0.6, 0.2), tiny_split, segmenter))
        assert [r.example_id for r in reports] == ["e1", "n1", "c1"]
        assert all(r.prediction == Label.NEUTRAL for r in reports)

    def test_write_predictions_streams_jsonl(self, tiny_split, segmenter, tmp_path):
        path = tmp_path / "out" / "preds.jsonl"
        n = write_predictions(
            explain_split(ConstantScorer(0.6, 0.2), tiny_split, segmenter), path
        )
        assert n == 3
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 3
        first = json.loads(lines[0])
        assert first["id"] == "e1"
        assert first["prediction"] == "neutral"
        assert first["spans"]
