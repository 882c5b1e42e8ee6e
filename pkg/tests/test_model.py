"""Encoder, detection heads, and checkpoint round trips.

The forward pass is checked against a pure-python scalar
reimplementation that shares nothing with the torch code path beyond
the extracted weight values.
"""

from __future__ import annotations

import json
import math
import zlib
from pathlib import Path

import pytest
import torch

from conftest import GOLDEN_HYPOTHESIS
from spanlogic.corpus import Label, NLIExample
from spanlogic.errors import CheckpointError, ModelError
from spanlogic.model import (
    CHECKPOINT_FORMAT_VERSION,
    DetectionHead,
    SpanModel,
    ToyEncoder,
    config_fingerprint,
    load_checkpoint,
    mask_hypothesis,
    normalize_attention,
    save_checkpoint,
    sentence_logit,
)
from spanlogic.segmenter import Segmenter, SidecarChunker, Span, SpanKind

GOLDEN_DATA = Path(__file__).parent / "data" / "toy_forward_golden.json"


def _span(start, end):
    return Span(start, end, ((start, end),), SpanKind.GRANULAR)


class TestMaskHypothesis:
    def test_outside_tokens_replaced(self):
        out = mask_hypothesis(["a", "b", "c", "d"], _span(1, 3), "[MASK]")
        assert out == ("[MASK]", "b", "c", "[MASK]")

    def test_full_span_changes_nothing(self):
        toks = ["x", "y"]
        assert mask_hypothesis(toks, _span(0, 2), "_") == ("x", "y")

    def test_out_of_range_rejected(self):
        with pytest.raises(ModelError):
            mask_hypothesis(["a"], _span(0, 2), "_")


class TestToyEncoder:
    def test_mask_token_gets_the_reserved_row(self):
        enc = ToyEncoder(dimension=8, buckets=32, embed_dim=4)
        assert enc.bucket(enc.mask_token) == 0
        for tok in ["a", "dog", "runs", ".", "wetsuit"]:
            assert 1 <= enc.bucket(tok) < 32

    def test_bucketing_is_case_insensitive_and_stable(self):
        enc = ToyEncoder(buckets=100)
        assert enc.bucket("Dog") == enc.bucket("dog")
        expected = zlib.crc32(b"dog") % 99 + 1
        assert enc.bucket("dog") == expected

    def test_output_shape_and_range(self):
        enc = ToyEncoder(dimension=8, buckets=32, embed_dim=4)
        out = enc.encode_pairs(["a", "dog"], [["a", "cat"], ["_", "cat"]])
        assert out.shape == (2, 8)
        assert (out > -1).all() and (out < 1).all()

    def test_repeat_calls_agree(self):
        enc = ToyEncoder()
        a = enc.encode_pairs(["a", "dog"], [["a", "cat"]])
        b = enc.encode_pairs(["a", "dog"], [["a", "cat"]])
        assert torch.equal(a, b)

    def test_empty_premise_rejected(self):
        enc = ToyEncoder()
        with pytest.raises(ModelError):
            enc.encode_pairs([], [["a"]])

    def test_bad_sizes_rejected(self):
        with pytest.raises(ModelError):
            ToyEncoder(buckets=1)


class TestDetectionHead:
    def test_zero_weights_give_half_attention(self):
        head = DetectionHead(4, hidden=3)
        with torch.no_grad():
            for p in head.parameters():
                p.zero_()
        raw = head.attention_scores(torch.randn(5, 4))
        assert torch.all(raw == 0.5)

    def test_bias_moves_attention_through_sigmoid(self):
        head = DetectionHead(4)
        with torch.no_grad():
            for p in head.parameters():
                p.zero_()
            head.att_out.bias.fill_(4.0)
        raw = head.attention_scores(torch.randn(3, 4))
        expected = 1.0 / (1.0 + math.exp(-4.0))
        assert raw.allclose(torch.full((3,), expected))

    def test_saturated_attention_stays_inside_the_open_interval(self):
        head = DetectionHead(4)
        with torch.no_grad():
            head.att_out.bias.fill_(1000.0)
        raw = head.attention_scores(torch.randn(6, 4))
        assert (raw > 0).all() and (raw < 1).all()
        normalize_attention(raw)

    def test_sentence_probability_affine_squash(self):
        head = DetectionHead(4)
        with torch.no_grad():
            head.sent_scale.fill_(2.0)
            head.sent_bias.fill_(-1.0)
            prob = head.sentence_probability(torch.tensor(0.75))
        assert float(prob) == pytest.approx(1.0 / (1.0 + math.exp(-0.5)))


class TestAttentionHelpers:
    def test_normalize_scales_to_unit_sum(self):
        raw = torch.tensor([0.2, 0.3, 0.5])
        w = normalize_attention(raw)
        assert float(w.sum()) == pytest.approx(1.0)
        assert w.allclose(raw / 1.0)

    def test_normalize_preserves_proportions(self):
        raw = torch.tensor([0.1, 0.4])
        w = normalize_attention(raw)
        assert float(w[1] / w[0]) == pytest.approx(4.0)

    def test_normalize_rejects_empty_and_nonpositive(self):
        with pytest.raises(ModelError):
            normalize_attention(torch.tensor([]))
        with pytest.raises(ModelError):
            normalize_attention(torch.tensor([0.5, 0.0]))

    def test_sentence_logit_is_weighted_sum(self):
        val = sentence_logit(torch.tensor([0.25, 0.75]), torch.tensor([2.0, -1.0]))
        assert float(val) == pytest.approx(0.25 * 2.0 + 0.75 * -1.0)

    def test_sentence_logit_shape_mismatch_rejected(self):
        with pytest.raises(ModelError):
            sentence_logit(torch.ones(2), torch.ones(3))


# ---------------------------------------------------------------------------
# Scalar reimplementation of the whole forward pass
# ---------------------------------------------------------------------------


def _linear(weight, bias, vec):
    return [
        sum(w * x for w, x in zip(row, vec)) + b for row, b in zip(weight, bias)
    ]


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def _scalar_encode(encoder, premise_tokens, masked_rows):
    table = encoder.embedding.weight.tolist()
    proj_w = encoder.project.weight.tolist()
    proj_b = encoder.project.bias.tolist()

    def mean_embed(tokens):
        rows = [table[encoder.bucket(t)] for t in tokens]
        return [sum(col) / len(rows) for col in zip(*rows)]

    prem = mean_embed(premise_tokens)
    out = []
    for row in masked_rows:
        combined = prem + mean_embed(row)
        out.append([math.tanh(v) for v in _linear(proj_w, proj_b, combined)])
    return out


def _scalar_head(head, hidden_rows):
    w1 = head.att_hidden.weight.tolist()
    b1 = head.att_hidden.bias.tolist()
    w2 = head.att_out.weight.tolist()
    b2 = head.att_out.bias.tolist()
    w3 = head.span_logit.weight.tolist()
    b3 = head.span_logit.bias.tolist()
    scale = float(head.sent_scale.detach())
    bias = float(head.sent_bias.detach())

    raw, logits = [], []
    for h in hidden_rows:
        u = [math.tanh(v) for v in _linear(w1, b1, h)]
        raw.append(_sigmoid(_linear(w2, b2, u)[0]))
        logits.append(_linear(w3, b3, h)[0])
    total = sum(raw)
    weights = [a / total for a in raw]
    sent = sum(w * l for w, l in zip(weights, logits))
    prob = _sigmoid(scale * sent + bias)
    return raw, weights, logits, sent, prob


class TestForwardAgainstScalarOracle:
    def test_full_pipeline_matches(self):
        torch.manual_seed(7)
        encoder = ToyEncoder(dimension=16, buckets=64, embed_dim=8).double()
        model = SpanModel(encoder, Segmenter(max_run_length=3), head_hidden=6).double()
        spanset = model.segmenter.segment(GOLDEN_HYPOTHESIS)
        premise = ["a", "surfer", "leaves", "the", "sea", "."]
        hyp = list(spanset.token_strings())

        with torch.no_grad():
            scores = model.forward(premise, hyp, spanset)
        scores.validate()

        masked = [
            list(mask_hypothesis(hyp, s, encoder.mask_token))
            for s in spanset.all_spans()
        ]
        hidden = _scalar_encode(encoder, premise, masked)
        for got_row, want_row in zip(scores.hidden.tolist(), hidden):
            assert got_row == pytest.approx(want_row, abs=1e-9)

        for head_module, head_scores in (
            (model.neutral_head, scores.neutral),
            (model.contradiction_head, scores.contradiction),
        ):
            raw, weights, logits, sent, prob = _scalar_head(head_module, hidden)
            assert head_scores.raw_attention.tolist() == pytest.approx(raw, abs=1e-9)
            assert head_scores.attention_weights.tolist() == pytest.approx(
                weights, abs=1e-9
            )
            assert head_scores.span_logits.tolist() == pytest.approx(logits, abs=1e-9)
            assert float(head_scores.sentence_logit) == pytest.approx(sent, abs=1e-9)
            assert float(head_scores.sentence_probability) == pytest.approx(
                prob, abs=1e-9
            )


class TestSpanModel:
    def _model(self, seed=0):
        torch.manual_seed(seed)
        return SpanModel(
            ToyEncoder(dimension=12, buckets=64, embed_dim=6),
            Segmenter(max_run_length=3),
        )

    def test_heads_share_no_parameters(self):
        model = self._model()
        neutral = {id(p) for p in model.neutral_head.parameters()}
        contra = {id(p) for p in model.contradiction_head.parameters()}
        assert neutral.isdisjoint(contra)

    def test_perturbing_one_head_leaves_the_other_alone(self):
        model = self._model()
        spanset = model.segmenter.segment("a dog runs.")
        hyp = list(spanset.token_strings())
        before = model.forward(["a", "dog"], hyp, spanset)
        with torch.no_grad():
            for p in model.contradiction_head.parameters():
                p.add_(1.0)
        after = model.forward(["a", "dog"], hyp, spanset)
        assert torch.equal(before.neutral.raw_attention, after.neutral.raw_attention)
        assert not torch.equal(
            before.contradiction.raw_attention, after.contradiction.raw_attention
        )

    def test_score_returns_plain_floats_and_restores_mode(self):
        model = self._model()
        model.train()
        ex = NLIExample("s1", "a dog runs.", "a dog sits.", Label.NEUTRAL)
        spanset = model.segmenter.segment(ex.hypothesis)
        ns, cs = model.score(ex, spanset)
        assert model.training
        assert len(ns) == len(cs) == spanset.m
        assert all(isinstance(v, float) and 0 < v < 1 for v in ns + cs)

    def test_validate_catches_broken_weights(self):
        model = self._model()
        spanset = model.segmenter.segment("a dog runs.")
        scores = model.forward(["a", "dog"], list(spanset.token_strings()), spanset)
        import dataclasses

        bad_head = dataclasses.replace(
            scores.neutral, attention_weights=scores.neutral.attention_weights * 2
        )
        with pytest.raises(ModelError, match="sum"):
            dataclasses.replace(scores, neutral=bad_head).validate()


class TestConfigFingerprint:
    def test_stable_for_equal_inputs(self):
        a = config_fingerprint({"k": 3}, {"type": "toy"}, 8)
        b = config_fingerprint({"k": 3}, {"type": "toy"}, 8)
        assert a == b and len(a) == 64

    def test_any_field_change_shows(self):
        base = config_fingerprint({"k": 3}, {"type": "toy"}, 8)
        assert config_fingerprint({"k": 2}, {"type": "toy"}, 8) != base
        assert config_fingerprint({"k": 3}, {"type": "toy", "d": 1}, 8) != base
        assert config_fingerprint({"k": 3}, {"type": "toy"}, 9) != base


class TestCheckpoints:
    def _model(self, seed=0, buckets=64):
        torch.manual_seed(seed)
        return SpanModel(
            ToyEncoder(dimension=12, buckets=buckets, embed_dim=6),
            Segmenter(max_run_length=3),
            head_hidden=5,
        )

    def test_round_trip_reproduces_scores(self, tmp_path):
        model = self._model()
        path = tmp_path / "model.pt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        ex = NLIExample("x", "a dog runs.", "a cat sits.", Label.CONTRADICTION)
        spanset = model.segmenter.segment(ex.hypothesis)
        assert loaded.score(ex, spanset) == model.score(ex, spanset)
        assert loaded.fingerprint() == model.fingerprint()

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(CheckpointError, match="no checkpoint"):
            load_checkpoint(tmp_path / "absent.pt")

    def test_garbage_file_rejected(self, tmp_path):
        path = tmp_path / "junk.pt"
        path.write_text("not a checkpoint")
        with pytest.raises(CheckpointError, match="could not read"):
            load_checkpoint(path)

    def test_unrecognized_payload_rejected(self, tmp_path):
        path = tmp_path / "odd.pt"
        torch.save({"weights": []}, path)
        with pytest.raises(CheckpointError, match="not a recognized"):
            load_checkpoint(path)

    def test_future_format_version_rejected(self, tmp_path):
        path = tmp_path / "model.pt"
        save_checkpoint(self._model(), path)
        payload = torch.load(path, weights_only=False)
        payload["format_version"] = CHECKPOINT_FORMAT_VERSION + 1
        torch.save(payload, path)
        with pytest.raises(CheckpointError, match="unsupported"):
            load_checkpoint(path)

    def test_tampered_config_rejected(self, tmp_path):
        path = tmp_path / "model.pt"
        save_checkpoint(self._model(), path)
        payload = torch.load(path, weights_only=False)
        payload["encoder_spec"]["buckets"] = 999
        torch.save(payload, path)
        with pytest.raises(CheckpointError, match="fingerprint"):
            load_checkpoint(path)

    def test_foreign_fingerprint_rejected(self, tmp_path):
        path = tmp_path / "model.pt"
        save_checkpoint(self._model(buckets=64), path)
        other = self._model(buckets=128)
        with pytest.raises(CheckpointError, match="different segmenter/encoder"):
            load_checkpoint(path, expected_fingerprint=other.fingerprint())

    def test_chunker_mismatch_warns(self, tmp_path, caplog):
        path = tmp_path / "model.pt"
        save_checkpoint(self._model(), path)
        sidecar = SidecarChunker({"x": [(0, 3)]})
        with caplog.at_level("WARNING"):
            load_checkpoint(path, chunker=sidecar)
        assert "rule-v1" in caplog.text


class TestGoldenForward:
    """Frozen regression values; regenerate with data/make_golden.py after
    a deliberate scoring change."""

    def test_frozen_scores_still_reproduce(self):
        blob = json.loads(GOLDEN_DATA.read_text())
        torch.manual_seed(blob["seed"])
        model = SpanModel(
            ToyEncoder(**blob["encoder"]),
            Segmenter(max_run_length=blob["max_run_length"]),
            head_hidden=blob["head_hidden"],
        )
        ex = NLIExample("g", blob["premise"], blob["hypothesis"], Label.NEUTRAL)
        spanset = model.segmenter.segment(ex.hypothesis)
        ns, cs = model.score(ex, spanset)
        assert ns == pytest.approx(blob["neutral_raw"], abs=1e-6)
        assert cs == pytest.approx(blob["contradiction_raw"], abs=1e-6)
        assert blob["bucket_samples"] == {
            t: ToyEncoder(**blob["encoder"]).bucket(t)
            for t in blob["bucket_samples"]
        }
