"""Encoders and detection heads.

Each hypothesis span is encoded together with the premise, with the
rest of the hypothesis masked out, giving one pooled vector per span.
Two independent detection heads (neutral, contradiction) then score
every span: a gated attention value in (0, 1), a span logit, and an
attention-weighted sentence logit.

Encoders are pluggable behind :class:`SpanPairEncoder`. The built-in
:class:`ToyEncoder` is a hash-bucket embedding averager that trains in
seconds on CPU; :class:`TransformerSpanEncoder` wraps any Hugging Face
bidirectional encoder when the optional ``transformers`` dependency is
installed.
"""

from __future__ import annotations

import abc
import hashlib
import json
import logging
import os
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import torch
from torch import Tensor, nn

from .errors import CheckpointError, ModelError
from .segmenter import Segmenter, Span, SpanSet, tokenize

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


def mask_hypothesis(
    tokens: Sequence[str], span: Span, mask_token: str
) -> tuple[str, ...]:
    """Replace every hypothesis token outside the span with the mask
    placeholder, keeping positions and length intact."""
    if not (0 <= span.start < span.end <= len(tokens)):
        raise ModelError(
            f"span [{span.start}, {span.end}) out of range for "
            f"{len(tokens)} tokens"
        )
    return tuple(
        tok if span.start <= i < span.end else mask_token
        for i, tok in enumerate(tokens)
    )


class SpanPairEncoder(nn.Module, abc.ABC):
    """Maps (premise tokens, masked hypothesis tokens) to one pooled
    vector of fixed dimension."""

    dimension: int
    mask_token: str

    @abc.abstractmethod
    def encode_pairs(
        self,
        premise_tokens: Sequence[str],
        masked_hypotheses: Sequence[Sequence[str]],
    ) -> Tensor:
        """Encode one premise against a batch of masked hypotheses;
        returns a [batch, dimension] tensor."""

    @abc.abstractmethod
    def spec(self) -> dict:
        """Constructor arguments for checkpoint round-trips."""

    def encode_spans(
        self,
        premise_tokens: Sequence[str],
        hypothesis_tokens: Sequence[str],
        spans: Sequence[Span],
    ) -> Tensor:
        masked = [mask_hypothesis(hypothesis_tokens, s, self.mask_token) for s in spans]
        return self.encode_pairs(premise_tokens, masked)

    def encode_span(
        self,
        premise_tokens: Sequence[str],
        hypothesis_tokens: Sequence[str],
        span: Span,
    ) -> Tensor:
        return self.encode_spans(premise_tokens, hypothesis_tokens, [span])[0]


class ToyEncoder(SpanPairEncoder):
    """Deterministic bag-of-buckets encoder for desk-scale runs.

    Tokens hash into a fixed embedding table (crc32, stable across
    processes and platforms), one reserved row serving as the mask
    embedding. Premise and masked hypothesis are mean-pooled separately,
    concatenated, and passed through one tanh layer.
    """

    mask_token = "[MASK]"

    def __init__(self, dimension: int = 64, buckets: int = 4096, embed_dim: int = 32):
        super().__init__()
        if dimension < 1 or buckets < 2 or embed_dim < 1:
            raise ModelError("toy encoder sizes must be positive (buckets >= 2)")
        self.dimension = dimension
        self.buckets = buckets
        self.embed_dim = embed_dim
        self.embedding = nn.Embedding(buckets, embed_dim)
        self.project = nn.Linear(2 * embed_dim, dimension)

    def spec(self) -> dict:
        return {
            "type": "toy",
            "dimension": self.dimension,
            "buckets": self.buckets,
            "embed_dim": self.embed_dim,
        }

    def bucket(self, token: str) -> int:
        if token == self.mask_token:
            return 0
        # row 0 is reserved for the mask embedding
        return zlib.crc32(token.lower().encode("utf-8")) % (self.buckets - 1) + 1

    def _mean_embedding(self, rows: Sequence[Sequence[str]]) -> Tensor:
        dtype = self.embedding.weight.dtype
        device = self.embedding.weight.device
        out = []
        for row in rows:
            idx = torch.tensor(
                [self.bucket(t) for t in row], dtype=torch.long, device=device
            )
            out.append(self.embedding(idx).mean(dim=0))
        return torch.stack(out).to(dtype)

    def encode_pairs(
        self,
        premise_tokens: Sequence[str],
        masked_hypotheses: Sequence[Sequence[str]],
    ) -> Tensor:
        if not premise_tokens or not masked_hypotheses:
            raise ModelError("need a premise and at least one masked hypothesis")
        prem = self._mean_embedding([premise_tokens])
        prem = prem.expand(len(masked_hypotheses), -1)
        hyp = self._mean_embedding(masked_hypotheses)
        return torch.tanh(self.project(torch.cat([prem, hyp], dim=1)))


class TransformerSpanEncoder(SpanPairEncoder):
    """Hugging Face encoder adapter; pools the classification position.

    Sequences over the model limit are truncated from the premise side
    with a one-time warning. Requires the ``transformers`` extra.
    """

    def __init__(self, model_name: str, max_length: int | None = None):
        super().__init__()
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:  # pragma: no cover - env dependent
            raise ModelError(
                "transformers is not installed; use the 'hf' extra"
            ) from exc
        self.model_name = model_name
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.encoder = AutoModel.from_pretrained(model_name)
        self.dimension = int(self.encoder.config.hidden_size)
        self.mask_token = self.tokenizer.mask_token or "[MASK]"
        limit = max_length or getattr(self.tokenizer, "model_max_length", 512)
        # some tokenizers report a sentinel of ~1e30 when unset
        self.max_length = min(int(limit), 512) if limit else 512
        self._warned_truncation = False

    def spec(self) -> dict:
        return {
            "type": "transformer",
            "model_name": self.model_name,
            "max_length": self.max_length,
        }

    def encode_pairs(
        self,
        premise_tokens: Sequence[str],
        masked_hypotheses: Sequence[Sequence[str]],
    ) -> Tensor:
        if not premise_tokens or not masked_hypotheses:
            raise ModelError("need a premise and at least one masked hypothesis")
        premise = " ".join(premise_tokens)
        pairs = ([premise] * len(masked_hypotheses), [" ".join(h) for h in masked_hypotheses])
        probe = self.tokenizer(*pairs, truncation=False, padding=True)
        longest = max(len(ids) for ids in probe["input_ids"])
        if longest > self.max_length and not self._warned_truncation:
            self._warned_truncation = True
            logger.warning(
                "sequence of %d tokens exceeds encoder limit %d; "
                "truncating the premise tail",
                longest,
                self.max_length,
            )
        enc = self.tokenizer(
            *pairs,
            truncation="only_first",
            max_length=self.max_length,
            padding=True,
            return_tensors="pt",
        )
        enc = {k: v.to(self.encoder.device) for k, v in enc.items()}
        out = self.encoder(**enc)
        return out.last_hidden_state[:, 0, :]


class DetectionHead(nn.Module):
    """One class's scoring stack: gated attention, span logit, and the
    affine squash applied to the sentence logit."""

    def __init__(self, dimension: int, hidden: int | None = None):
        super().__init__()
        if dimension < 1:
            raise ModelError("head dimension must be positive")
        self.dimension = dimension
        self.hidden = hidden if hidden is not None else dimension
        self.att_hidden = nn.Linear(dimension, self.hidden)
        self.att_out = nn.Linear(self.hidden, 1)
        self.span_logit = nn.Linear(dimension, 1)
        self.sent_scale = nn.Parameter(torch.ones(1))
        self.sent_bias = nn.Parameter(torch.zeros(1))

    def attention_scores(self, h: Tensor) -> Tensor:
        """Unnormalized attention per span, sigmoid-gated into (0, 1).

        Saturated values are nudged off the exact 0/1 boundary so the
        attention normalizer never divides by zero.
        """
        raw = torch.sigmoid(self.att_out(torch.tanh(self.att_hidden(h)))).squeeze(-1)
        eps = torch.finfo(raw.dtype).eps
        return raw.clamp(eps, 1.0 - eps)

    def span_logits(self, h: Tensor) -> Tensor:
        return self.span_logit(h).squeeze(-1)

    def sentence_probability(self, sentence_logit: Tensor) -> Tensor:
        return torch.sigmoid(self.sent_scale * sentence_logit + self.sent_bias).squeeze()


def normalize_attention(raw: Tensor) -> Tensor:
    """Scale positive attention values to a distribution summing to 1."""
    if raw.numel() == 0:
        raise ModelError("cannot normalize an empty attention vector")
    if (raw <= 0).any():
        raise ModelError("attention values must be strictly positive")
    return raw / raw.sum()


def sentence_logit(weights: Tensor, logits: Tensor) -> Tensor:
    """Attention-weighted sum of per-span logits."""
    if weights.shape != logits.shape:
        raise ModelError(
            f"weights shape {tuple(weights.shape)} != logits shape "
            f"{tuple(logits.shape)}"
        )
    return (weights * logits).sum()


@dataclass(frozen=True)
class HeadScores:
    """One head's outputs over the m spans of a single example."""

    raw_attention: Tensor  # [m], each strictly in (0, 1)
    attention_weights: Tensor  # [m], sums to 1
    span_logits: Tensor  # [m]
    sentence_logit: Tensor  # scalar
    sentence_probability: Tensor  # scalar in (0, 1)


@dataclass(frozen=True)
class SpanScores:
    """Everything the forward pass produces for one example."""

    hidden: Tensor  # [m, d], shared by both heads
    neutral: HeadScores
    contradiction: HeadScores

    @property
    def m(self) -> int:
        return self.hidden.shape[0]

    def validate(self) -> None:
        for name, head in (("neutral", self.neutral), ("contradiction", self.contradiction)):
            if head.raw_attention.shape != (self.m,):
                raise ModelError(f"{name} raw attention has wrong shape")
            if ((head.raw_attention <= 0) | (head.raw_attention >= 1)).any():
                raise ModelError(f"{name} raw attention left (0, 1)")
            total = float(head.attention_weights.detach().sum())
            if abs(total - 1.0) > 1e-6:
                raise ModelError(f"{name} attention weights sum to {total}")


class SpanModel(nn.Module):
    """Full scorer: one shared encoder pass per span, two heads on top."""

    def __init__(
        self,
        encoder: SpanPairEncoder,
        segmenter: Segmenter,
        head_hidden: int | None = None,
    ):
        super().__init__()
        self.encoder = encoder
        self.segmenter = segmenter
        self.neutral_head = DetectionHead(encoder.dimension, head_hidden)
        self.contradiction_head = DetectionHead(encoder.dimension, head_hidden)

    def _head_scores(self, head: DetectionHead, hidden: Tensor) -> HeadScores:
        raw = head.attention_scores(hidden)
        weights = normalize_attention(raw)
        logits = head.span_logits(hidden)
        sent = sentence_logit(weights, logits)
        return HeadScores(
            raw_attention=raw,
            attention_weights=weights,
            span_logits=logits,
            sentence_logit=sent,
            sentence_probability=head.sentence_probability(sent),
        )

    def forward(
        self,
        premise_tokens: Sequence[str],
        hypothesis_tokens: Sequence[str],
        spanset: SpanSet,
    ) -> SpanScores:
        spans = spanset.all_spans()
        hidden = self.encoder.encode_spans(premise_tokens, hypothesis_tokens, spans)
        return SpanScores(
            hidden=hidden,
            neutral=self._head_scores(self.neutral_head, hidden),
            contradiction=self._head_scores(self.contradiction_head, hidden),
        )

    @torch.no_grad()
    def score(self, example, spanset: SpanSet) -> tuple[list[float], list[float]]:
        """Inference entry point: raw attention values per head as plain
        floats, computed in eval mode."""
        was_training = self.training
        self.eval()
        try:
            premise_tokens = [t.text for t in tokenize(example.premise)]
            scores = self.forward(premise_tokens, spanset.token_strings(), spanset)
        finally:
            self.train(was_training)
        return (
            [float(v) for v in scores.neutral.raw_attention],
            [float(v) for v in scores.contradiction.raw_attention],
        )

    def fingerprint(self) -> str:
        return config_fingerprint(
            self.segmenter.fingerprint_fields(),
            self.encoder.spec(),
            self.neutral_head.hidden,
        )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def config_fingerprint(
    segmenter_fields: dict, encoder_spec: dict, head_hidden: int
) -> str:
    """Stable digest of everything a checkpoint's weights depend on."""
    fields = dict(segmenter_fields)
    fields["encoder"] = encoder_spec
    fields["head_hidden"] = head_hidden
    blob = json.dumps(fields, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


_ENCODER_BUILDERS: dict[str, Callable[[dict], SpanPairEncoder]] = {
    "toy": lambda spec: ToyEncoder(
        dimension=spec["dimension"],
        buckets=spec["buckets"],
        embed_dim=spec["embed_dim"],
    ),
    "transformer": lambda spec: TransformerSpanEncoder(
        model_name=spec["model_name"], max_length=spec.get("max_length")
    ),
}


def save_checkpoint(model: SpanModel, path: str | Path) -> None:
    """Write model weights plus the config fingerprint, atomically."""
    path = Path(path)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "fingerprint": model.fingerprint(),
        "segmenter": model.segmenter.fingerprint_fields(),
        "encoder_spec": model.encoder.spec(),
        "head_hidden": model.neutral_head.hidden,
        "state_dict": model.state_dict(),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(
    path: str | Path,
    expected_fingerprint: str | None = None,
    chunker=None,
) -> SpanModel:
    """Rebuild a model from disk; refuses configs that do not match.

    A caller holding a segmenter/encoder setup passes its fingerprint so
    stale checkpoints fail loudly instead of silently mis-scoring. A
    checkpoint trained with a non-default chunker needs that chunker
    passed back in; otherwise segmentation falls back to the rule
    chunker with a warning.
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"could not read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a recognized checkpoint file")
    if payload["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format {payload['format_version']} unsupported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    stored = config_fingerprint(
        payload["segmenter"], payload["encoder_spec"], payload["head_hidden"]
    )
    if stored != payload["fingerprint"]:
        raise CheckpointError("checkpoint fingerprint does not match its contents")
    if expected_fingerprint is not None and stored != expected_fingerprint:
        raise CheckpointError(
            "checkpoint was built under a different segmenter/encoder "
            f"config (stored {stored[:12]}, expected "
            f"{expected_fingerprint[:12]})"
        )
    spec = payload["encoder_spec"]
    builder = _ENCODER_BUILDERS.get(spec.get("type"))
    if builder is None:
        raise CheckpointError(f"unknown encoder type {spec.get('type')!r}")
    encoder = builder(spec)
    seg_fields = payload["segmenter"]
    segmenter = Segmenter(
        max_run_length=seg_fields["max_run_length"], chunker=chunker
    )
    if segmenter.chunker.name != seg_fields["chunker"]:
        logger.warning(
            "checkpoint was segmented with %r but %r is active; spans "
            "may differ from training",
            seg_fields["chunker"],
            segmenter.chunker.name,
        )
    model = SpanModel(encoder, segmenter, head_hidden=payload["head_hidden"])
    model.load_state_dict(payload["state_dict"])
    return model
