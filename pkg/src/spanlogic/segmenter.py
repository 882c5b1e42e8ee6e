"""Hypothesis segmentation into noun-phrase-anchored spans.

The pipeline: tokenize, part-of-speech tag (small rule tagger or sidecar
tags), chunk noun phrases, cut the hypothesis into granular spans (one
per noun phrase, each absorbing the text since the previous one), then
extend with composite spans built from short runs of consecutive
granular spans.

Chunking is pluggable: the built-in :class:`RuleChunker` applies a
greedy pattern over coarse tags, and :class:`SidecarChunker` reads
precomputed noun-phrase character ranges keyed by example id, which lets
any external chunker drive segmentation.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .errors import SegmentationError

TOKENIZER_VERSION = "regex-v1"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


@dataclass(frozen=True)
class Token:
    text: str
    start: int  # character offset, inclusive
    end: int  # character offset, exclusive


def tokenize(text: str) -> tuple[Token, ...]:
    """Split text into word/punctuation tokens with character offsets.

    Offsets index the original string, so any span of tokens can be
    rendered back to its exact surface form.
    """
    if not text or not text.strip():
        raise SegmentationError("cannot tokenize empty text")
    return tuple(
        Token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)
    )


# ---------------------------------------------------------------------------
# Part-of-speech tagging (coarse universal-style tags)
# ---------------------------------------------------------------------------

DETERMINERS = frozenset(
    """a an the this that these those my your his her its our their some any no
    each every either neither another both all several few many much most such
    what which whose""".split()
)

PRONOUNS = frozenset(
    """i you he she it we they me him them us someone somebody something anyone
    anybody anything everyone everybody everything nobody nothing one who whom
    himself herself itself themselves myself yourself ourselves mine yours hers
    ours theirs""".split()
)

ADPOSITIONS = frozenset(
    """in on at by with without of for from to into onto over under near behind
    beside between through across against during about around above below after
    before along among within outside inside toward towards past off out up down
    upon beneath underneath via per amid atop""".split()
)

CONJUNCTIONS = frozenset(
    """and or but nor so yet while because although though if when as than
    whether since unless until where whereas""".split()
)

AUXILIARIES = frozenset(
    """is are was were be been being am has have had having do does did will
    would can could shall should may might must not n't""".split()
)

ADVERBS = frozenset(
    """very quite too also just only even still again never always often
    sometimes here there now then away back together apart quickly slowly""".split()
)

ADJECTIVES = frozenset(
    """red blue green black white brown yellow orange purple pink gray grey big
    small large little old young tall short happy sad wet dry hot cold new good
    bad long high low open closed empty full busy shiny wooden metal plastic
    dark light bright heavy tiny huge dirty clean warm cool fast slow beautiful
    pretty ugly nice angry tired hungry asleep several colorful striped""".split()
)

VERB_STEMS = frozenset(
    """walk run carry wear play sit stand ride hold jump look eat go make take
    swim climb talk speak smile laugh sleep read write drink throw catch kick
    dance sing cook drive fly watch see say get give come know work use find
    tell put lean rest wait raise point perform juggle surf ski skate hike
    pedal race chase pull push lift bend kneel crouch stare gaze wave clap
    shout whisper sell buy serve paint draw build dig wash brush feed pet kiss
    hug greet follow lead cross enter leave arrive travel move turn bite lick
    sniff bark meow splash dive float slide swing hang grab pick show win lose
    help teach learn listen hear touch smell taste begin start finish stop keep
    stay remain appear seem become cut chop slice stir pour fill cover remove
    open close shut visit meet pose balance stretch twirl march stroll jog
    sprint gallop trot wander roam flee escape hide seek search examine inspect
    observe study type scroll browse film photograph record describe discuss
    argue debate agree plan prepare practice train compete relax enjoy
    celebrate""".split()
)

_IRREGULAR_VERBS = frozenset(
    """ran wore sat rode held ate went made took swam spoke slept wrote drank
    threw caught sang drove flew saw said got gave came knew found told leaned
    stood bent knelt sold bought drew dug fed led left arrived bit hid sought
    won lost taught heard began kept appeared became chopped stirred shut met
    fell fallen done gone seen eaten ridden written driven flown thrown given
    taken known worn hidden sung swum drunk spoken woken slid hung""".split()
)


def _verb_stem_match(word: str) -> bool:
    if word in VERB_STEMS or word in _IRREGULAR_VERBS:
        return True
    for suffix in ("ing", "ed", "es", "s"):
        if word.endswith(suffix) and len(word) > len(suffix) + 1:
            base = word[: -len(suffix)]
            if base in VERB_STEMS:
                return True
            # doubled final consonant: running -> run
            if len(base) >= 2 and base[-1] == base[-2] and base[:-1] in VERB_STEMS:
                return True
            # dropped final e: riding -> ride; carries -> carry
            if base + "e" in VERB_STEMS:
                return True
            if base.endswith("i") and base[:-1] + "y" in VERB_STEMS:
                return True
    return False


_ADJ_SUFFIXES = ("ous", "ful", "ive", "less", "able", "ible", "ish")


def pos_tag(tokens: Sequence[Token]) -> tuple[str, ...]:
    """Assign a coarse tag to each token with lexicon and suffix rules.

    Unknown open-class words default to NOUN; capitalized non-initial
    words become PROPN. ``-ing`` forms after a determiner or adjective
    are treated as nominal.
    """
    tags: list[str] = []
    for idx, token in enumerate(tokens):
        word = token.text
        lower = word.lower()
        if not any(ch.isalnum() for ch in word):
            tags.append("PUNCT")
        elif word.replace(",", "").replace(".", "").isdigit():
            tags.append("NUM")
        elif lower in DETERMINERS:
            tags.append("DET")
        elif lower in PRONOUNS:
            tags.append("PRON")
        elif lower in ADPOSITIONS:
            tags.append("ADP")
        elif lower in CONJUNCTIONS:
            tags.append("CONJ")
        elif lower in AUXILIARIES:
            tags.append("AUX")
        elif lower in ADVERBS or (lower.endswith("ly") and len(lower) > 3):
            tags.append("ADV")
        elif lower in ADJECTIVES or lower.endswith(_ADJ_SUFFIXES):
            tags.append("ADJ")
        elif _verb_stem_match(lower):
            if lower.endswith("ing") and tags and tags[-1] in ("DET", "ADJ", "NUM"):
                tags.append("NOUN")
            else:
                tags.append("VERB")
        elif lower.endswith("ing") and len(lower) > 4:
            if tags and tags[-1] in ("DET", "ADJ", "NUM"):
                tags.append("NOUN")
            else:
                tags.append("VERB")
        elif word[0].isupper() and idx > 0:
            tags.append("PROPN")
        else:
            tags.append("NOUN")
    return tuple(tags)


_NOMINAL = ("NOUN", "PROPN")
_MODIFIER = ("ADJ", "NUM")


def chunk_noun_phrases(
    tokens: Sequence[Token], pos_tags: Sequence[str]
) -> tuple[tuple[int, int], ...]:
    """Find noun-phrase token ranges with a greedy longest-match rule.

    Pattern: optional determiner/possessive, any adjectives or numerals,
    one or more nouns; standalone pronouns also count. Ranges are
    non-overlapping and in left-to-right order.
    """
    if len(tokens) != len(pos_tags):
        raise SegmentationError(
            f"got {len(tokens)} tokens but {len(pos_tags)} tags"
        )
    ranges: list[tuple[int, int]] = []
    n = len(tokens)
    i = 0
    while i < n:
        j = i
        if pos_tags[j] == "DET":
            j += 1
        while j < n and pos_tags[j] in _MODIFIER:
            j += 1
        head_start = j
        while j < n and pos_tags[j] in _NOMINAL:
            j += 1
        if j > head_start:
            ranges.append((i, j))
            i = j
        elif pos_tags[i] == "PRON":
            ranges.append((i, i + 1))
            i += 1
        else:
            i += 1
    return tuple(ranges)


# ---------------------------------------------------------------------------
# Spans
# ---------------------------------------------------------------------------


class SpanKind(str, Enum):
    GRANULAR = "granular"
    COMPOSITE = "composite"


@dataclass(frozen=True)
class Span:
    """A contiguous token range of the hypothesis.

    ``constituents`` lists the indices of the granular spans the range is
    built from (a single index for granular spans).
    """

    start: int  # token index, inclusive
    end: int  # token index, exclusive
    constituents: tuple[int, ...]
    kind: SpanKind

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise SegmentationError(f"empty span [{self.start}, {self.end})")
        if (self.kind == SpanKind.GRANULAR) != (len(self.constituents) == 1):
            raise SegmentationError("granular spans have exactly one constituent")

    def contains(self, other: "Span") -> bool:
        return self.start <= other.start and other.end <= self.end


@dataclass(frozen=True)
class SpanSet:
    """Granular spans tiling a hypothesis plus composite extensions."""

    text: str
    hypothesis_tokens: tuple[Token, ...]
    granular: tuple[Span, ...]
    composites: tuple[Span, ...] = ()

    def __post_init__(self) -> None:
        if not self.granular:
            raise SegmentationError("a span set needs at least one granular span")
        expected = 0
        for span in self.granular:
            if span.start != expected:
                raise SegmentationError("granular spans must tile the hypothesis")
            expected = span.end
        if expected != len(self.hypothesis_tokens):
            raise SegmentationError("granular spans must cover every token")
        seen = {(s.start, s.end) for s in self.granular}
        for span in self.composites:
            run = span.constituents
            if len(run) < 2 or list(run) != list(range(run[0], run[-1] + 1)):
                raise SegmentationError("composite must span consecutive granulars")
            if span.start != self.granular[run[0]].start or span.end != self.granular[run[-1]].end:
                raise SegmentationError("composite range must match its constituents")
            if (span.start, span.end) in seen:
                raise SegmentationError("duplicate span token range")
            seen.add((span.start, span.end))

    @property
    def m(self) -> int:
        return len(self.granular) + len(self.composites)

    def all_spans(self) -> tuple[Span, ...]:
        """Canonical span order used for every per-span vector: granular
        spans first, then composites."""
        return self.granular + self.composites

    def token_strings(self) -> tuple[str, ...]:
        return tuple(t.text for t in self.hypothesis_tokens)

    def span_text(self, span: Span) -> str:
        first = self.hypothesis_tokens[span.start]
        last = self.hypothesis_tokens[span.end - 1]
        return self.text[first.start : last.end]

    def to_debug_dict(self) -> dict:
        def span_entry(span: Span) -> dict:
            return {
                "text": self.span_text(span),
                "start": span.start,
                "end": span.end,
                "constituents": list(span.constituents),
                "kind": span.kind.value,
            }

        return {
            "text": self.text,
            "tokens": [
                {"text": t.text, "start": t.start, "end": t.end}
                for t in self.hypothesis_tokens
            ],
            "spans": [span_entry(s) for s in self.all_spans()],
        }


def segment_granular(
    text: str,
    tokens: Sequence[Token],
    np_ranges: Sequence[tuple[int, int]],
) -> SpanSet:
    """Cut the hypothesis into granular spans anchored on noun phrases.

    Each span covers one noun phrase plus all text since the previous
    noun phrase; the first span starts at token 0 and the last span
    absorbs any trailing text. With no noun phrases the whole hypothesis
    becomes a single span.
    """
    n = len(tokens)
    for lo, hi in np_ranges:
        if not (0 <= lo < hi <= n):
            raise SegmentationError(f"noun-phrase range [{lo}, {hi}) out of bounds")
    starts = [lo for lo, _ in np_ranges]
    if starts != sorted(starts):
        raise SegmentationError("noun-phrase ranges must be ordered")

    if not np_ranges:
        spans = [Span(0, n, (0,), SpanKind.GRANULAR)]
    else:
        spans = []
        cursor = 0
        for idx, (_, np_end) in enumerate(np_ranges):
            end = n if idx == len(np_ranges) - 1 else np_end
            spans.append(Span(cursor, end, (idx,), SpanKind.GRANULAR))
            cursor = end
    return SpanSet(text, tuple(tokens), tuple(spans))


def extend_with_composites(spanset: SpanSet, max_run_length: int) -> SpanSet:
    """Add one composite span per run of 2..max_run_length consecutive
    granular spans, ordered by run length then position."""
    if max_run_length < 1:
        raise SegmentationError("max_run_length must be >= 1")
    g = len(spanset.granular)
    composites = []
    for length in range(2, min(max_run_length, g) + 1):
        for first in range(g - length + 1):
            run = tuple(range(first, first + length))
            composites.append(
                Span(
                    spanset.granular[first].start,
                    spanset.granular[first + length - 1].end,
                    run,
                    SpanKind.COMPOSITE,
                )
            )
    return SpanSet(
        spanset.text, spanset.hypothesis_tokens, spanset.granular, tuple(composites)
    )


def apply_composite_dropout(
    spanset: SpanSet, rate: float, rng: random.Random
) -> SpanSet:
    """With probability ``rate`` remove every composite span; otherwise
    return the span set unchanged. Granular spans are never removed."""
    if not 0.0 <= rate <= 1.0:
        raise SegmentationError(f"dropout rate {rate} outside [0, 1]")
    if rate > 0.0 and rng.random() < rate:
        return SpanSet(spanset.text, spanset.hypothesis_tokens, spanset.granular, ())
    return spanset


@dataclass(frozen=True)
class RationaleAlignment:
    """Per-span containment mask for one highlight rationale.

    ``mask[i]`` is 1 exactly when span i covers the full rationale range;
    the mask is all-zero when the rationale is absent or not a single
    consecutive token run.
    """

    mask: tuple[int, ...]
    single_consecutive: bool


def align_rationale(
    spanset: SpanSet, rationale: Iterable[int] | None
) -> RationaleAlignment:
    spans = spanset.all_spans()
    indices = sorted(set(rationale)) if rationale is not None else []
    if not indices:
        return RationaleAlignment((0,) * len(spans), False)
    n = len(spanset.hypothesis_tokens)
    if indices[0] < 0 or indices[-1] >= n:
        raise SegmentationError(
            f"rationale indices {indices} outside hypothesis of {n} tokens"
        )
    contiguous = indices[-1] - indices[0] + 1 == len(indices)
    if not contiguous:
        return RationaleAlignment((0,) * len(spans), False)
    lo, hi = indices[0], indices[-1]
    mask = tuple(1 if s.start <= lo and hi < s.end else 0 for s in spans)
    return RationaleAlignment(mask, True)


# ---------------------------------------------------------------------------
# Pluggable chunkers and the segmenter facade
# ---------------------------------------------------------------------------


class Chunker(Protocol):
    name: str

    def chunk(
        self, text: str, tokens: Sequence[Token], example_id: str | None = None
    ) -> tuple[tuple[int, int], ...]: ...


class RuleChunker:
    """Reference chunker: rule tagger (or sidecar tags) + greedy pattern."""

    name = "rule-v1"

    def __init__(self, pos_sidecar: dict[str, Sequence[str]] | None = None):
        self.pos_sidecar = pos_sidecar or {}

    def chunk(
        self, text: str, tokens: Sequence[Token], example_id: str | None = None
    ) -> tuple[tuple[int, int], ...]:
        if example_id is not None and example_id in self.pos_sidecar:
            tags = tuple(self.pos_sidecar[example_id])
        else:
            tags = pos_tag(tokens)
        return chunk_noun_phrases(tokens, tags)


class SidecarChunker:
    """Chunker driven by precomputed noun-phrase character ranges."""

    name = "np-sidecar"

    def __init__(self, ranges_by_id: dict[str, Sequence[Sequence[int]]]):
        self.ranges_by_id = ranges_by_id

    def chunk(
        self, text: str, tokens: Sequence[Token], example_id: str | None = None
    ) -> tuple[tuple[int, int], ...]:
        if example_id is None or example_id not in self.ranges_by_id:
            raise SegmentationError(
                f"no sidecar noun-phrase ranges for example {example_id!r}"
            )
        out = []
        for lo, hi in self.ranges_by_id[example_id]:
            covered = [
                i for i, t in enumerate(tokens) if t.start < hi and t.end > lo
            ]
            if covered:
                out.append((covered[0], covered[-1] + 1))
        return tuple(out)


def load_np_sidecar(path: str | Path) -> dict[str, list[list[int]]]:
    """Read a noun-phrase sidecar: JSONL of id + character ranges."""
    out: dict[str, list[list[int]]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            out[str(row["id"])] = [list(r) for r in row["np_char_ranges"]]
    return out


def load_pos_sidecar(path: str | Path) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            out[str(row["id"])] = [str(t) for t in row["pos_tags"]]
    return out


class Segmenter:
    """Facade running the full tokenize/chunk/segment/extend pipeline."""

    def __init__(self, max_run_length: int = 3, chunker: Chunker | None = None):
        if max_run_length < 1:
            raise SegmentationError("max_run_length must be >= 1")
        self.max_run_length = max_run_length
        self.chunker: Chunker = chunker if chunker is not None else RuleChunker()

    def segment(self, text: str, example_id: str | None = None) -> SpanSet:
        tokens = tokenize(text)
        np_ranges = self.chunker.chunk(text, tokens, example_id)
        spanset = segment_granular(text, tokens, np_ranges)
        return extend_with_composites(spanset, self.max_run_length)

    def fingerprint_fields(self) -> dict:
        return {
            "tokenizer": TOKENIZER_VERSION,
            "chunker": self.chunker.name,
            "max_run_length": self.max_run_length,
        }
