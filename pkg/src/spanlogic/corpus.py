"""Dataset ingestion for premise/hypothesis classification corpora.

Supported source formats:

* SNLI / MNLI JSON-lines (``sentence1``, ``sentence2``, ``gold_label``,
  optional ``pairID``).
* SICK tab-separated (``pair_ID``, ``sentence_A``, ``sentence_B`` and an
  entailment label column; upper-case labels are normalized).
* HANS tab-separated (``sentence1``, ``sentence2``, ``gold_label``); the
  two-way ``non-entailment`` label is stored as ``neutral`` and collapsed
  again at evaluation time, so the two-class gold is preserved exactly.
* The canonical JSON-lines interchange format written by
  :func:`save_canonical`.

Rationale files (e-SNLI CSV exports or canonical JSONL highlights) attach
token-level highlight sets to already-loaded examples.
"""

from __future__ import annotations

import csv
import json
import logging
import random
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

from .errors import DataError

logger = logging.getLogger(__name__)


class Label(str, Enum):
    ENTAILMENT = "entailment"
    NEUTRAL = "neutral"
    CONTRADICTION = "contradiction"

    @classmethod
    def from_string(cls, raw: str) -> "Label":
        try:
            return cls(raw.strip().lower())
        except ValueError:
            raise DataError(f"unknown label string: {raw!r}") from None


class DataFormat(str, Enum):
    SNLI_JSONL = "snli_jsonl"
    MNLI_JSONL = "mnli_jsonl"
    SICK_TSV = "sick_tsv"
    HANS_TSV = "hans_tsv"
    CANONICAL_JSONL = "canonical_jsonl"


# Labels that mark an example as unresolved rather than malformed.
_UNLABELED = {"", "-"}

# Maximum rationale annotation variants kept per example.
MAX_RATIONALE_VARIANTS = 3


@dataclass(frozen=True)
class NLIExample:
    """One premise/hypothesis pair with its gold label.

    ``rationales`` holds zero or more annotation variants, each a sorted
    tuple of 0-based hypothesis token indices.
    """

    id: str
    premise: str
    hypothesis: str
    gold: Label
    rationales: tuple[tuple[int, ...], ...] = ()

    @property
    def rationale(self) -> tuple[int, ...] | None:
        """First annotation variant, or None when no rationale is attached."""
        return self.rationales[0] if self.rationales else None


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    examples: tuple[NLIExample, ...]
    source_format: DataFormat | None = None

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[NLIExample]:
        return iter(self.examples)

    @cached_property
    def by_id(self) -> dict[str, NLIExample]:
        return {ex.id: ex for ex in self.examples}

    def __post_init__(self) -> None:
        ids = [ex.id for ex in self.examples]
        if len(ids) != len(set(ids)):
            raise DataError(f"duplicate example ids in split {self.name!r}")


def load_nli_dataset(
    path: str | Path,
    format: DataFormat | str,
    name: str | None = None,
    partition: str | None = None,
) -> DatasetSplit:
    """Load a dataset file into a :class:`DatasetSplit`.

    Rows without a resolvable gold label are dropped; file order is
    preserved. ``partition`` filters SICK-style files that carry a
    partition column (e.g. ``SemEval_set``).
    """
    path = Path(path)
    fmt = DataFormat(format)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    split_name = name or path.stem

    if fmt in (DataFormat.SNLI_JSONL, DataFormat.MNLI_JSONL):
        examples = _load_snli_jsonl(path)
    elif fmt == DataFormat.SICK_TSV:
        examples = _load_sick_tsv(path, partition)
    elif fmt == DataFormat.HANS_TSV:
        examples = _load_hans_tsv(path)
    elif fmt == DataFormat.CANONICAL_JSONL:
        examples = _load_canonical_jsonl(path)
    else:  # pragma: no cover - DataFormat() above rejects unknown values
        raise DataError(f"unsupported format: {fmt}")
    return DatasetSplit(split_name, tuple(examples), fmt)


def load_canonical(path: str | Path, name: str | None = None) -> DatasetSplit:
    return load_nli_dataset(path, DataFormat.CANONICAL_JSONL, name=name)


def save_canonical(split: DatasetSplit, path: str | Path) -> None:
    """Write a split in the canonical JSON-lines interchange format."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ex in split.examples:
            record: dict = {
                "id": ex.id,
                "premise": ex.premise,
                "hypothesis": ex.hypothesis,
                "gold": ex.gold.value,
            }
            if ex.rationales:
                record["rationales"] = [list(r) for r in ex.rationales]
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _load_snli_jsonl(path: Path) -> list[NLIExample]:
    examples = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON row: {exc}") from exc
            gold = row.get("gold_label", "")
            if gold is None or gold.strip() in _UNLABELED:
                continue
            try:
                premise = row["sentence1"]
                hypothesis = row["sentence2"]
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing field {exc}") from exc
            ex_id = str(row.get("pairID") or f"{path.stem}-{lineno}")
            examples.append(
                NLIExample(ex_id, premise, hypothesis, Label.from_string(gold))
            )
    return examples


def _open_tsv(path: Path) -> tuple[list[str], list[tuple[int, dict]]]:
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file, expected a TSV header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if any(v is None for v in row.values()):
                raise DataError(f"{path}:{lineno}: truncated TSV row")
            rows.append((lineno, row))
        return list(reader.fieldnames), rows


def _pick_column(fields: Sequence[str], candidates: Sequence[str], path: Path) -> str:
    for cand in candidates:
        if cand in fields:
            return cand
    raise DataError(f"{path}: none of the expected columns {candidates} found")


def _load_sick_tsv(path: Path, partition: str | None) -> list[NLIExample]:
    fields, rows = _open_tsv(path)
    id_col = _pick_column(fields, ("pair_ID", "pair_id", "id"), path)
    a_col = _pick_column(fields, ("sentence_A", "sentence_a"), path)
    b_col = _pick_column(fields, ("sentence_B", "sentence_b"), path)
    label_col = _pick_column(
        fields, ("entailment_label", "entailment_judgment", "gold_label"), path
    )
    part_col = next((c for c in ("SemEval_set", "partition") if c in fields), None)

    examples = []
    for lineno, row in rows:
        if partition is not None and part_col is not None:
            if row[part_col].strip().upper() != partition.strip().upper():
                continue
        gold = row[label_col]
        if gold is None or gold.strip() in _UNLABELED:
            continue
        examples.append(
            NLIExample(
                str(row[id_col]),
                row[a_col],
                row[b_col],
                Label.from_string(gold),
            )
        )
    return examples


# HANS is two-class; "non-entailment" is stored as neutral and the
# evaluation layer collapses predictions back to two classes, so the
# stored value never leaks into three-class scoring.
HANS_NON_ENTAILMENT_STORED_AS = Label.NEUTRAL


def _load_hans_tsv(path: Path) -> list[NLIExample]:
    fields, rows = _open_tsv(path)
    a_col = _pick_column(fields, ("sentence1",), path)
    b_col = _pick_column(fields, ("sentence2",), path)
    label_col = _pick_column(fields, ("gold_label",), path)
    id_col = next((c for c in ("pairID", "pair_id", "id") if c in fields), None)

    examples = []
    for lineno, row in rows:
        gold_raw = row[label_col].strip().lower()
        if gold_raw in _UNLABELED:
            continue
        if gold_raw == "non-entailment":
            gold = HANS_NON_ENTAILMENT_STORED_AS
        else:
            gold = Label.from_string(gold_raw)
        ex_id = str(row[id_col]) if id_col else f"{path.stem}-{lineno}"
        examples.append(NLIExample(ex_id, row[a_col], row[b_col], gold))
    return examples


def _load_canonical_jsonl(path: Path) -> list[NLIExample]:
    examples = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON row: {exc}") from exc
            try:
                rationales = tuple(
                    tuple(sorted(int(i) for i in variant))
                    for variant in row.get("rationales", ())
                )
                examples.append(
                    NLIExample(
                        str(row["id"]),
                        row["premise"],
                        row["hypothesis"],
                        Label.from_string(row["gold"]),
                        rationales,
                    )
                )
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing field {exc}") from exc
    return examples


def attach_rationales(split: DatasetSplit, path: str | Path) -> DatasetSplit:
    """Attach highlight rationales to the examples of a split.

    Accepts either the canonical JSONL highlight format
    (``{"id": ..., "rationales": [[int, ...], ...]}`` with indices in this
    package's hypothesis tokenization) or an e-SNLI CSV export, whose
    highlight indices refer to whitespace tokens of the file's own
    hypothesis column and are converted through character offsets.

    Records with out-of-range indices, or CSV rows whose hypothesis text
    does not match the loaded example, are rejected; the reject count is
    logged as a warning. Examples absent from the file keep an empty
    rationale set. At most :data:`MAX_RATIONALE_VARIANTS` variants are
    retained per example.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"rationale file not found: {path}")
    if path.suffix.lower() == ".csv":
        raw = _read_esnli_csv(path)
    else:
        raw = _read_rationale_jsonl(path)

    # Late import: token validation uses the package tokenizer.
    from .segmenter import tokenize

    attached: dict[str, tuple[tuple[int, ...], ...]] = {}
    rejected = 0
    for ex in split.examples:
        if ex.id not in raw:
            continue
        n_tokens = len(tokenize(ex.hypothesis))
        kept: list[tuple[int, ...]] = []
        for variant in raw[ex.id][:MAX_RATIONALE_VARIANTS]:
            indices = _resolve_variant(variant, ex.hypothesis, n_tokens)
            if indices is None:
                rejected += 1
                continue
            kept.append(indices)
        if kept:
            attached[ex.id] = tuple(kept)
    rejected += sum(
        len(variants) for ex_id, variants in raw.items() if ex_id not in split.by_id
    )
    if rejected:
        logger.warning("attach_rationales: rejected %d rationale records", rejected)

    examples = tuple(
        replace(ex, rationales=attached[ex.id]) if ex.id in attached else ex
        for ex in split.examples
    )
    return DatasetSplit(split.name, examples, split.source_format)


# A raw variant is either direct token indices, or whitespace-token
# indices paired with the source hypothesis they refer to.
_RawVariant = tuple[str, tuple[int, ...], str | None]


def _read_rationale_jsonl(path: Path) -> dict[str, list[_RawVariant]]:
    out: dict[str, list[_RawVariant]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                variants = [
                    ("token", tuple(int(i) for i in v), None)
                    for v in row["rationales"]
                ]
                out.setdefault(str(row["id"]), []).extend(variants)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed rationale row: {exc}") from exc
    return out


def _read_esnli_csv(path: Path) -> dict[str, list[_RawVariant]]:
    out: dict[str, list[_RawVariant]] = {}
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty CSV file")
        id_col = _pick_column(reader.fieldnames, ("pairID", "id"), path)
        for row in reader:
            ex_id = str(row[id_col])
            sentence = row.get("Sentence2", "") or ""
            for k in (1, 2, 3):
                highlighted = (row.get(f"Sentence2_Highlighted_{k}") or "").strip()
                marked = (row.get(f"Sentence2_marked_{k}") or "").strip()
                if highlighted and highlighted != "{}":
                    try:
                        ws_indices = tuple(
                            int(tok) for tok in highlighted.split(",") if tok.strip()
                        )
                    except ValueError as exc:
                        raise DataError(
                            f"{path}: bad highlight spec {highlighted!r} for {ex_id}"
                        ) from exc
                    if ws_indices:
                        out.setdefault(ex_id, []).append(("ws", ws_indices, sentence))
                elif marked and "*" in marked:
                    ws_indices = _marked_to_ws_indices(marked)
                    if ws_indices:
                        out.setdefault(ex_id, []).append(("ws", ws_indices, sentence))
    return out


def _marked_to_ws_indices(marked: str) -> tuple[int, ...]:
    """Indices of whitespace tokens wrapped in asterisks in a marked sentence."""
    indices = []
    for i, tok in enumerate(marked.split()):
        if tok.startswith("*") or tok.endswith("*"):
            indices.append(i)
    return tuple(indices)


def _resolve_variant(
    variant: _RawVariant, hypothesis: str, n_tokens: int
) -> tuple[int, ...] | None:
    """Convert one raw variant to package token indices; None if rejected."""
    kind, indices, source_sentence = variant
    if kind == "token":
        if any(i < 0 or i >= n_tokens for i in indices):
            return None
        return tuple(sorted(set(indices)))

    # Whitespace indices: map through character offsets of the source text.
    source = source_sentence if source_sentence else hypothesis
    if _normalize_ws(source) != _normalize_ws(hypothesis):
        return None
    ws_spans = _whitespace_spans(hypothesis)
    if any(i < 0 or i >= len(ws_spans) for i in indices):
        return None

    from .segmenter import tokenize

    tokens = tokenize(hypothesis)
    resolved = set()
    for i in indices:
        lo, hi = ws_spans[i]
        for t_idx, tok in enumerate(tokens):
            if tok.start < hi and tok.end > lo:
                resolved.add(t_idx)
    if not resolved:
        return None
    return tuple(sorted(resolved))


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


def _whitespace_spans(text: str) -> list[tuple[int, int]]:
    spans = []
    i = 0
    n = len(text)
    while i < n:
        while i < n and text[i].isspace():
            i += 1
        start = i
        while i < n and not text[i].isspace():
            i += 1
        if i > start:
            spans.append((start, i))
    return spans


def subsample(split: DatasetSplit, n: int, seed: int) -> DatasetSplit:
    """Uniform sample of ``n`` examples without replacement.

    Deterministic per (seed, split name); relative order is preserved.
    """
    if n > len(split):
        raise DataError(f"cannot sample {n} from split of size {len(split)}")
    rng = random.Random(f"{split.name}#{seed}")
    indices = sorted(rng.sample(range(len(split)), n))
    examples = tuple(split.examples[i] for i in indices)
    return DatasetSplit(f"{split.name}#n{n}s{seed}", examples, split.source_format)
