"""Synthetic NLI corpus with known per-atom labels.

Hypotheses are chains of short atoms: a subject noun phrase followed by
verb/preposition phrases. Each atom's hidden class is fixed by its noun
(disjoint noun pools per class) and the sentence label is composed from
the atom classes by the same precedence rule the model uses. Because
every atom lands on exactly one granular span of the rule segmenter,
the hidden labels give a direct target for span-level accuracy without
any human annotation.

`ambiguous_rate` controls a deliberately confounded subset built from a
separate noun pool whose class depends on context: such a noun is
entailed when the premise mentions it and neutral when it does not. In
neutral examples the ambiguous atom always rides along with a regular
neutral atom, so sentence-level supervision can explain the label
without ever crediting it, while its appearances in entailment examples
push its score down. Rationales on the neutral examples point at the
ambiguous noun, which is exactly the signal rationale supervision adds.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .corpus import DatasetSplit, Label, NLIExample
from .errors import DataError
from .logic import compose_span_labels, span_prediction
from .segmenter import Segmenter

SUBJECT_NOUNS = (
    "person", "dog", "cat", "horse", "child", "woman", "man", "rider",
    "farmer", "vendor",
)

ENTAILED_NOUNS = (
    "ball", "tree", "chair", "street", "park", "house", "garden", "book",
    "bike", "hat", "shirt", "door", "window", "river", "market", "bench",
    "wall", "road", "boat", "farm", "beach", "fence", "path", "barn",
)

NEUTRAL_NOUNS = (
    "violin", "ladder", "kite", "lantern", "basket", "helmet", "camera",
    "umbrella", "scarf", "drum", "puzzle", "candle", "mirror", "wagon",
    "whistle", "ribbon",
)

CONTRADICTION_NOUNS = (
    "volcano", "iceberg", "spaceship", "dinosaur", "tornado", "submarine",
    "pyramid", "glacier", "meteor", "cactus", "walrus", "chandelier",
    "comet", "fossil", "anchor",
)

AMBIGUOUS_NOUNS = (
    "pendulum", "compass", "telescope", "anvil", "harp", "sundial",
    "gargoyle", "obelisk",
)

VERBS = (
    "carries", "holds", "wears", "rides", "pulls", "pushes", "lifts",
    "chases", "follows", "watches", "grabs", "paints",
)

PREPOSITIONS = ("near", "under", "beside", "behind", "above", "below")

ADJECTIVES_POOL = ("red", "blue", "green", "small", "big", "old", "new", "shiny")

DETERMINERS_POOL = ("a", "the")


@dataclass(frozen=True)
class AtomTruth:
    """Hidden label of one atom, addressed by its token range."""

    start: int
    end: int
    label: Label


@dataclass(frozen=True)
class SyntheticCorpus:
    split: DatasetSplit
    atoms: dict[str, tuple[AtomTruth, ...]]


def _noun_for(label: Label, rng: random.Random, ambiguous: bool = False) -> str:
    if ambiguous:
        return rng.choice(AMBIGUOUS_NOUNS)
    pool = {
        Label.ENTAILMENT: ENTAILED_NOUNS,
        Label.NEUTRAL: NEUTRAL_NOUNS,
        Label.CONTRADICTION: CONTRADICTION_NOUNS,
    }[label]
    return rng.choice(pool)


def _connector_tokens(noun: str, rng: random.Random) -> list[str]:
    det = rng.choice(DETERMINERS_POOL)
    pattern = rng.randrange(3)
    if pattern == 0:
        return [rng.choice(VERBS), det, noun]
    if pattern == 1:
        return [rng.choice(VERBS), det, rng.choice(ADJECTIVES_POOL), noun]
    return [rng.choice(PREPOSITIONS), det, noun]


def _build_example(
    index: int,
    gold: Label,
    rng: random.Random,
    with_ambiguous: bool,
    segmenter: Segmenter,
) -> tuple[NLIExample, tuple[AtomTruth, ...]]:
    subject_noun = rng.choice(SUBJECT_NOUNS)
    n_connectors = rng.randint(1, 4)

    # one atom carries the class for neutral/contradiction sentences
    connector_labels = [Label.ENTAILMENT] * n_connectors
    if gold != Label.ENTAILMENT:
        connector_labels[rng.randrange(n_connectors)] = gold
    if with_ambiguous:
        open_slots = [
            i for i, lab in enumerate(connector_labels) if lab == Label.ENTAILMENT
        ]
        if not open_slots:
            connector_labels.append(Label.ENTAILMENT)
            open_slots = [len(connector_labels) - 1]
        ambiguous_slot = rng.choice(open_slots)
    else:
        ambiguous_slot = None
    # an ambiguous atom in an entailment example stays entailed because
    # the premise will mention its noun
    ambiguous_noun: str | None = None

    tokens = [rng.choice(DETERMINERS_POOL), subject_noun]
    atoms = [AtomTruth(0, 2, Label.ENTAILMENT)]
    rationale: tuple[int, ...] = ()
    for i, lab in enumerate(connector_labels):
        is_ambiguous = i == ambiguous_slot
        if is_ambiguous:
            effective = Label.NEUTRAL if gold != Label.ENTAILMENT else Label.ENTAILMENT
            noun = _noun_for(effective, rng, ambiguous=True)
            ambiguous_noun = noun
        else:
            effective = lab
            noun = _noun_for(effective, rng)
        piece = _connector_tokens(noun, rng)
        start = len(tokens)
        tokens.extend(piece)
        end = len(tokens)
        atoms.append(AtomTruth(start, end, effective))
        noun_index = end - 1
        if (is_ambiguous and gold == Label.NEUTRAL) or (
            lab == gold != Label.ENTAILMENT and not rationale
        ):
            rationale = (noun_index,)
    tokens.append(".")
    # trailing punctuation belongs to the final atom
    atoms[-1] = AtomTruth(atoms[-1].start, len(tokens), atoms[-1].label)

    hypothesis = " ".join(tokens[:-1]) + "."
    premise_bits = [rng.choice(DETERMINERS_POOL), subject_noun]
    for _ in range(rng.randint(1, 2)):
        premise_bits.extend(
            _connector_tokens(_noun_for(Label.ENTAILMENT, rng), rng)
        )
    if gold == Label.ENTAILMENT and ambiguous_noun is not None:
        premise_bits.extend(_connector_tokens(ambiguous_noun, rng))
    premise = " ".join(premise_bits) + "."

    composed = compose_span_labels([a.label for a in atoms])
    if composed != gold:
        raise DataError(
            f"synthetic example {index}: atoms compose to {composed}, "
            f"wanted {gold}"
        )

    example = NLIExample(
        id=f"syn-{index}",
        premise=premise,
        hypothesis=hypothesis,
        gold=gold,
        rationales=(rationale,) if rationale else (),
    )

    spanset = segmenter.segment(hypothesis, example.id)
    produced = [(s.start, s.end) for s in spanset.granular]
    expected = [(a.start, a.end) for a in atoms]
    if produced != expected:
        raise DataError(
            f"synthetic example {index}: segmenter produced {produced}, "
            f"generator expected {expected} for {hypothesis!r}"
        )
    return example, tuple(atoms)


def generate_corpus(
    n: int,
    seed: int,
    name: str = "synthetic",
    ambiguous_rate: float = 0.0,
    ambiguous_entailed_rate: float | None = None,
) -> SyntheticCorpus:
    """Build a balanced three-class corpus of n examples.

    With ambiguous_rate > 0, that share of neutral examples gets an
    ambiguous atom (hidden-neutral, premise silent about it) next to its
    regular neutral atom, and ambiguous_entailed_rate (default half of
    ambiguous_rate) of entailment examples gets an ambiguous atom whose
    noun the premise states (hidden-entailed).
    """
    if n < 3:
        raise DataError("need at least 3 examples for a balanced corpus")
    if not 0.0 <= ambiguous_rate <= 1.0:
        raise DataError(f"ambiguous_rate {ambiguous_rate} outside [0, 1]")
    if ambiguous_entailed_rate is None:
        ambiguous_entailed_rate = ambiguous_rate / 2
    if not 0.0 <= ambiguous_entailed_rate <= 1.0:
        raise DataError(
            f"ambiguous_entailed_rate {ambiguous_entailed_rate} outside [0, 1]"
        )
    rng = random.Random(f"synthetic:{name}:{seed}")
    segmenter = Segmenter()
    per_class = n // 3
    golds = (
        [Label.NEUTRAL] * per_class
        + [Label.CONTRADICTION] * per_class
        + [Label.ENTAILMENT] * (n - 2 * per_class)
    )
    examples = []
    atoms: dict[str, tuple[AtomTruth, ...]] = {}
    for i, gold in enumerate(golds):
        if gold == Label.NEUTRAL:
            with_ambiguous = rng.random() < ambiguous_rate
        elif gold == Label.ENTAILMENT:
            with_ambiguous = rng.random() < ambiguous_entailed_rate
        else:
            with_ambiguous = False
        ex, truth = _build_example(i, gold, rng, with_ambiguous, segmenter)
        examples.append(ex)
        atoms[ex.id] = truth
    order = list(range(len(examples)))
    rng.shuffle(order)
    examples = [examples[i] for i in order]
    split = DatasetSplit(name=name, examples=tuple(examples))
    return SyntheticCorpus(split=split, atoms=atoms)


@dataclass(frozen=True)
class AtomAccuracy:
    correct: int
    total: int
    by_class: dict[Label, tuple[int, int]]  # label -> (correct, total)

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0


def atom_accuracy(
    scorer, corpus: SyntheticCorpus, segmenter: Segmenter | None = None
) -> AtomAccuracy:
    """Score each granular span against its hidden atom label.

    Spans are classified exactly the way the model classifies them at
    inference time (thresholded attention with contradiction
    precedence); composites influence nothing here because atoms map
    one-to-one onto granular spans.
    """
    segmenter = segmenter if segmenter is not None else Segmenter()
    correct = 0
    total = 0
    by_class: dict[Label, list[int]] = {lab: [0, 0] for lab in Label}
    for ex in corpus.split:
        truth = corpus.atoms[ex.id]
        spanset = segmenter.segment(ex.hypothesis, ex.id)
        if len(spanset.granular) != len(truth):
            raise DataError(
                f"{ex.id}: {len(spanset.granular)} granular spans vs "
                f"{len(truth)} atoms"
            )
        a_n, a_c = scorer.score(ex, spanset)
        for i, atom in enumerate(truth):
            predicted = span_prediction(a_n[i], a_c[i])
            total += 1
            by_class[atom.label][1] += 1
            if predicted == atom.label:
                correct += 1
                by_class[atom.label][0] += 1
    return AtomAccuracy(
        correct=correct,
        total=total,
        by_class={lab: (c, t) for lab, (c, t) in by_class.items()},
    )
