"""Shared fixtures and scorer stubs."""

from __future__ import annotations

import pytest

from spanlogic.corpus import DatasetSplit, Label, NLIExample
from spanlogic.segmenter import Segmenter

GOLDEN_HYPOTHESIS = "a man in a wetsuit walks out of the water carrying a surfboard."
GOLDEN_GRANULAR = (
    "a man",
    "in a wetsuit",
    "walks out of the water",
    "carrying a surfboard.",
)


class OracleScorer:
    """Scorer stub that reads per-span scores from a lookup table."""

    def __init__(self, table: dict[str, tuple[list[float], list[float]]]):
        self.table = table

    def score(self, example, spanset):
        return self.table[example.id]


class ConstantScorer:
    """Scorer stub giving every span the same two scores."""

    def __init__(self, neutral: float, contradiction: float):
        self.neutral = neutral
        self.contradiction = contradiction

    def score(self, example, spanset):
        m = spanset.m
        return [self.neutral] * m, [self.contradiction] * m


@pytest.fixture
def segmenter() -> Segmenter:
    return Segmenter(max_run_length=3)


@pytest.fixture
def tiny_split() -> DatasetSplit:
    examples = (
        NLIExample("e1", "a dog runs.", "a dog moves.", Label.ENTAILMENT),
        NLIExample("n1", "a dog runs.", "a dog chases a ball.", Label.NEUTRAL),
        NLIExample("c1", "a dog runs.", "a cat sleeps.", Label.CONTRADICTION),
    )
    return DatasetSplit("tiny", examples)
