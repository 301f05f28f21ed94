"""Tokenization and N-gram entity linking against the knowledge graph."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import List, Sequence

from .kgstore import KnowledgeGraph

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)*")

# Concepts never linked even when present in the KB: articles, pronouns,
# auxiliaries and similar glue words that only add noise.
STOPWORDS = frozenset("""
a an the this that these those it its he she him her his hers they them their
i me my we us our you your who whom which what
is are was were be been being am do does did done has have had having
can could will would shall should may might must
and or but if then than so not no nor very there here
of in on at to for with by from into onto about over under
""".split())


def tokenize(text: str) -> List[str]:
    """Lowercase word tokens; punctuation dropped, in-word apostrophes kept."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class TokenSpan:
    start: int
    end: int
    concept: str

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid span [{self.start}, {self.end})")


def extract_entities(tokens: Sequence[str], graph: KnowledgeGraph,
                     max_ngram: int = 4) -> List[TokenSpan]:
    """Greedy left-to-right longest-match linking of token n-grams to concepts.

    Returned spans are non-overlapping and sorted by start index. Single-token
    stopword concepts are never linked.
    """
    if max_ngram < 1:
        raise ValueError("max_ngram must be >= 1")
    spans: List[TokenSpan] = []
    i = 0
    n = len(tokens)
    while i < n:
        matched = False
        for length in range(min(max_ngram, n - i), 0, -1):
            candidate = "_".join(tokens[i:i + length])
            if candidate in graph and not (length == 1 and candidate in STOPWORDS):
                spans.append(TokenSpan(i, i + length, candidate))
                i += length
                matched = True
                break
        if not matched:
            i += 1
    return spans
