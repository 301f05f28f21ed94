"""Weighted multi-relational concept graph with a relation blocklist.

The store is loaded once from a TSV edge list and is immutable afterwards;
queries are read-only and safe to run concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Tuple

from .errors import DataFormatError

MAGIC = b"KGAT"
FORMAT_VERSION = 1

DEFAULT_BLOCKLIST = frozenset({
    "/r/ExternalURL",
    "/r/DistinctFrom",
    "/r/Antonym",
    "/r/NotCapableOf",
    "/r/NotDesires",
    "/r/NotHasProperty",
})


def normalize_concept(raw: str) -> str:
    """Normalize a concept id: lowercase, strip /c/en/ namespace, underscores."""
    s = raw.strip().lower()
    if s.startswith("/c/en/"):
        s = s[len("/c/en/"):]
    s = "_".join(part for part in s.replace(" ", "_").split("_") if part)
    return s


@dataclass(frozen=True)
class Concept:
    id: str

    @property
    def surface(self) -> List[str]:
        return self.id.split("_")


@dataclass(frozen=True)
class Edge:
    head: str
    relation: str
    tail: str
    weight: float

    def other(self, concept_id: str) -> str:
        """Opposite endpoint in the undirected view."""
        return self.tail if concept_id == self.head else self.head


@dataclass(frozen=True)
class GraphStats:
    loaded: int
    skipped_blocklist: int
    skipped_comments: int

    def as_dict(self) -> dict:
        return {"loaded": self.loaded,
                "skipped_blocklist": self.skipped_blocklist,
                "skipped_comments": self.skipped_comments}


@dataclass(frozen=True)
class KnowledgeGraph:
    concepts: FrozenSet[str]
    edges: Tuple[Edge, ...]
    blocklist: FrozenSet[str]
    stats: GraphStats
    _adjacency: Dict[str, Tuple[Edge, ...]] = field(repr=False, default_factory=dict)

    def __contains__(self, concept_id: str) -> bool:
        return concept_id in self.concepts

    def degree(self, concept_id: str) -> int:
        return len(self._adjacency.get(concept_id, ()))


def _sort_key(concept_id: str):
    def key(edge: Edge):
        return (-edge.weight, edge.relation, edge.other(concept_id))
    return key


def _build_graph(edges: List[Edge], blocklist: FrozenSet[str],
                 stats: GraphStats) -> KnowledgeGraph:
    adjacency: Dict[str, List[Edge]] = {}
    concepts: set[str] = set()
    for e in edges:
        concepts.add(e.head)
        concepts.add(e.tail)
        adjacency.setdefault(e.head, []).append(e)
        if e.tail != e.head:
            adjacency.setdefault(e.tail, []).append(e)
    frozen_adj = {c: tuple(sorted(lst, key=_sort_key(c)))
                  for c, lst in adjacency.items()}
    return KnowledgeGraph(concepts=frozenset(concepts),
                          edges=tuple(edges),
                          blocklist=blocklist,
                          stats=stats,
                          _adjacency=frozen_adj)


def load_graph(path, blocklist=DEFAULT_BLOCKLIST) -> KnowledgeGraph:
    """Load a TSV edge list (head\\trelation\\ttail\\tweight per line).

    '#'-prefixed lines are comments. Rows carrying a blocklisted relation are
    skipped and counted; malformed rows and nonpositive weights are hard
    errors with the offending line number.
    """
    blockset = frozenset(blocklist)
    edges: List[Edge] = []
    skipped_block = 0
    skipped_comment = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.lstrip().startswith("#"):
                skipped_comment += 1
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 4 tab-separated columns, "
                    f"got {len(cols)}")
            head, relation, tail, weight_s = cols
            try:
                weight = float(weight_s)
            except ValueError:
                raise DataFormatError(
                    f"{path}:{lineno}: non-numeric weight {weight_s!r}") from None
            if weight <= 0:
                raise DataFormatError(f"{path}:{lineno}: nonpositive weight {weight}")
            if relation in blockset:
                skipped_block += 1
                continue
            edges.append(Edge(normalize_concept(head), relation,
                              normalize_concept(tail), weight))
    stats = GraphStats(loaded=len(edges), skipped_blocklist=skipped_block,
                       skipped_comments=skipped_comment)
    return _build_graph(edges, blockset, stats)


def neighbors(graph: KnowledgeGraph, concept_id: str) -> List[Edge]:
    """Edges at `concept_id`, weight-descending; ties by (relation, other id).

    Unknown concepts yield an empty list.
    """
    return list(graph._adjacency.get(concept_id, ()))


def top_neighbors(graph: KnowledgeGraph, concept_id: str, limit: int) -> List[Edge]:
    if limit < 0:
        raise ValueError("limit must be >= 0")
    return neighbors(graph, concept_id)[:limit]


def save_binary(graph: KnowledgeGraph, path) -> None:
    """Write the graph as magic + version byte + canonical JSON payload."""
    payload = {
        "edges": [[e.head, e.relation, e.tail, e.weight] for e in graph.edges],
        "blocklist": sorted(graph.blocklist),
        "stats": graph.stats.as_dict(),
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([FORMAT_VERSION]))
        fh.write(blob)


def load_binary(path) -> KnowledgeGraph:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}")
        version = fh.read(1)
        if version != bytes([FORMAT_VERSION]):
            raise DataFormatError(f"{path}: unsupported format version {version!r}")
        payload = json.loads(fh.read().decode("utf-8"))
    edges = [Edge(h, r, t, float(w)) for h, r, t, w in payload["edges"]]
    stats = GraphStats(**payload["stats"])
    return _build_graph(edges, frozenset(payload["blocklist"]), stats)
