"""Dataset I/O, input conversion, augmentation, and the synthetic benchmark.

The synthetic benchmark builds a toy weighted concept graph, realizes true
edges as sensible statements and corrupted edges as nonsense ones, and splits
instances so test heads never occur as training heads: a model can only
resolve held-out instances by consulting the graph.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataFormatError
from .kgstore import Edge, KnowledgeGraph, load_graph, neighbors
from .kemb import Template, default_templates, realize_triple
from .linker import STOPWORDS, tokenize
from .vocab import CLS, SEP, Vocab

logger = logging.getLogger(__name__)

SUBTASKS = ("a", "b")


@dataclass(frozen=True)
class ComveInstance:
    """One validation (a) or explanation (b) instance."""
    id: str
    subtask: str
    label: int
    statements: Tuple[str, ...] = ()   # subtask a: two statements
    false_sent: str = ""               # subtask b
    reasons: Tuple[str, ...] = ()      # subtask b: three options

    def __post_init__(self):
        if self.subtask not in SUBTASKS:
            raise DataFormatError(f"unknown subtask {self.subtask!r}")
        if self.subtask == "a":
            if len(self.statements) != 2 or not all(self.statements):
                raise DataFormatError(f"{self.id}: subtask a needs 2 non-empty statements")
            if self.label not in (0, 1):
                raise DataFormatError(f"{self.id}: label out of range")
        else:
            if not self.false_sent or len(self.reasons) != 3 or not all(self.reasons):
                raise DataFormatError(
                    f"{self.id}: subtask b needs a statement and 3 non-empty options")
            if self.label not in (0, 1, 2):
                raise DataFormatError(f"{self.id}: label out of range")

    @property
    def option_count(self) -> int:
        return 2 if self.subtask == "a" else 3


@dataclass(frozen=True)
class ConvertedInput:
    subtask: str
    options: Tuple[Tuple[str, ...], ...]


def convert(instance: ComveInstance) -> ConvertedInput:
    """Marker-delimited token sequences, one per option."""
    if instance.subtask == "a":
        options = tuple(tuple([CLS] + tokenize(s) + [SEP])
                        for s in instance.statements)
    else:
        stem = tokenize(instance.false_sent)
        options = tuple(tuple([CLS] + stem + [SEP] + tokenize(r) + [SEP])
                        for r in instance.reasons)
    return ConvertedInput(subtask=instance.subtask, options=options)


_FIELDS_A = ("id", "sent0", "sent1", "label")
_FIELDS_B = ("id", "false_sent", "optionA", "optionB", "optionC", "label")


def _instance_from_record(rec: dict, subtask: str, where: str) -> ComveInstance:
    required = _FIELDS_A if subtask == "a" else _FIELDS_B
    for key in required:
        if key not in rec:
            raise DataFormatError(f"{where}: missing field {key!r}")
    if subtask == "a":
        return ComveInstance(id=str(rec["id"]), subtask="a",
                             label=int(rec["label"]),
                             statements=(rec["sent0"], rec["sent1"]))
    return ComveInstance(id=str(rec["id"]), subtask="b",
                         label=int(rec["label"]),
                         false_sent=rec["false_sent"],
                         reasons=(rec["optionA"], rec["optionB"], rec["optionC"]))


def load_comve(path, subtask: str) -> List[ComveInstance]:
    """Load instances from canonical JSONL; malformed rows name their line."""
    if subtask not in SUBTASKS:
        raise DataFormatError(f"unknown subtask {subtask!r}")
    instances: List[ComveInstance] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            instances.append(_instance_from_record(rec, subtask, f"{path}:{lineno}"))
    if not instances:
        logger.warning("no instances loaded from %s", path)
    return instances


def save_comve(instances: Sequence[ComveInstance], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            if inst.subtask == "a":
                rec = {"id": inst.id, "sent0": inst.statements[0],
                       "sent1": inst.statements[1], "label": inst.label}
            else:
                rec = {"id": inst.id, "false_sent": inst.false_sent,
                       "optionA": inst.reasons[0], "optionB": inst.reasons[1],
                       "optionC": inst.reasons[2], "label": inst.label}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_comve_csv(path, subtask: str,
                   columns: Optional[Dict[str, str]] = None) -> List[ComveInstance]:
    """CSV import with a configurable column mapping (canonical -> header)."""
    required = _FIELDS_A if subtask == "a" else _FIELDS_B
    mapping = {k: k for k in required}
    if columns:
        mapping.update(columns)
    instances = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            rec = {}
            for canonical, header in mapping.items():
                if header not in row:
                    raise DataFormatError(f"{path}:{lineno}: missing column {header!r}")
                rec[canonical] = row[header]
            instances.append(_instance_from_record(rec, subtask, f"{path}:{lineno}"))
    return instances


# -- augmentation ------------------------------------------------------------

CORRUPT_POLICIES = ("uniform-nonneighbor",)


def _non_neighbor(graph: KnowledgeGraph, head: str,
                  concepts: Sequence[str], rng: np.random.Generator) -> str:
    excluded = {e.other(head) for e in neighbors(graph, head)}
    excluded.add(head)
    candidates = [c for c in concepts if c not in excluded]
    if not candidates:
        raise DataFormatError(
            f"graph too small: no non-neighbor tail available for {head!r}")
    return candidates[int(rng.integers(len(candidates)))]


def generate_augmented(graph: KnowledgeGraph, templates: Dict[str, Template],
                       count: int, corrupt_policy: str, seed: int,
                       subtask: str = "a",
                       head_pool: Optional[Sequence[str]] = None,
                       id_prefix: str = "aug") -> List[ComveInstance]:
    """Template-realized instances: a true edge vs a corrupted-tail edge.

    The corrupted tail is uniformly drawn from concepts that are not KB
    neighbors of the head, so nonsense statements never correspond to an
    edge. Option order is shuffled by seed with exact label balance.
    """
    if corrupt_policy not in CORRUPT_POLICIES:
        raise DataFormatError(f"unknown corrupt policy {corrupt_policy!r}")
    if count == 0:
        return []
    edges_by_head: Dict[str, List[Edge]] = {}
    for e in graph.edges:
        edges_by_head.setdefault(e.head, []).append(e)
    if head_pool is None:
        heads = sorted(edges_by_head)
    else:
        heads = [h for h in head_pool if h in edges_by_head]
        if not heads:
            raise DataFormatError("no head in pool has outgoing edges")
    concepts = sorted(graph.concepts)
    slot_rng = np.random.default_rng([seed, 0])
    slots = slot_rng.permutation(count)
    instances: List[ComveInstance] = []
    for i in range(count):
        rng = np.random.default_rng([seed, 1, i])
        head = heads[int(rng.integers(len(heads)))]
        out_edges = edges_by_head[head]
        edge = out_edges[int(rng.integers(len(out_edges)))]
        sensible = " ".join(realize_triple(edge, templates))
        bad_tail = _non_neighbor(graph, head, concepts, rng)
        corrupted = Edge(edge.head, edge.relation, bad_tail, edge.weight)
        nonsense = " ".join(realize_triple(corrupted, templates))
        if subtask == "a":
            label = int(slots[i]) % 2   # index of the against-commonsense one
            statements = (nonsense, sensible) if label == 0 else (sensible, nonsense)
            instances.append(ComveInstance(
                id=f"{id_prefix}-a-{i:05d}", subtask="a", label=label,
                statements=statements))
        else:
            distractors = _distractor_reasons(graph, edge, templates, rng)
            label = int(slots[i]) % 3
            reasons = list(distractors)
            reasons.insert(label, sensible)
            instances.append(ComveInstance(
                id=f"{id_prefix}-b-{i:05d}", subtask="b", label=label,
                false_sent=nonsense, reasons=tuple(reasons)))
    return instances


def _distractor_reasons(graph: KnowledgeGraph, edge: Edge,
                        templates: Dict[str, Template],
                        rng: np.random.Generator) -> List[str]:
    """Two realizations of edges sharing neither endpoint with `edge`."""
    forbidden = {edge.head, edge.tail}
    out: List[str] = []
    tries = 0
    while len(out) < 2:
        tries += 1
        if tries > 10000:
            raise DataFormatError("graph too small to draw distractor edges")
        cand = graph.edges[int(rng.integers(len(graph.edges)))]
        if cand.head in forbidden or cand.tail in forbidden:
            continue
        text = " ".join(realize_triple(cand, templates))
        if text not in out:
            out.append(text)
            forbidden.update({cand.head, cand.tail})
    return out


# -- synthetic benchmark -----------------------------------------------------

_CONSONANTS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"


def _word_pool(rng: np.random.Generator, size: int,
               forbidden: set) -> List[str]:
    pool: List[str] = []
    seen = set(forbidden)
    while len(pool) < size:
        n_syll = 1 + int(rng.integers(2))
        word = ""
        for _ in range(n_syll + 1):
            word += _CONSONANTS[int(rng.integers(len(_CONSONANTS)))]
            word += _VOWELS[int(rng.integers(len(_VOWELS)))]
        word += _CONSONANTS[int(rng.integers(len(_CONSONANTS)))]
        if word not in seen:
            seen.add(word)
            pool.append(word)
    return pool


@dataclass
class SynthBenchmark:
    graph: KnowledgeGraph
    concept_table: Dict[str, np.ndarray]
    train: List[ComveInstance]
    dev: List[ComveInstance]
    test: List[ComveInstance]
    paths: Dict[str, Path] = field(default_factory=dict)


def synth_benchmark(seed: int, out_dir,
                    sizes: Tuple[int, int, int] = (400, 120, 120),
                    n_concepts: int = 500, n_edges: int = 1000,
                    embed_dim: int = 64, community_size: int = 12,
                    p_within: float = 0.93, vector_noise: float = 0.45,
                    subtask: str = "a") -> SynthBenchmark:
    """Generate a toy KB, concept vectors, and head-disjoint instance splits.

    Concepts are grouped into latent topical communities; most edges stay
    within a community and concept vectors cluster around their community
    centroid, mirroring how a pretrained concept-embedding table reflects
    graph neighborhoods. Byte-identical output for a fixed seed.
    """
    if any(s <= 0 for s in sizes):
        raise ValueError("split sizes must be positive")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    templates = default_templates()
    template_words = {tok for t in templates.values() for tok in t.pattern
                      if not tok.startswith("{")}
    rng = np.random.default_rng([seed, 100])

    words = _word_pool(rng, max(360, n_concepts), template_words | set(STOPWORDS))
    concepts: List[str] = []
    seen = set()
    while len(concepts) < n_concepts:
        if rng.random() < 0.3:
            c = "_".join(sorted({words[int(rng.integers(len(words)))],
                                 words[int(rng.integers(len(words)))]}))
        else:
            c = words[int(rng.integers(len(words)))]
        if c and c not in seen:
            seen.add(c)
            concepts.append(c)

    n_comm = max(2, n_concepts // community_size)
    community = {c: int(rng.integers(n_comm)) for c in concepts}
    by_community: Dict[int, List[str]] = {}
    for c in concepts:
        by_community.setdefault(community[c], []).append(c)

    relations = sorted(templates)
    edge_keys = set()
    lines = []
    while len(lines) < n_edges:
        if rng.random() < p_within:
            pool = by_community.get(int(rng.integers(n_comm)), [])
            if len(pool) < 2:
                continue
            h = pool[int(rng.integers(len(pool)))]
            t = pool[int(rng.integers(len(pool)))]
        else:
            h = concepts[int(rng.integers(n_concepts))]
            t = concepts[int(rng.integers(n_concepts))]
        if h == t:
            continue
        r = relations[int(rng.integers(len(relations)))]
        if (h, t) in edge_keys or (t, h) in edge_keys:
            continue
        edge_keys.add((h, t))
        w = 0.5 + 3.5 * rng.random()
        lines.append(f"{h}\t{r}\t{t}\t{w:.3f}")
    kb_path = out_dir / "kb.tsv"
    kb_path.write_text("# synthetic toy knowledge graph\n" + "\n".join(lines) + "\n",
                       encoding="utf-8")
    graph = load_graph(kb_path)

    # concept vectors: community centroid plus per-concept noise
    index = {c: i for i, c in enumerate(concepts)}
    centroids = rng.normal(size=(n_comm, embed_dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    vecs = np.empty((n_concepts, embed_dim))
    for c in concepts:
        v = (centroids[community[c]]
             + vector_noise * rng.normal(size=embed_dim) / np.sqrt(embed_dim))
        vecs[index[c]] = v / np.linalg.norm(v)
    vec_path = out_dir / "concepts.vec"
    with open(vec_path, "w", encoding="utf-8") as fh:
        fh.write(f"{n_concepts} {embed_dim}\n")
        for c in concepts:
            fh.write(c + " " + " ".join(f"{v:.6f}" for v in vecs[index[c]]) + "\n")
    concept_table = {c: vecs[index[c]].copy() for c in concepts}

    heads = sorted(c for c in concepts
                   if any(e.head == c for e in neighbors(graph, c)))
    perm = rng.permutation(len(heads))
    n_train = int(0.6 * len(heads))
    n_dev = int(0.2 * len(heads))
    pools = {
        "train": [heads[i] for i in perm[:n_train]],
        "dev": [heads[i] for i in perm[n_train:n_train + n_dev]],
        "test": [heads[i] for i in perm[n_train + n_dev:]],
    }
    splits = {}
    for (name, pool), size, sub_seed in zip(pools.items(), sizes, (1, 2, 3)):
        splits[name] = generate_augmented(
            graph, templates, size, "uniform-nonneighbor",
            seed * 10 + sub_seed, subtask=subtask, head_pool=pool,
            id_prefix=f"synth-{name}")
        save_comve(splits[name], out_dir / f"{name}.jsonl")
    paths = {"kb": kb_path, "vectors": vec_path,
             **{name: out_dir / f"{name}.jsonl" for name in splits}}
    return SynthBenchmark(graph=graph, concept_table=concept_table,
                          train=splits["train"], dev=splits["dev"],
                          test=splits["test"], paths=paths)


def build_vocab(graph: KnowledgeGraph, templates: Dict[str, Template],
                instances: Sequence[ComveInstance]) -> Vocab:
    """Vocabulary over concept surfaces, template words, and instance text."""
    tokens = set()
    for c in graph.concepts:
        tokens.update(c.split("_"))
    for t in templates.values():
        tokens.update(tok for tok in t.pattern if not tok.startswith("{"))
    for inst in instances:
        for opt in convert(inst).options:
            tokens.update(opt)
    return Vocab.build(tokens)


# -- evaluation --------------------------------------------------------------

@dataclass
class Metrics:
    accuracy: float
    predictions: List[dict]


def evaluate(model, instances: Sequence[ComveInstance]) -> Metrics:
    """Accuracy plus a per-instance prediction dump."""
    predictions = []
    correct = 0
    for inst in instances:
        probs = model.predict_probs(inst)
        pred = int(np.argmax(probs))
        ok = pred == inst.label
        correct += ok
        predictions.append({"id": inst.id, "predicted": pred,
                            "label": inst.label, "correct": bool(ok),
                            "probs": [round(float(p), 6) for p in probs]})
    accuracy = correct / len(instances) if instances else 0.0
    return Metrics(accuracy=accuracy, predictions=predictions)
