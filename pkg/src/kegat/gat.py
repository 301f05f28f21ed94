"""Graph-attention reasoning over sampled knowledge subgraphs.

For each linked entity, up to k neighbors are drawn without replacement with
probability proportional to edge weight. The union of entities and sampled
neighbors forms one subgraph (all KB edges among included nodes are kept,
plus self-loops), refined by multi-head attention layers and mean-pooled into
a single vector that is fused with the sequence encoder's pooled state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataFormatError
from .kgstore import KnowledgeGraph, neighbors
from .linker import extract_entities


@dataclass(frozen=True)
class Subgraph:
    nodes: tuple            # concept ids, entities first, deduplicated
    adjacency: np.ndarray   # n x n bool, self-loops included
    entity_count: int
    sample_cap: int

    def __len__(self) -> int:
        return len(self.nodes)


def weighted_sample(edges: Sequence, k: int, rng: np.random.Generator) -> List:
    """Sequential weighted draws without replacement: k edges, p ∝ weight."""
    remaining = list(edges)
    picked = []
    while remaining and len(picked) < k:
        weights = np.array([e.weight for e in remaining], dtype=np.float64)
        cum = np.cumsum(weights)
        r = rng.random() * cum[-1]
        idx = int(np.searchsorted(cum, r, side="right"))
        idx = min(idx, len(remaining) - 1)
        picked.append(remaining.pop(idx))
    return picked


def build_subgraph(tokens: Sequence[str], graph: KnowledgeGraph, k: int,
                   rng_seed: int, max_ngram: int = 4) -> Subgraph:
    """Sample the neighborhood union of all entities linked in `tokens`."""
    if k < 0:
        raise ValueError("sample cap k must be >= 0")
    rng = np.random.default_rng(rng_seed)
    spans = extract_entities(tokens, graph, max_ngram)
    entities = []
    for s in spans:
        if s.concept not in entities:
            entities.append(s.concept)
    nodes: List[str] = list(entities)
    for entity in entities:
        for edge in weighted_sample(neighbors(graph, entity), k, rng):
            other = edge.other(entity)
            if other not in nodes:
                nodes.append(other)
    n = len(nodes)
    index = {c: i for i, c in enumerate(nodes)}
    adjacency = np.eye(n, dtype=bool)
    for c in nodes:
        for edge in neighbors(graph, c):
            j = index.get(edge.other(c))
            if j is not None:
                adjacency[index[c], j] = True
                adjacency[j, index[c]] = True
    return Subgraph(nodes=tuple(nodes), adjacency=adjacency,
                    entity_count=len(entities), sample_cap=k)


def init_node_embeddings(sub: Subgraph, table: Dict[str, np.ndarray],
                         dim: int) -> np.ndarray:
    """Initial node states from the concept table; unknown concepts get zeros."""
    out = np.zeros((len(sub.nodes), dim), dtype=np.float64)
    for i, concept in enumerate(sub.nodes):
        vec = table.get(concept)
        if vec is not None:
            if vec.shape != (dim,):
                raise DataFormatError(
                    f"concept vector for {concept!r} has dim {vec.shape}, "
                    f"expected ({dim},)")
            out[i] = vec
    return out


@dataclass
class GatParams:
    w: List[List[Tensor]]   # [layer][head] node transform, d_g x d_g
    a: List[List[Tensor]]   # [layer][head] attention vector, 2*d_g
    leaky_slope: float = 0.2

    @property
    def n_layers(self) -> int:
        return len(self.w)

    @property
    def n_heads(self) -> int:
        return len(self.w[0])

    @property
    def node_dim(self) -> int:
        return self.w[0][0].shape[0]


@dataclass
class FuseParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class GateParams:
    w1: Tensor   # d_all x hidden
    w2: Tensor   # hidden x d_all


@dataclass
class FusedRepr:
    e_gnn: Tensor
    e_all: Tensor
    g: Tensor
    e_final: Tensor


def attention_coeffs(h: Tensor, sub: Subgraph, layer: int, head: int,
                     params: GatParams) -> Tensor:
    """Attention rows alpha_ij over each node's neighbors (self-loop incl.)."""
    dg = params.node_dim
    wh = h @ params.w[layer][head]
    a = params.a[layer][head]
    src = wh @ _head_part(a, dg, 0)
    dst = wh @ _head_part(a, dg, 1)
    n = h.shape[0]
    scores = (src.reshape(n, 1) + dst.reshape(1, n)).leaky_relu(params.leaky_slope)
    return ad.masked_softmax(scores, sub.adjacency, axis=-1)


def _head_part(a: Tensor, dg: int, half: int) -> Tensor:
    return a.reshape(1, 2 * dg).cols(half * dg, (half + 1) * dg).reshape(dg)


def gat_layer(h: Tensor, sub: Subgraph, params: GatParams, layer: int) -> Tensor:
    """One refinement step: mean over heads of attention-weighted sums, ELU."""
    acc = None
    for m in range(params.n_heads):
        alpha = attention_coeffs(h, sub, layer, m, params)
        contrib = alpha @ (h @ params.w[layer][m])
        acc = contrib if acc is None else acc + contrib
    return (acc * (1.0 / params.n_heads)).elu()


def run_gat(node_init: np.ndarray, sub: Subgraph, params: GatParams) -> Tensor:
    h = Tensor(node_init)
    for layer in range(params.n_layers):
        h = gat_layer(h, sub, params, layer)
    return h


def pool_subgraph(h: Optional[Tensor], node_dim: int) -> Tensor:
    """Arithmetic mean over node states; zero vector for an empty subgraph."""
    if h is None or h.shape[0] == 0:
        return Tensor(np.zeros(node_dim))
    return h.mean(axis=0)


def fuse(e_base: Tensor, e_gnn: Tensor, params: FuseParams) -> Tensor:
    """One-hidden-layer ELU MLP over the concatenated representations."""
    x = ad.concat([e_base, e_gnn], axis=0)
    return (x @ params.w1 + params.b1).elu() @ params.w2 + params.b2


def self_refine(e_all: Tensor, params: GateParams) -> Tensor:
    """Dimension-wise attention gate.

    Scores pass through a tanh bottleneck; softmax weights are rescaled by the
    dimension count so uniform scores leave the vector unchanged (up to ELU).
    """
    dim = e_all.shape[0]
    scores = (e_all @ params.w1).tanh() @ params.w2
    gate = ad.masked_softmax(scores, None, axis=-1) * float(dim)
    return (gate * e_all).elu()


def concat_final(g: Tensor, e_base: Tensor) -> Tensor:
    return ad.concat([g, e_base], axis=0)


def load_concept_table(path, dim: int, seed: int = 0) -> Dict[str, np.ndarray]:
    """Load a word2vec-style text table (optional header line).

    Vectors whose dimension differs from `dim` are mapped through a fixed
    seeded Gaussian random projection.
    """
    raw: Dict[str, np.ndarray] = {}
    src_dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue   # header
                except ValueError:
                    pass
            concept, values = parts[0], parts[1:]
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise DataFormatError(
                    f"{path}:{lineno}: non-numeric vector component") from None
            if src_dim is None:
                src_dim = vec.size
            elif vec.size != src_dim:
                raise DataFormatError(
                    f"{path}:{lineno}: vector dim {vec.size} != {src_dim}")
            raw[concept] = vec
    if src_dim is None or src_dim == dim:
        return raw
    proj = np.random.default_rng(seed).normal(size=(src_dim, dim)) / np.sqrt(src_dim)
    return {c: v @ proj for c, v in raw.items()}
