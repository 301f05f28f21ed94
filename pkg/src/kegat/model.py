"""Full pipeline model: injected encoding, graph reasoning, option scoring.

Per option: the converted token sequence is knowledge-injected (unless
disabled), encoded by the masked transformer, and fused with the pooled GAT
state of a sampled concept subgraph. A shared scalar MLP scores every option;
softmax over options gives the prediction. The training loss optionally adds
the token-reconstruction objective under learnable uncertainty weights.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import encoder as enc
from . import gat as gatmod
from . import harness
from . import head as headmod
from . import kemb
from .autodiff import Tensor
from .kgstore import KnowledgeGraph
from .linker import extract_entities
from .trainkit import ParamStore
from .vocab import Vocab


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4
    max_len: int = 128
    max_positions: int = 160
    gat_layers: int = 2
    gat_heads: int = 2
    sample_k: int = 4
    node_dim: int = 32
    fuse_hidden: int = 64
    fuse_dim: int = 64
    gate_hidden: int = 16
    head_hidden: int = 32
    per_entity_limit: int = 2
    max_ngram: int = 4
    dropout: float = 0.1
    fuse_skip_gain: float = 16.0
    use_kemb: bool = True
    use_kegat: bool = True
    use_lm: bool = True
    seed: int = 0

    @property
    def repr_dim(self) -> int:
        return self.fuse_dim + self.dim if self.use_kegat else self.dim

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class _OptionFeatures:
    seq: kemb.InjectedSequence
    subgraph: Optional[gatmod.Subgraph]
    node_init: Optional[np.ndarray]


class KegatModel:
    """Holds the parameter store and runs per-instance forward passes."""

    def __init__(self, config: ModelConfig, vocab: Vocab,
                 graph: KnowledgeGraph,
                 concept_table: Optional[Dict[str, np.ndarray]] = None,
                 templates: Optional[Dict[str, kemb.Template]] = None):
        self.config = config
        self.vocab = vocab
        self.graph = graph
        self.concept_table = concept_table or {}
        self.templates = templates if templates is not None else kemb.default_templates()
        self.store = ParamStore()
        self._cache: Dict[Tuple[str, int], List[_OptionFeatures]] = {}
        self._init_params(np.random.default_rng(config.seed))

    # -- parameter construction ----------------------------------------------

    def _mat(self, rng, name: str, fan_in: int, fan_out: int) -> Tensor:
        scale = np.sqrt(2.0 / (fan_in + fan_out))
        return self.store.add(name, rng.normal(0.0, scale, size=(fan_in, fan_out)))

    def _vec(self, name: str, size: int, value: float = 0.0) -> Tensor:
        return self.store.add(name, np.full(size, value))

    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.config
        d, V = c.dim, len(self.vocab)
        layers = []
        tok = self.store.add("enc/tok_emb", rng.normal(0.0, 0.1, size=(V, d)))
        pos = self.store.add("enc/pos_emb",
                             rng.normal(0.0, 0.1, size=(c.max_positions, d)))
        for n in range(c.n_layers):
            p = f"enc/l{n}/"
            layers.append(enc.LayerParams(
                wq=self._mat(rng, p + "wq", d, d), bq=self._vec(p + "bq", d),
                wk=self._mat(rng, p + "wk", d, d), bk=self._vec(p + "bk", d),
                wv=self._mat(rng, p + "wv", d, d), bv=self._vec(p + "bv", d),
                wo=self._mat(rng, p + "wo", d, d), bo=self._vec(p + "bo", d),
                ln1_g=self._vec(p + "ln1_g", d, 1.0),
                ln1_b=self._vec(p + "ln1_b", d),
                ffn_w1=self._mat(rng, p + "ffn_w1", d, c.ffn_mult * d),
                ffn_b1=self._vec(p + "ffn_b1", c.ffn_mult * d),
                ffn_w2=self._mat(rng, p + "ffn_w2", c.ffn_mult * d, d),
                ffn_b2=self._vec(p + "ffn_b2", d),
                ln2_g=self._vec(p + "ln2_g", d, 1.0),
                ln2_b=self._vec(p + "ln2_b", d),
            ))
        self.enc_params = enc.EncoderParams(
            tok_emb=tok, pos_emb=pos, layers=layers,
            pooler_w=self._mat(rng, "enc/pooler_w", d, d),
            pooler_b=self._vec("enc/pooler_b", d),
            lm_w=self._mat(rng, "enc/lm_w", d, V),
            lm_b=self._vec("enc/lm_b", V),
            n_heads=c.n_heads)
        if c.use_kegat:
            dg = c.node_dim
            w = [[self._mat(rng, f"gat/l{l}/h{m}/w", dg, dg)
                  for m in range(c.gat_heads)] for l in range(c.gat_layers)]
            a = [[self.store.add(f"gat/l{l}/h{m}/a",
                                 rng.normal(0.0, 0.3, size=2 * dg))
                  for m in range(c.gat_heads)] for l in range(c.gat_layers)]
            self.gat_params = gatmod.GatParams(w=w, a=a)
            self.fuse_params = gatmod.FuseParams(
                w1=self._mat(rng, "fuse/w1", c.dim + dg, c.fuse_hidden),
                b1=self._vec("fuse/b1", c.fuse_hidden),
                w2=self._mat(rng, "fuse/w2", c.fuse_hidden, c.fuse_dim),
                b2=self._vec("fuse/b2", c.fuse_dim))
            # Variance-matched skip: seed the fuse MLP with an identity block
            # that carries the pooled graph summary through to the head at a
            # scale comparable to the text pooler output. Without it the graph
            # signal enters the head an order of magnitude smaller than the
            # text features and the head never picks it up.
            k = min(dg, c.fuse_hidden, c.fuse_dim)
            self.fuse_params.w1.data *= 0.1
            self.fuse_params.w1.data[c.dim:c.dim + k, :k] = np.eye(k)
            self.fuse_params.w2.data *= 0.1
            self.fuse_params.w2.data[:k, :k] = c.fuse_skip_gain * np.eye(k)
            self.gate_params = gatmod.GateParams(
                w1=self._mat(rng, "gate/w1", c.fuse_dim, c.gate_hidden),
                w2=self._mat(rng, "gate/w2", c.gate_hidden, c.fuse_dim))
        else:
            self.gat_params = None
            self.fuse_params = None
            self.gate_params = None
        self.head_params = headmod.HeadParams(
            w1=self._mat(rng, "head/w1", c.repr_dim, c.head_hidden),
            b1=self._vec("head/b1", c.head_hidden),
            w2=self._mat(rng, "head/w2", c.head_hidden, 1),
            b2=self._vec("head/b2", 1))
        if c.use_lm:
            self.loss_params = headmod.LossParams(
                s1=self.store.add("loss/s1", np.zeros(())),
                s2=self.store.add("loss/s2", np.zeros(())))
        else:
            self.loss_params = None

    def head_param_names(self) -> set:
        return {n for n in self.store.names() if n.startswith("head/")}

    # -- feature preparation (cached, deterministic) -------------------------

    def _option_seed(self, instance_id: str, option_idx: int) -> int:
        return self.config.seed ^ zlib.crc32(
            f"{instance_id}:{option_idx}".encode("utf-8"))

    def _features(self, instance: harness.ComveInstance) -> List[_OptionFeatures]:
        key = (instance.id, instance.label)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        c = self.config
        feats: List[_OptionFeatures] = []
        for idx, tokens in enumerate(harness.convert(instance).options):
            if c.use_kemb:
                spans = extract_entities(tokens, self.graph, c.max_ngram)
                tree = kemb.build_tree(tokens, spans, self.graph,
                                       c.per_entity_limit, self.templates)
            else:
                tree = kemb.InjectedTree(trunk=tuple(tokens), branches=())
            seq = kemb.flatten(tree, self.vocab, c.max_len)
            subgraph = None
            node_init = None
            if c.use_kegat:
                subgraph = gatmod.build_subgraph(
                    tokens, self.graph, c.sample_k,
                    self._option_seed(instance.id, idx), c.max_ngram)
                node_init = gatmod.init_node_embeddings(
                    subgraph, self.concept_table, c.node_dim)
            feats.append(_OptionFeatures(seq=seq, subgraph=subgraph,
                                         node_init=node_init))
        self._cache[key] = feats
        return feats

    # -- forward passes ------------------------------------------------------

    def _option_forward(self, feat: _OptionFeatures,
                        dropout_rng: Optional[np.random.Generator]
                        ) -> Tuple[Tensor, enc.EncoderOutput]:
        c = self.config
        E = enc.embed(feat.seq, self.enc_params)
        out = enc.encode(E, feat.seq.visibility, self.enc_params,
                         dropout_rate=c.dropout if dropout_rng is not None else 0.0,
                         dropout_rng=dropout_rng)
        if not c.use_kegat:
            return out.pooled, out
        if feat.subgraph is not None and len(feat.subgraph) > 0:
            h = gatmod.run_gat(feat.node_init, feat.subgraph, self.gat_params)
        else:
            h = None
        e_gnn = gatmod.pool_subgraph(h, c.node_dim)
        e_all = gatmod.fuse(out.pooled, e_gnn, self.fuse_params)
        g = gatmod.self_refine(e_all, self.gate_params)
        return gatmod.concat_final(g, out.pooled), out

    def forward(self, instance: harness.ComveInstance,
                dropout_rng: Optional[np.random.Generator] = None
                ) -> Tuple[headmod.OptionScores, Optional[Tensor]]:
        feats = self._features(instance)
        reprs = []
        lm_total: Optional[Tensor] = None
        for feat in feats:
            e_final, out = self._option_forward(feat, dropout_rng)
            reprs.append(e_final)
            if self.config.use_lm:
                logits = enc.lm_logits(out.hidden, self.enc_params)
                term = headmod.lm_loss(logits, feat.seq.tokens,
                                       feat.seq.trunk_mask)
                lm_total = term if lm_total is None else lm_total + term
        return headmod.predict(reprs, self.head_params), lm_total

    def loss(self, instance: harness.ComveInstance,
             dropout_rng: Optional[np.random.Generator] = None) -> Tensor:
        scores, lm_total = self.forward(instance, dropout_rng)
        l2 = headmod.classification_loss(scores.probs, instance.label)
        if self.config.use_lm:
            return headmod.combined_loss(lm_total, l2, self.loss_params)
        return l2

    def predict_instance(self, instance: harness.ComveInstance) -> int:
        scores, _ = self.forward(instance)
        return scores.predicted

    def predict_probs(self, instance: harness.ComveInstance) -> np.ndarray:
        scores, _ = self.forward(instance)
        return scores.prob_values.copy()
