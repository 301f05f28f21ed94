"""Command-line harness tying the pipeline together.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import gat as gatmod
from . import harness, kemb, kgstore, trainkit
from .errors import DataFormatError, NumericError
from .linker import extract_entities, tokenize
from .model import KegatModel, ModelConfig

click.UsageError.exit_code = 1


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DataFormatError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(2)
        except NumericError as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(3)
    return wrapper


def _load_kb(path) -> kgstore.KnowledgeGraph:
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == kgstore.MAGIC:
        return kgstore.load_binary(path)
    return kgstore.load_graph(path)


@click.group()
def main():
    """Knowledge-enhanced graph attention pipeline."""


# -- kb ----------------------------------------------------------------------

@main.group()
def kb():
    """Knowledge-base utilities."""


@kb.command("ingest")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--blocklist", "blocklist_path", type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path())
@_handle_errors
def kb_ingest(input_path, blocklist_path, output_path):
    """Load a TSV edge list, apply the relation blocklist, write binary."""
    blocklist = set(kgstore.DEFAULT_BLOCKLIST)
    if blocklist_path:
        with open(blocklist_path, encoding="utf-8") as fh:
            blocklist.update(line.strip() for line in fh if line.strip())
    graph = kgstore.load_graph(input_path, frozenset(blocklist))
    kgstore.save_binary(graph, output_path)
    click.echo(json.dumps({"stats": graph.stats.as_dict(),
                           "blocklist": sorted(blocklist)}))


# -- link --------------------------------------------------------------------

@main.command()
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="JSONL with an 'id' and 'text' field per line.")
@click.option("--max-ngram", default=4, show_default=True)
@_handle_errors
def link(kb_path, input_path, max_ngram):
    """Emit entity spans found in each input line."""
    graph = _load_kb(kb_path)
    with open(input_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            tokens = tokenize(rec["text"])
            spans = extract_entities(tokens, graph, max_ngram)
            click.echo(json.dumps({
                "id": rec.get("id", lineno), "tokens": tokens,
                "spans": [{"start": s.start, "end": s.end, "concept": s.concept}
                          for s in spans]}))


# -- preprocess --------------------------------------------------------------

@main.group()
def preprocess():
    """Input preprocessing."""


@preprocess.command("inject")
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True))
@click.option("--templates", "templates_path", type=click.Path(exists=True))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--subtask", type=click.Choice(["a", "b"]), default="a", show_default=True)
@click.option("--max-len", default=128, show_default=True)
@click.option("--per-entity-limit", default=2, show_default=True)
@click.option("--max-ngram", default=4, show_default=True)
@_handle_errors
def preprocess_inject(kb_path, templates_path, input_path, subtask, max_len,
                      per_entity_limit, max_ngram):
    """Show knowledge-injected sequences for inspection."""
    graph = _load_kb(kb_path)
    templates = (kemb.load_templates(templates_path) if templates_path
                 else kemb.default_templates())
    instances = harness.load_comve(input_path, subtask)
    vocab = harness.build_vocab(graph, templates, instances)
    for inst in instances:
        for idx, tokens in enumerate(harness.convert(inst).options):
            spans = extract_entities(tokens, graph, max_ngram)
            tree = kemb.build_tree(tokens, spans, graph, per_entity_limit, templates)
            seq = kemb.flatten(tree, vocab, max_len)
            click.echo(json.dumps({
                "id": inst.id, "option": idx,
                "tokens": [vocab.token(t) for t in seq.tokens],
                "soft_pos": list(seq.soft_pos),
                "trunk_mask": [int(b) for b in seq.trunk_mask],
                "branches": len(tree.branches)}))


# -- augment / synth ---------------------------------------------------------

@main.command()
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True))
@click.option("--templates", "templates_path", type=click.Path(exists=True))
@click.option("--count", default=100, show_default=True)
@click.option("--subtask", type=click.Choice(["a", "b"]), default="a", show_default=True)
@click.option("--corrupt-policy", default="uniform-nonneighbor", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--output", "output_path", required=True, type=click.Path())
@_handle_errors
def augment(kb_path, templates_path, count, subtask, corrupt_policy, seed,
            output_path):
    """Generate template-realized instances from the KB."""
    graph = _load_kb(kb_path)
    templates = (kemb.load_templates(templates_path) if templates_path
                 else kemb.default_templates())
    instances = harness.generate_augmented(graph, templates, count,
                                           corrupt_policy, seed, subtask)
    harness.save_comve(instances, output_path)
    click.echo(f"wrote {len(instances)} instances to {output_path}")


@main.command()
@click.option("--seed", default=7, show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--sizes", default="400,120,120", show_default=True)
@click.option("--n-concepts", default=500, show_default=True)
@click.option("--n-edges", default=1000, show_default=True)
@click.option("--subtask", type=click.Choice(["a", "b"]), default="a", show_default=True)
@_handle_errors
def synth(seed, out_dir, sizes, n_concepts, n_edges, subtask):
    """Generate the synthetic toy benchmark."""
    parts = tuple(int(x) for x in sizes.split(","))
    if len(parts) != 3:
        raise click.UsageError("--sizes needs three comma-separated integers")
    bench = harness.synth_benchmark(seed, out_dir, sizes=parts,
                                    n_concepts=n_concepts, n_edges=n_edges,
                                    subtask=subtask)
    click.echo(json.dumps({k: str(v) for k, v in bench.paths.items()}))


# -- train / eval / predict / ensemble ---------------------------------------

_MODEL_CFG_KEYS = ("dim", "n_layers", "n_heads", "ffn_mult", "max_len",
                   "max_positions", "gat_layers", "gat_heads", "sample_k",
                   "node_dim", "fuse_hidden", "fuse_dim", "gate_hidden",
                   "head_hidden", "per_entity_limit", "max_ngram", "dropout",
                   "seed")


def _build_model(cfg: dict, kb_path, vectors_path, templates_path,
                 instances) -> KegatModel:
    graph = _load_kb(kb_path)
    templates = (kemb.load_templates(templates_path) if templates_path
                 else kemb.default_templates())
    model_cfg = ModelConfig(
        **{k: cfg[k] for k in _MODEL_CFG_KEYS if k in cfg},
        use_kemb=not cfg.get("no_kemb", False),
        use_kegat=not cfg.get("no_kegat", False),
        use_lm=not cfg.get("no_lm_loss", False))
    table = {}
    if vectors_path and model_cfg.use_kegat:
        table = gatmod.load_concept_table(vectors_path, model_cfg.node_dim, seed=0)
    vocab = harness.build_vocab(graph, templates, instances)
    return KegatModel(model_cfg, vocab, graph, table, templates)


@main.command()
@click.option("--subtask", type=click.Choice(["a", "b"]), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True))
@click.option("--vectors", "vectors_path", type=click.Path(exists=True))
@click.option("--templates", "templates_path", type=click.Path(exists=True))
@click.option("--train-data", required=True, type=click.Path(exists=True))
@click.option("--dev-data", required=True, type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path(),
              help="Checkpoint path; config/vocab/log written alongside.")
@click.option("--no-kemb", is_flag=True, help="Disable knowledge injection.")
@click.option("--no-kegat", is_flag=True, help="Disable graph reasoning.")
@click.option("--no-lm-loss", is_flag=True, help="Disable the reconstruction loss.")
@_handle_errors
def train(subtask, config_path, kb_path, vectors_path, templates_path,
          train_data, dev_data, output_path, no_kemb, no_kegat, no_lm_loss):
    """Two-phase training with dev-accuracy model selection."""
    cfg = {}
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    cfg["no_kemb"] = no_kemb or cfg.get("no_kemb", False)
    cfg["no_kegat"] = no_kegat or cfg.get("no_kegat", False)
    cfg["no_lm_loss"] = no_lm_loss or cfg.get("no_lm_loss", False)
    train_set = harness.load_comve(train_data, subtask)
    dev_set = harness.load_comve(dev_data, subtask)
    model = _build_model(cfg, kb_path, vectors_path, templates_path,
                         train_set + dev_set)
    schedule = trainkit.Schedule.from_config(cfg)
    seed = cfg.get("seed", 0)
    result = trainkit.two_phase_train(model, train_set, dev_set, schedule, seed)
    out = Path(output_path)
    trainkit.save_checkpoint(out, model.store,
                             rng=np.random.default_rng(seed),
                             best_metric=result.best_metric)
    model.vocab.save(out.with_suffix(".vocab.txt"))
    sidecar = {"subtask": subtask, "kb": str(kb_path),
               "vectors": str(vectors_path) if vectors_path else None,
               "templates": str(templates_path) if templates_path else None,
               "config": {**cfg, "subtask": subtask}}
    out.with_suffix(".config.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(out.with_suffix(".log.jsonl"), "w", encoding="utf-8") as fh:
        for entry in result.log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    click.echo(json.dumps({"best_dev_accuracy": result.best_metric,
                           "aborted": result.aborted,
                           "checkpoint": str(out)}))
    if result.aborted:
        sys.exit(3)


def _load_model(checkpoint_path, data_instances) -> tuple:
    out = Path(checkpoint_path)
    sidecar = json.loads(out.with_suffix(".config.json").read_text())
    cfg = sidecar["config"]
    model = _build_model(cfg, sidecar["kb"], sidecar["vectors"],
                         sidecar["templates"], data_instances)
    trainkit.load_checkpoint(out, model.store)
    return model, sidecar["subtask"]


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--subtask", type=click.Choice(["a", "b"]), required=True)
@_handle_errors
def eval_cmd(checkpoint, data_path, subtask):
    """Accuracy of a trained checkpoint on a dataset."""
    instances = harness.load_comve(data_path, subtask)
    model, _ = _load_model(checkpoint, instances)
    metrics = harness.evaluate(model, instances)
    click.echo(json.dumps({"accuracy": metrics.accuracy,
                           "count": len(instances)}))


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--subtask", type=click.Choice(["a", "b"]), required=True)
@click.option("--output", "output_path", type=click.Path())
@_handle_errors
def predict(checkpoint, data_path, subtask, output_path):
    """Per-instance probabilities and predictions."""
    instances = harness.load_comve(data_path, subtask)
    model, _ = _load_model(checkpoint, instances)
    metrics = harness.evaluate(model, instances)
    lines = [json.dumps(p, sort_keys=True) for p in metrics.predictions]
    if output_path:
        Path(output_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        for line in lines:
            click.echo(line)


@main.command()
@click.option("--checkpoints", required=True,
              help="Comma-separated checkpoint paths.")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--subtask", type=click.Choice(["a", "b"]), required=True)
@_handle_errors
def ensemble(checkpoints, data_path, subtask):
    """Probability-averaged ensemble accuracy."""
    from .head import ensemble_average
    instances = harness.load_comve(data_path, subtask)
    models = [_load_model(p.strip(), instances)[0]
              for p in checkpoints.split(",") if p.strip()]
    if not models:
        raise click.UsageError("--checkpoints must name at least one checkpoint")
    correct = 0
    for inst in instances:
        avg = ensemble_average([m.predict_probs(inst) for m in models])
        correct += int(np.argmax(avg)) == inst.label
    click.echo(json.dumps({"accuracy": correct / len(instances),
                           "models": len(models)}))


if __name__ == "__main__":
    main()
