"""Dataset I/O, conversion, augmentation, synthetic benchmark, evaluation."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kegat.errors import DataFormatError
from kegat.harness import (ComveInstance, Metrics, build_vocab, convert,
                           evaluate, generate_augmented, load_comve,
                           load_comve_csv, save_comve, synth_benchmark)
from kegat.kemb import default_templates
from kegat.kgstore import load_graph, neighbors

ELEPHANT = ComveInstance(
    id="1", subtask="a", label=0,
    statements=("He put an elephant into the fridge",
                "He put a turkey into the fridge"))


def test_instance_validation():
    with pytest.raises(DataFormatError):
        ComveInstance(id="x", subtask="c", label=0)
    with pytest.raises(DataFormatError):
        ComveInstance(id="x", subtask="a", label=0, statements=("only one",))
    with pytest.raises(DataFormatError):
        ComveInstance(id="x", subtask="a", label=2,
                      statements=("first", "second"))
    with pytest.raises(DataFormatError):
        ComveInstance(id="x", subtask="b", label=0, false_sent="s",
                      reasons=("a", "b"))
    with pytest.raises(DataFormatError):
        ComveInstance(id="x", subtask="b", label=3, false_sent="s",
                      reasons=("a", "b", "c"))
    assert ELEPHANT.option_count == 2


def test_convert_subtask_a_exact_tokens():
    out = convert(ELEPHANT)
    assert out.options == (
        ("[CLS]", "he", "put", "an", "elephant", "into", "the", "fridge", "[SEP]"),
        ("[CLS]", "he", "put", "a", "turkey", "into", "the", "fridge", "[SEP]"),
    )


def test_convert_subtask_b_stem_plus_reason():
    inst = ComveInstance(id="2", subtask="b", label=1,
                         false_sent="He drinks apple",
                         reasons=("Apple juice are very tasty",
                                  "Apple can not be drunk",
                                  "Apple cannot eat a human"))
    out = convert(inst)
    assert len(out.options) == 3
    stem = ("[CLS]", "he", "drinks", "apple", "[SEP]")
    for opt in out.options:
        assert opt[:5] == stem
    assert out.options[1][5:] == ("apple", "can", "not", "be", "drunk", "[SEP]")


def test_load_comve_round_trip(tmp_path):
    path = tmp_path / "a.jsonl"
    save_comve([ELEPHANT], path)
    loaded = load_comve(path, "a")
    assert loaded == [ELEPHANT]


def test_load_comve_warns_on_empty(tmp_path, caplog):
    path = tmp_path / "empty.jsonl"
    path.write_text("\n", encoding="utf-8")
    with caplog.at_level("WARNING", logger="kegat.harness"):
        assert load_comve(path, "a") == []
    assert any("no instances" in r.message for r in caplog.records)


def test_load_comve_missing_field_names_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    rec = {"id": "1", "false_sent": "x", "optionA": "a", "optionB": "b",
           "label": 0}   # optionC absent
    path.write_text(json.dumps(rec) + "\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match="optionC"):
        load_comve(path, "b")


def test_load_comve_bad_json_names_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = json.dumps({"id": "1", "sent0": "a b", "sent1": "c d", "label": 0})
    path.write_text(good + "\n{not json\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match=":2"):
        load_comve(path, "a")
    with pytest.raises(DataFormatError):
        load_comve(path, "z")


def test_load_comve_csv_with_column_mapping(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("row_id,first,second,gold\n"
                    "7,Cats chase mice,Mice chase lions,1\n",
                    encoding="utf-8")
    out = load_comve_csv(path, "a", columns={"id": "row_id", "sent0": "first",
                                             "sent1": "second", "label": "gold"})
    assert out == [ComveInstance(id="7", subtask="a", label=1,
                                 statements=("Cats chase mice",
                                             "Mice chase lions"))]
    with pytest.raises(DataFormatError, match="missing column"):
        load_comve_csv(path, "a")


def test_generate_augmented_zero_and_bad_policy(sugar_graph):
    templates = default_templates()
    assert generate_augmented(sugar_graph, templates, 0,
                              "uniform-nonneighbor", 0) == []
    with pytest.raises(DataFormatError):
        generate_augmented(sugar_graph, templates, 2, "flip-relation", 0)


def test_generate_augmented_balance_and_determinism(sugar_graph):
    templates = default_templates()
    a = generate_augmented(sugar_graph, templates, 40,
                           "uniform-nonneighbor", 3)
    b = generate_augmented(sugar_graph, templates, 40,
                           "uniform-nonneighbor", 3)
    assert a == b
    labels = [inst.label for inst in a]
    assert labels.count(0) == labels.count(1) == 20


def _realized_edges(graph, templates):
    from kegat.kemb import realize_triple
    return {" ".join(realize_triple(e, templates)) for e in graph.edges}


def test_generate_augmented_sensible_vs_nonsense(sugar_graph):
    templates = default_templates()
    realized = _realized_edges(sugar_graph, templates)
    for inst in generate_augmented(sugar_graph, templates, 30,
                                   "uniform-nonneighbor", 5):
        sensible = inst.statements[1 - inst.label]
        nonsense = inst.statements[inst.label]
        assert sensible in realized
        assert nonsense not in realized


def test_generate_augmented_corrupted_tail_never_neighbor(tmp_path):
    # single-word concepts so statements map back to graph nodes directly
    from conftest import write_kb
    rows = [(f"h{i}", "/r/IsA", f"t{i}", 1.0 + i * 0.1) for i in range(8)]
    graph = load_graph(write_kb(tmp_path / "kb.tsv", rows))
    templates = default_templates()
    for inst in generate_augmented(graph, templates, 30,
                                   "uniform-nonneighbor", 9):
        nonsense = inst.statements[inst.label]
        head, tail = nonsense.split()[0], nonsense.split()[-1]
        linked = {e.other(head) for e in neighbors(graph, head)}
        assert tail != head and tail not in linked


def test_generate_augmented_head_pool(sugar_graph):
    templates = default_templates()
    out = generate_augmented(sugar_graph, templates, 10,
                             "uniform-nonneighbor", 1, head_pool=["coffee"])
    for inst in out:
        assert inst.statements[1 - inst.label].startswith("coffee")
    with pytest.raises(DataFormatError):
        generate_augmented(sugar_graph, templates, 2, "uniform-nonneighbor",
                           1, head_pool=["drink"])   # no outgoing edges


def test_generate_augmented_subtask_b_distractors(tmp_path):
    from conftest import write_kb
    rows = [(f"h{i}", "/r/IsA", f"t{i}", 1.0 + i * 0.1) for i in range(12)]
    graph = load_graph(write_kb(tmp_path / "kb.tsv", rows))
    templates = default_templates()
    out = generate_augmented(graph, templates, 12, "uniform-nonneighbor", 2,
                             subtask="b")
    labels = [inst.label for inst in out]
    assert sorted(labels.count(v) for v in (0, 1, 2)) == [4, 4, 4]
    realized = _realized_edges(graph, templates)
    for inst in out:
        correct = inst.reasons[inst.label]
        assert correct in realized
        head, tail = correct.split()[0], correct.split()[-1]
        for i, reason in enumerate(inst.reasons):
            if i != inst.label:
                words = set(reason.split())
                assert head not in words and tail not in words


def test_synth_benchmark_deterministic(tmp_path):
    b1 = synth_benchmark(3, tmp_path / "r1", sizes=(20, 8, 8),
                         n_concepts=60, n_edges=120)
    b2 = synth_benchmark(3, tmp_path / "r2", sizes=(20, 8, 8),
                         n_concepts=60, n_edges=120)
    for name in ("kb", "vectors", "train", "dev", "test"):
        assert b1.paths[name].read_bytes() == b2.paths[name].read_bytes()
    assert b1.train == b2.train


def test_synth_benchmark_structure(tmp_path):
    b = synth_benchmark(5, tmp_path, sizes=(20, 8, 8),
                        n_concepts=60, n_edges=120)
    assert len(b.train) == 20 and len(b.dev) == 8 and len(b.test) == 8
    assert len(b.graph.edges) == 120
    for e in b.graph.edges:
        assert 0.5 <= e.weight <= 4.0
    for c, v in b.concept_table.items():
        assert v.shape == (64,)
        np.testing.assert_allclose(np.linalg.norm(v), 1.0, atol=1e-6)
    # head pools are disjoint across splits
    heads = {split: {inst.statements[1 - inst.label].split()[0]
                     for inst in getattr(b, split)}
             for split in ("train", "dev", "test")}
    assert not heads["train"] & heads["test"]
    assert not heads["train"] & heads["dev"]
    with pytest.raises(ValueError):
        synth_benchmark(5, tmp_path, sizes=(0, 1, 1))


def test_build_vocab_covers_everything(sugar_graph):
    templates = default_templates()
    instances = generate_augmented(sugar_graph, templates, 6,
                                   "uniform-nonneighbor", 0)
    vocab = build_vocab(sugar_graph, templates, instances)
    assert vocab.lookup("sugar") != vocab.unk_id
    assert vocab.lookup("sweetening") != vocab.unk_id
    for inst in instances:
        for opt in convert(inst).options:
            for tok in opt:
                assert vocab.lookup(tok) != vocab.unk_id


class _StubModel:
    def __init__(self, answers):
        self.answers = answers

    def predict_probs(self, inst):
        probs = np.full(inst.option_count, 0.1)
        probs[self.answers[inst.id]] = 1.0
        return probs / probs.sum()


def _toy_instances(labels):
    return [ComveInstance(id=f"i{k}", subtask="a", label=lab,
                          statements=("first thing", "second thing"))
            for k, lab in enumerate(labels)]


def test_evaluate_accuracy_and_dump():
    insts = _toy_instances([0, 1, 0, 1])
    perfect = _StubModel({f"i{k}": inst.label
                          for k, inst in enumerate(insts)})
    m = evaluate(perfect, insts)
    assert m.accuracy == 1.0
    assert all(p["correct"] for p in m.predictions)
    wrong = _StubModel({f"i{k}": 1 - inst.label
                        for k, inst in enumerate(insts)})
    assert evaluate(wrong, insts).accuracy == 0.0
    three = _StubModel({"i0": 0, "i1": 1, "i2": 0, "i3": 0})
    m = evaluate(three, insts)
    assert m.accuracy == 0.75
    assert [p["predicted"] for p in m.predictions] == [0, 1, 0, 0]
    assert evaluate(perfect, []) == Metrics(accuracy=0.0, predictions=[])


@given(st.integers(0, 1000), st.integers(1, 25))
@settings(max_examples=25, deadline=None)
def test_generate_augmented_invariants(seed, count):
    from conftest import sugar_graph_cached
    graph = sugar_graph_cached()
    out = generate_augmented(graph, default_templates(), count,
                             "uniform-nonneighbor", seed)
    assert len(out) == count
    labels = [inst.label for inst in out]
    assert abs(labels.count(0) - labels.count(1)) <= 1
    for inst in out:
        assert inst.statements[0] != inst.statements[1]
