import dataclasses
import io
import json

import pytest

import synth
from rinser_mlm import (
    DESK,
    Checkpoint,
    EngineError,
    Example,
    embed,
    fill_mask,
    pretrain,
    read_corpus,
    read_param_counts,
    write_embeddings,
    write_predictions,
)
from rinser_mlm.infer import clean_name

TINY = dataclasses.replace(DESK, layers=1, hidden=32, heads=2, ffn=64, batch_size=8)


def _unmasked_example():
    return Example(
        api="apialpha",
        variant="normal",
        tokens=("apialpha", "mem"),
        mask_positions=(),
        mask_labels=(),
        source={},
    )


def test_fill_mask_requires_a_mask(trained):
    with pytest.raises(EngineError, match="no mask positions"):
        fill_mask(trained, _unmasked_example(), 3)


def test_fill_mask_rejects_nonpositive_k(trained, held_examples):
    with pytest.raises(EngineError, match="k must be positive"):
        fill_mask(trained, held_examples[0], 0)


def test_fill_mask_topk_shape_and_order(trained, held_examples):
    ranked = fill_mask(trained, held_examples[0], 5)
    assert len(ranked) == 5
    probs = [p for _, p in ranked]
    assert all(a >= b for a, b in zip(probs, probs[1:]))
    assert sum(probs) <= 1.0 + 1e-6
    assert all(isinstance(name, str) and 0.0 <= p <= 1.0 for name, p in ranked)


def test_fill_mask_oversized_k_returns_full_normalized_ranking(trained, held_examples):
    ranked = fill_mask(trained, held_examples[0], 10**6)
    assert len(ranked) == len(trained.tokenizer)
    assert sum(p for _, p in ranked) == pytest.approx(1.0, abs=1e-5)


def test_untrained_model_is_near_uniform(initialized, held_examples):
    ranked = fill_mask(initialized, held_examples[0], 1)
    uniform = 1.0 / len(initialized.tokenizer)
    assert ranked[0][1] < 10 * uniform


def test_mask_beyond_sequence_limit_is_an_error():
    corpus = [synth.make_example("apialpha", i, __import__("random").Random(i))
              for i in range(8)]
    examples = read_corpus(io.StringIO(synth.corpus_text(corpus)))
    config = dataclasses.replace(TINY, steps=0, max_len=8)
    ckpt = pretrain(examples, config, vocab_size=256)
    late = Example(
        api="apialpha",
        variant="normal",
        tokens=("mem",) * 20 + ("apialpha",),
        mask_positions=(20,),
        mask_labels=("apialpha",),
        source={},
    )
    with pytest.raises(EngineError, match="sequence length"):
        fill_mask(ckpt, late, 1)


def test_fill_mask_survives_checkpoint_round_trip_bitwise(trained, held_examples, tmp_path):
    trained.save(tmp_path / "ckpt")
    back = Checkpoint.load(tmp_path / "ckpt")
    for example in held_examples[:5]:
        before = fill_mask(trained, example, 7)
        after = fill_mask(back, example, 7)
        assert [name for name, _ in before] == [name for name, _ in after]
        # Bitwise: the probabilities are equal floats, not just close.
        assert [p for _, p in before] == [p for _, p in after]


def test_embed_is_deterministic(trained):
    a = embed(trained, "apialpha")
    b = embed(trained, "apialpha")
    assert a.vector == b.vector
    assert len(a.vector) == trained.config.hidden
    assert a.composed is False


def test_embed_cleans_names_before_lookup(trained):
    assert embed(trained, "Api-Alpha!").composed is False


def test_embed_composes_unknown_names(trained):
    result = embed(trained, "neverseenname")
    assert result.composed is True
    assert len(result.vector) == trained.config.hidden


def test_embed_rejects_unrepresentable_names(trained):
    with pytest.raises(EngineError, match="empty token"):
        embed(trained, "!!!")


def test_clean_name_matches_corpus_cleanup():
    assert clean_name("FindResourceA") == "findresourcea"
    assert clean_name("Reg-Delete Key.A") == "regdeletekeya"


def test_write_predictions_emits_evaluator_records(trained, held_examples):
    buffer = io.StringIO()
    written = write_predictions(trained, held_examples[:4], buffer, k=3)
    assert written == 4
    lines = [l for l in buffer.getvalue().split("\n") if l]
    assert len(lines) == 4
    for line, example in zip(lines, held_examples):
        obj = json.loads(line)
        assert set(obj) == {"truth", "topk", "param_count", "variant"}
        assert obj["truth"] == example.mask_labels[0]
        assert obj["variant"] == "normal"
        assert obj["param_count"] == 0
        assert len(obj["topk"]) == 3
        for name, prob in obj["topk"]:
            assert isinstance(name, str) and isinstance(prob, float)


def test_write_predictions_uses_param_counts(trained, held_examples):
    buffer = io.StringIO()
    counts = {held_examples[0].mask_labels[0]: 6}
    write_predictions(trained, held_examples[:1], buffer, k=1, param_counts=counts)
    assert json.loads(buffer.getvalue())["param_count"] == 6


def test_read_param_counts(tmp_path):
    path = tmp_path / "catalog.txt"
    path.write_text("# comment\nFindResourceA:hModule,lpName,lpType\nGetProcessHeap:\n")
    counts = read_param_counts(path)
    assert counts == {"findresourcea": 3, "getprocessheap": 0}
    path.write_text("NoColonHere\n")
    with pytest.raises(EngineError, match="line 1"):
        read_param_counts(path)


def test_write_embeddings_format(trained):
    buffer = io.StringIO()
    write_embeddings(trained, ["apialpha", "neverseenname"], buffer)
    lines = [json.loads(l) for l in buffer.getvalue().split("\n") if l]
    assert [l["api"] for l in lines] == ["apialpha", "neverseenname"]
    assert [l["composed"] for l in lines] == [False, True]
    for line in lines:
        assert len(line["vec"]) == trained.config.hidden
        assert all(isinstance(x, float) for x in line["vec"])
