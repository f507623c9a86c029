import dataclasses
import io

import pytest
import torch

import synth
from rinser_mlm import (
    DESK,
    Checkpoint,
    EngineError,
    Example,
    build_model,
    build_tokenizer,
    encode_example,
    evaluate_loss,
    finetune,
    gradient_check,
    pretrain,
    read_corpus,
)
from rinser_mlm.tokenizer import CLS, MASK

TINY = dataclasses.replace(DESK, layers=1, hidden=32, heads=2, ffn=64, batch_size=8)


def _tiny_corpus(n=12):
    records = [synth.make_example(api, i, __import__("random").Random(i))
               for api in ("apialpha", "apibravo") for i in range(n)]
    return read_corpus(io.StringIO(synth.corpus_text(records)))


def test_encode_example_masks_every_piece_of_a_masked_word():
    corpus = _tiny_corpus()
    tok = build_tokenizer(corpus, 256)
    example = corpus[0]
    ids, targets = encode_example(tok, example, max_len=64)
    assert ids[0] == tok.piece_id(CLS)
    assert targets[0] == -100
    mask_id = tok.piece_id(MASK)
    masked_slots = [i for i, t in enumerate(targets) if t != -100]
    assert masked_slots, "api token should be masked"
    for slot in masked_slots:
        assert ids[slot] == mask_id
    # The api token is atomic, so exactly its one piece is masked.
    assert targets[masked_slots[0]] == tok.piece_id(example.tokens[0])


def test_truncation_is_silent():
    corpus = _tiny_corpus()
    tok = build_tokenizer(corpus, 256)
    long_example = Example(
        api="apialpha",
        variant="normal",
        tokens=("apialpha",) + ("mem",) * 300,
        mask_positions=(0,),
        mask_labels=("apialpha",),
        source={},
    )
    ids, targets = encode_example(tok, long_example, max_len=64)
    assert len(ids) == 64 and len(targets) == 64


def test_all_masks_truncated_away_is_an_error():
    corpus = _tiny_corpus()
    tok = build_tokenizer(corpus, 256)
    late_mask = Example(
        api="apialpha",
        variant="normal",
        tokens=("mem",) * 100 + ("apialpha",),
        mask_positions=(100,),
        mask_labels=("apialpha",),
        source={},
    )
    config = dataclasses.replace(TINY, steps=1, max_len=16)
    with pytest.raises(EngineError, match="survive truncation"):
        pretrain([late_mask], config, vocab_size=256, tokenizer=tok)


def test_empty_corpus_is_an_error():
    with pytest.raises(EngineError, match="corpus is empty"):
        pretrain([], dataclasses.replace(TINY, steps=0), vocab_size=64)


def test_zero_steps_equals_initialization():
    corpus = _tiny_corpus()
    config = dataclasses.replace(TINY, steps=0, seed=11)
    ckpt = pretrain(corpus, config, vocab_size=256)
    fresh = build_model(config, len(ckpt.tokenizer)).state_dict()
    assert set(ckpt.state) == set(fresh)
    assert all(torch.equal(ckpt.state[k], fresh[k]) for k in fresh)


def test_training_reduces_loss():
    corpus = _tiny_corpus(n=30)
    base = dataclasses.replace(TINY, seed=3)
    before = pretrain(corpus, dataclasses.replace(base, steps=0), vocab_size=256)
    after = pretrain(corpus, dataclasses.replace(base, steps=60), vocab_size=256)
    assert evaluate_loss(after, corpus) < evaluate_loss(before, corpus)


def test_training_is_deterministic():
    corpus = _tiny_corpus()
    config = dataclasses.replace(TINY, steps=10, seed=4)
    a = pretrain(corpus, config, vocab_size=256)
    b = pretrain(corpus, config, vocab_size=256)
    assert all(torch.equal(a.state[k], b.state[k]) for k in a.state)
    assert a.log == b.log


def test_log_records_every_step(trained, desk_config):
    assert len(trained.log) == desk_config.steps
    first = trained.log[0]
    assert set(first) == {"phase", "step", "loss", "lr"}
    assert first["phase"] == "pretrain"
    assert first["lr"] == pytest.approx(desk_config.lr)
    assert all(entry["loss"] > 0 for entry in trained.log)


def test_finetune_appends_to_the_log_and_reuses_the_tokenizer():
    corpus = _tiny_corpus()
    base = pretrain(corpus, dataclasses.replace(TINY, steps=5), vocab_size=256)
    tuned = finetune(base, corpus, dataclasses.replace(TINY, steps=3))
    assert len(tuned.log) == 8
    assert [e["phase"] for e in tuned.log[-3:]] == ["finetune"] * 3
    assert tuned.tokenizer.pieces == base.tokenizer.pieces


def test_finetune_zero_steps_keeps_weights():
    corpus = _tiny_corpus()
    base = pretrain(corpus, dataclasses.replace(TINY, steps=4), vocab_size=256)
    same = finetune(base, corpus, dataclasses.replace(TINY, steps=0))
    assert all(torch.equal(base.state[k], same.state[k]) for k in base.state)


def test_finetune_rejects_architecture_mismatch():
    corpus = _tiny_corpus()
    base = pretrain(corpus, dataclasses.replace(TINY, steps=0), vocab_size=256)
    other = dataclasses.replace(TINY, hidden=64, heads=4)
    with pytest.raises(EngineError, match="architecture"):
        finetune(base, corpus, other)


def test_bert_masking_flag_changes_training_but_stays_deterministic():
    corpus = _tiny_corpus()
    plain = dataclasses.replace(TINY, steps=10, seed=4)
    mixed = dataclasses.replace(plain, bert_masking=True)
    a = pretrain(corpus, mixed, vocab_size=256)
    b = pretrain(corpus, mixed, vocab_size=256)
    c = pretrain(corpus, plain, vocab_size=256)
    assert all(torch.equal(a.state[k], b.state[k]) for k in a.state)
    assert any(not torch.equal(a.state[k], c.state[k]) for k in a.state)


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    corpus = _tiny_corpus()
    ckpt = pretrain(corpus, dataclasses.replace(TINY, steps=6), vocab_size=256)
    ckpt.save(tmp_path / "ckpt")
    back = Checkpoint.load(tmp_path / "ckpt")
    assert back.config == ckpt.config
    assert back.tokenizer.pieces == ckpt.tokenizer.pieces
    assert back.log == ckpt.log
    assert all(torch.equal(back.state[k], ckpt.state[k]) for k in ckpt.state)


def test_checkpoint_missing_file_is_an_error(tmp_path):
    corpus = _tiny_corpus()
    ckpt = pretrain(corpus, dataclasses.replace(TINY, steps=0), vocab_size=256)
    ckpt.save(tmp_path / "ckpt")
    (tmp_path / "ckpt" / "weights.pt").unlink()
    with pytest.raises(EngineError, match="missing weights.pt"):
        Checkpoint.load(tmp_path / "ckpt")


def test_gradient_check_on_tiny_model():
    corpus = _tiny_corpus()
    err = gradient_check(corpus, TINY, vocab_size=256, samples=12)
    assert err < 1e-3
