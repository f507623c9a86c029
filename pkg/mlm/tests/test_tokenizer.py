import io

import pytest

import synth
from rinser_mlm import (
    SPECIALS,
    SYMBOL_TOKENS,
    UNK,
    EngineError,
    TokenizerModel,
    build_tokenizer,
    read_corpus,
)


@pytest.fixture(scope="module")
def corpus():
    records = synth.make_corpus(n_per_api=5)
    return read_corpus(io.StringIO(synth.corpus_text(records)))


@pytest.fixture(scope="module")
def tok(corpus):
    return build_tokenizer(corpus, vocab_size=512)


def test_specials_lead_the_vocabulary(tok):
    assert tok.pieces[: len(SPECIALS)] == SPECIALS


def test_every_api_name_is_atomic(tok):
    for api in synth.ALL_APIS:
        assert api in tok.atomic
        assert tok.encode_word(api) == [api]


def test_symbol_tokens_are_atomic(tok):
    for symbol in SYMBOL_TOKENS:
        assert tok.encode_word(symbol) == [symbol]


def test_vocab_size_below_floor_is_an_error(corpus):
    with pytest.raises(EngineError, match="smaller than atomic"):
        build_tokenizer(corpus, vocab_size=10)


def test_vocab_cap_is_respected(corpus):
    floor = len(SPECIALS) + len(SYMBOL_TOKENS) + len(synth.ALL_APIS)
    tok = build_tokenizer(corpus, vocab_size=floor)
    assert len(tok) == floor
    # No room for alphabet pieces: non-atomic words cannot encode.
    assert tok.encode_word("arg0a") == [UNK]


def test_unseen_word_splits_with_continuation_marker(tok):
    # Composable from corpus characters: 'mov' starts words, 'arg' continues.
    word = "movarg"
    assert word not in tok.atomic
    pieces = tok.encode_word(word)
    assert len(pieces) >= 2
    assert not pieces[0].startswith("##")
    assert all(p.startswith("##") for p in pieces[1:])
    rebuilt = pieces[0] + "".join(p.removeprefix("##") for p in pieces[1:])
    assert rebuilt == word


def test_word_with_unknown_character_becomes_unk(tok):
    assert tok.encode_word("arg~0a") == [UNK]


def test_build_is_deterministic(corpus):
    again = build_tokenizer(corpus, vocab_size=512)
    assert again.pieces == build_tokenizer(corpus, vocab_size=512).pieces


def test_json_round_trip(tok):
    back = TokenizerModel.from_json(tok.to_json())
    assert back.pieces == tok.pieces
    assert back.atomic == tok.atomic
    assert back.encode_word("alphabravo") == tok.encode_word("alphabravo")


def test_piece_id_rejects_unknown(tok):
    with pytest.raises(EngineError, match="not in the vocabulary"):
        tok.piece_id("neverapiece")


def test_duplicate_pieces_rejected():
    with pytest.raises(EngineError, match="duplicate"):
        TokenizerModel(pieces=SPECIALS + ("a", "a"), atomic=frozenset())


def test_missing_special_rejected():
    with pytest.raises(EngineError, match="missing special"):
        TokenizerModel(pieces=("a", "b"), atomic=frozenset())
