import dataclasses
import io
import time

import pytest

import synth
from rinser_mlm import DESK, pretrain, read_corpus
from synth import TRAIN_STEPS, VOCAB_SIZE


@pytest.fixture(scope="session")
def corpus_records():
    return synth.make_corpus()


@pytest.fixture(scope="session")
def train_examples(corpus_records):
    train, _ = synth.split_corpus(corpus_records)
    return read_corpus(io.StringIO(synth.corpus_text(train)))


@pytest.fixture(scope="session")
def held_examples(corpus_records):
    _, held = synth.split_corpus(corpus_records)
    return read_corpus(io.StringIO(synth.corpus_text(held)))


@pytest.fixture(scope="session")
def desk_config():
    return dataclasses.replace(DESK, steps=TRAIN_STEPS, seed=0)


@pytest.fixture(scope="session")
def trained_bundle(train_examples, desk_config):
    """(checkpoint, wall seconds) from the one desk-preset training run the
    whole session shares."""
    start = time.perf_counter()
    ckpt = pretrain(train_examples, config=desk_config, vocab_size=VOCAB_SIZE)
    return ckpt, time.perf_counter() - start


@pytest.fixture(scope="session")
def trained(trained_bundle):
    return trained_bundle[0]


@pytest.fixture(scope="session")
def initialized(train_examples, desk_config):
    config = dataclasses.replace(desk_config, steps=0)
    return pretrain(train_examples, config=config, vocab_size=VOCAB_SIZE)
