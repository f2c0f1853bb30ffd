# MIT License
# Copyright (c) 2024 The semples authors

import pytest

from semples import ToyDualEncoder, apply_overrides, default_config, load_corpus, make_toy_corpus, run_pipeline


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    return make_toy_corpus(tmp_path_factory.mktemp("toy"), seed=0)


@pytest.fixture(scope="session")
def toy_samples(toy_corpus):
    return load_corpus(toy_corpus.root, toy_corpus.catalog)


@pytest.fixture(scope="session")
def toy_config():
    return default_config("toy")


@pytest.fixture(scope="session")
def encoder():
    return ToyDualEncoder()


@pytest.fixture(scope="session")
def full_run(toy_samples, toy_corpus, toy_config, encoder):
    return run_pipeline(toy_samples, toy_config, encoder=encoder, catalog=toy_corpus.catalog)


@pytest.fixture(scope="session")
def match_only_run(toy_samples, toy_corpus, toy_config, encoder):
    config = apply_overrides(toy_config, {"enabled_losses": "match"})
    return run_pipeline(toy_samples, config, encoder=encoder, catalog=toy_corpus.catalog)
