# MIT License
# Copyright (c) 2024 The semples authors

import json

import pytest

from semples.cli import EXIT_OK, main

ARTIFACTS = ("config.txt", "generator_A.ckpt", "bank_B.ckpt", "generator_C.ckpt")
LOGS = ("log_A.jsonl", "log_B.jsonl", "log_C.jsonl")


def _log_without_time(path):
    records = [json.loads(line) for line in path.read_text().splitlines()]
    for record in records:
        del record["time"]
    return records


@pytest.fixture(scope="module")
def runs(toy_corpus, tmp_path_factory):
    outs = []
    for name in ("first", "second"):
        out = tmp_path_factory.mktemp(name)
        args = ["train-all", "--data", str(toy_corpus.root), "--out", str(out), "--set", "epochs=2"]
        assert main(args) == EXIT_OK
        outs.append(out)
    return outs


@pytest.mark.parametrize("name", ARTIFACTS)
def test_artifacts_are_identical(runs, name):
    first, second = runs
    assert (first / name).read_bytes() == (second / name).read_bytes()


@pytest.mark.parametrize("name", LOGS)
def test_logs_are_identical(runs, name):
    first, second = runs
    assert _log_without_time(first / name) == _log_without_time(second / name)
