# MIT License
# Copyright (c) 2024 The semples authors

import pytest

from semples import default_config


@pytest.mark.parametrize(
    "tag,weights,lr",
    [
        ("voc", (2.4, 0.02, 0.05), 5e-4),
        ("coco", (0.75, 0.01, 0.2), 5e-6),
    ],
)
def test_presets(tag, weights, lr):
    config = default_config(tag)
    assert (config.lambda_b, config.lambda_T, config.lambda_refine) == weights
    assert config.prompt_len == 30
    assert config.batch_size == 64
    assert config.epochs == 60
    assert config.lr_phaseA == lr
    assert {config.phase_lr(letter) for letter in "ABC"} == {lr}
    assert {config.phase_epochs(letter) for letter in "ABC"} == {60}
