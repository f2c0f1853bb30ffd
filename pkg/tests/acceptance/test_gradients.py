# MIT License
# Copyright (c) 2024 The semples authors

import pytest
import torch

from semples import loss_match, loss_prompt, loss_refine

EPS = 1e-4


def _instance(seed, count):
    """Positive vectors keep every similarity well inside the pass
    through region of the clamps."""
    generator = torch.Generator().manual_seed(seed)
    pairs = int(torch.randint(1, 5, (1,), generator=generator))
    dim = int(torch.randint(4, 17, (1,), generator=generator))
    tensors = [
        (torch.rand(pairs, dim, dtype=torch.float64, generator=generator) + 0.05).requires_grad_(True)
        for _ in range(count)
    ]
    sample_index = torch.randint(0, 2, (pairs,), generator=generator)
    return tensors, sample_index


def _gradcheck(fn, inputs):
    return torch.autograd.gradcheck(fn, tuple(inputs), eps=1e-5, atol=1e-8, rtol=1e-4)


@pytest.mark.parametrize("seed", range(50))
def test_match(seed):
    inputs, sample_index = _instance(seed, 3)
    assert _gradcheck(lambda v_f, v_b, u_f: loss_match(v_f, v_b, u_f, 2.4, EPS, sample_index), inputs)


@pytest.mark.parametrize("seed", range(50))
def test_prompt(seed):
    inputs, sample_index = _instance(1000 + seed, 3)
    assert _gradcheck(lambda u_b, v_b, u_f: loss_prompt(u_b, v_b, u_f, 0.02, EPS, sample_index)[2], inputs)


@pytest.mark.parametrize("seed", range(50))
def test_refine(seed):
    inputs, sample_index = _instance(2000 + seed, 2)
    assert _gradcheck(lambda v_f, u_b: loss_refine(v_f, u_b, EPS, sample_index), inputs)
