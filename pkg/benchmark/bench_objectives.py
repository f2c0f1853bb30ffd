# MIT License
# Copyright (c) 2024 The semples authors

import time

import torch

from semples import loss_match, loss_prompt, loss_refine

NUM_ITERATIONS = 10_000
BATCH = 64
DIM = 512
EPS = 1e-4

generator = torch.Generator().manual_seed(0)
v_f = torch.randn(BATCH, DIM, generator=generator, requires_grad=True)
v_b = torch.randn(BATCH, DIM, generator=generator, requires_grad=True)
u_f = torch.randn(BATCH, DIM, generator=generator)
u_b = torch.randn(BATCH, DIM, generator=generator, requires_grad=True)
# two present classes per image
sample_index = torch.arange(BATCH) // 2


def match_implementation():
    start = time.time()
    for i in range(NUM_ITERATIONS):
        loss_match(v_f, v_b, u_f, 2.4, EPS, sample_index).backward()
    elapsed = time.time() - start
    print("Match loss forward and backward total time {}".format(elapsed))


def prompt_implementation():
    start = time.time()
    for i in range(NUM_ITERATIONS):
        loss_prompt(u_b, v_b, u_f, 0.02, EPS, sample_index)[2].backward()
    elapsed = time.time() - start
    print("Prompt loss forward and backward total time {}".format(elapsed))


def refine_implementation():
    start = time.time()
    for i in range(NUM_ITERATIONS):
        loss_refine(v_f, u_b, EPS, sample_index).backward()
    elapsed = time.time() - start
    print("Refine loss forward and backward total time {}".format(elapsed))


match_implementation()
prompt_implementation()
refine_implementation()
