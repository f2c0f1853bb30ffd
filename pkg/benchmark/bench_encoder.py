# MIT License
# Copyright (c) 2024 The semples authors

import time

import torch

from semples import ToyDualEncoder, encode_image, encode_patches, encode_texts

NUM_ITERATIONS = 1_000
BATCH = 64
TEXTS = ["a photo of train", "a photo of bird", "a photo of rails"]

encoder = ToyDualEncoder()
images = torch.rand(BATCH, 3, 64, 64, generator=torch.Generator().manual_seed(0))


def image_implementation():
    start = time.time()
    for i in range(NUM_ITERATIONS):
        encode_image(encoder, images)
    elapsed = time.time() - start
    print("Image encoding of {} images total time {}".format(BATCH, elapsed))


def patches_implementation():
    start = time.time()
    for i in range(NUM_ITERATIONS):
        encode_patches(encoder, images[0])
    elapsed = time.time() - start
    print("Patch encoding total time {}".format(elapsed))


def text_implementation():
    start = time.time()
    for i in range(NUM_ITERATIONS):
        encode_texts(encoder, TEXTS)
    elapsed = time.time() - start
    print("Text encoding total time {}".format(elapsed))


image_implementation()
patches_implementation()
text_implementation()
