# MIT License
# Copyright (c) 2024 The semples authors

import pytest
import torch

from semples import ClassCatalog, MaskSet, compose_triplet

CATALOG = ClassCatalog(("train", "bird", "dog"))


@pytest.mark.parametrize("seed", range(100))
def test_foreground_and_background_add_up(seed):
    generator = torch.Generator().manual_seed(seed)
    height, width = (int(v) for v in torch.randint(1, 40, (2,), generator=generator))
    image = torch.rand(3, height, width, generator=generator)
    masks = MaskSet(torch.rand(len(CATALOG), height, width, generator=generator))
    k = int(torch.randint(0, len(CATALOG), (1,), generator=generator))
    labels = [0] * len(CATALOG)
    labels[k] = 1

    triplet = compose_triplet(image, masks, k, CATALOG, labels=labels)

    torch.testing.assert_close(triplet.foreground + triplet.background, image, rtol=0, atol=4e-7)
    assert (triplet.foreground >= 0).all()
    assert (triplet.background >= 0).all()
    assert triplet.text == CATALOG.text(k)
