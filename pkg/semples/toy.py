# MIT License
# Copyright (c) 2024 The semples authors

"""Synthetic corpus where one class always shows up with the same
background.

Images have a black background. A `train` is a red block in the upper
part of the image and comes with `rails`, a band of blue vertical stripes
along the bottom, at `cooccurrence_rate`. A `bird` is a green disc and has
no texture of its own. About one image out of ten holds both classes.

Besides the corpus, `masks/` holds the ground truth class maps (0
background, `k + 1` class `k`) and `regions/` marks the rails band with 1.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np

from ._catalog import ClassCatalog, LabeledImage, multi_hot
from .corpus import write_corpus, write_png
from .default_values import DEFAULT_TOY_COOCCURRENCE_RATE, DEFAULT_TOY_IMAGE_SIZE, DEFAULT_TOY_NUM_IMAGES

logger = logging.getLogger(__name__)

TOY_CATALOG = ClassCatalog(("train", "bird"))
TRAIN, BIRD = 0, 1

MASKS_DIR = "masks"
REGIONS_DIR = "regions"

BOTH_CLASSES_RATE = 0.1
TRAIN_INTENSITY = 0.9
BIRD_INTENSITY = 0.9
RAILS_INTENSITY = 0.6
STRIPE_PERIOD = 8


@dataclass(frozen=True)
class ToySample:
    image: LabeledImage
    # ground truth labels, 0 background and k + 1 for class k
    class_map: np.ndarray
    # 1 on the co-occurring texture band, 0 elsewhere
    region_map: np.ndarray


@dataclass(frozen=True)
class ToyCorpus:
    root: Path
    catalog: ClassCatalog
    samples: List[ToySample]


def _draw_sample(rng: np.random.Generator, index: int, size: int, cooccurrence_rate: float) -> ToySample:
    scale = size / 64
    band_top = size - size // 4
    pixels = np.zeros((size, size, 3), dtype=np.float32)
    class_map = np.zeros((size, size), dtype=np.uint8)
    region_map = np.zeros((size, size), dtype=np.uint8)

    draw = rng.random()
    both = draw < BOTH_CLASSES_RATE
    has_train = both or draw < BOTH_CLASSES_RATE + (1 - BOTH_CLASSES_RATE) / 2
    has_bird = both or not has_train
    # with both classes the train takes the left half and the bird the right one
    left, right = (0, size // 2) if both else (0, size)

    if has_train:
        side = int(rng.integers(round(16 * scale), round(22 * scale) + 1))
        margin = max(1, round(2 * scale))
        y = int(rng.integers(margin, band_top - side - margin + 1))
        x = int(rng.integers(left + margin, left + (right - left) - side - margin + 1))
        pixels[y : y + side, x : x + side, 0] = TRAIN_INTENSITY
        class_map[y : y + side, x : x + side] = TRAIN + 1

        if rng.random() < cooccurrence_rate:
            columns = (np.arange(size) % STRIPE_PERIOD) < STRIPE_PERIOD // 2
            band = pixels[band_top:, :, 2]
            band[:, columns] = RAILS_INTENSITY
            region_map[band_top:, :] = 1

    if has_bird:
        radius = int(rng.integers(round(8 * scale), round(11 * scale) + 1))
        lo, hi = (size // 2, size) if both else (0, size)
        cx = int(rng.integers(lo + radius + 1, hi - radius - 1))
        cy = int(rng.integers(radius + 1, band_top - radius - 1))
        yy, xx = np.mgrid[:size, :size]
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
        pixels[disc, 1] = BIRD_INTENSITY
        class_map[disc] = BIRD + 1

    present = [k for k, flag in ((TRAIN, has_train), (BIRD, has_bird)) if flag]
    image = LabeledImage(f"toy_{index:04d}", pixels, multi_hot(present, len(TOY_CATALOG)))
    return ToySample(image, class_map, region_map)


def generate_toy_samples(
    seed: int,
    num_images: int = DEFAULT_TOY_NUM_IMAGES,
    image_size: int = DEFAULT_TOY_IMAGE_SIZE,
    cooccurrence_rate: float = DEFAULT_TOY_COOCCURRENCE_RATE,
) -> List[ToySample]:
    """Draws the toy samples in memory, deterministic per `seed`."""
    if num_images < 1:
        raise ValueError(f"num_images must be at least 1, got {num_images}")
    if image_size < 64 or image_size % 16:
        raise ValueError(f"image_size must be a multiple of 16 not smaller than 64, got {image_size}")
    if not 0.0 <= cooccurrence_rate <= 1.0:
        raise ValueError(f"cooccurrence_rate must be within [0, 1], got {cooccurrence_rate}")

    rng = np.random.default_rng(seed)
    return [_draw_sample(rng, index, image_size, cooccurrence_rate) for index in range(num_images)]


def make_toy_corpus(
    out_dir: Union[str, Path],
    seed: int,
    num_images: int = DEFAULT_TOY_NUM_IMAGES,
    image_size: int = DEFAULT_TOY_IMAGE_SIZE,
    cooccurrence_rate: float = DEFAULT_TOY_COOCCURRENCE_RATE,
) -> ToyCorpus:
    """Generates the toy corpus and writes it under `out_dir` with its
    ground truth class maps and texture regions."""
    root = Path(out_dir)
    samples = generate_toy_samples(seed, num_images, image_size, cooccurrence_rate)
    write_corpus(root, [sample.image for sample in samples], TOY_CATALOG)
    for sample in samples:
        write_png(root / MASKS_DIR / f"{sample.image.id}.png", sample.class_map)
        write_png(root / REGIONS_DIR / f"{sample.image.id}.png", sample.region_map)

    logger.info(f"toy corpus of {len(samples)} images written to {root} with seed {seed}")
    return ToyCorpus(root, TOY_CATALOG, samples)
