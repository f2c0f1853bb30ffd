# MIT License
# Copyright (c) 2024 The semples authors

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F
from torch import nn

from ._catalog import ClassCatalog, LabeledImage
from .archive import read_archive, write_archive
from .config import RunConfig
from .default_values import DEFAULT_GENERATOR_PRIOR_LOGIT, DEFAULT_GENERATOR_WIDTHS, DEFAULT_SEED
from .errors import ArchiveFormatError

logger = logging.getLogger(__name__)

GENERATOR_ARCHIVE_KIND = "mask-generator"


@dataclass(frozen=True, eq=False)
class MaskSet:
    """Soft per class foreground masks, `K×H×W` with values in [0, 1]."""

    values: torch.Tensor

    def __post_init__(self) -> None:
        if self.values.dim() != 3:
            raise ValueError(f"MaskSet values must be K×H×W, got shape {tuple(self.values.shape)}")
        data = self.values.detach()
        if not torch.isfinite(data).all():
            raise ValueError("MaskSet values must be finite")
        if data.numel() and (data.min() < 0 or data.max() > 1):
            raise ValueError("MaskSet values must be within [0, 1]")

    def __repr__(self) -> str:
        num_classes, height, width = self.values.shape
        return f"<MaskSet classes={num_classes} size={height}x{width}>"

    @property
    def num_classes(self) -> int:
        return self.values.shape[0]

    def channel(self, k: int) -> torch.Tensor:
        return self.values[k]


class MaskGenerator(nn.Module):
    """Small fully convolutional network producing one mask per class.

    The hidden convolutions carry no bias and the output logits get a
    fixed prior, so an all zero region of the image is predicted as
    `sigmoid(prior_logit)` for every class. Logits are computed at a
    coarser resolution and bilinearly upsampled to the input size.
    """

    _num_classes: int
    _widths: Tuple[int, ...]

    def __init__(
        self,
        num_classes: int,
        widths: Sequence[int] = DEFAULT_GENERATOR_WIDTHS,
        prior_logit: float = DEFAULT_GENERATOR_PRIOR_LOGIT,
    ) -> None:
        super().__init__()
        if num_classes < 1:
            raise ValueError(f"num_classes must be at least 1, got {num_classes}")
        if not widths:
            raise ValueError("widths can not be empty")

        self._num_classes = num_classes
        self._widths = tuple(widths)

        layers = [nn.Conv2d(3, self._widths[0], 3, padding=1, bias=False), nn.ReLU()]
        for previous, width in zip(self._widths, self._widths[1:]):
            layers += [nn.Conv2d(previous, width, 3, stride=2, padding=1, bias=False), nn.ReLU()]
        last = self._widths[-1]
        layers += [nn.Conv2d(last, last, 3, padding=1, bias=False), nn.ReLU()]
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv2d(last, num_classes, 1, bias=False)
        self.register_buffer("prior_logit", torch.tensor(float(prior_logit)))

    def __str__(self) -> str:
        return f"<MaskGenerator classes={self._num_classes} widths={self._widths}>"

    __repr__ = __str__

    @property
    def num_classes(self) -> int:
        return self._num_classes

    @property
    def widths(self) -> Tuple[int, ...]:
        return self._widths

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """`B×3×H×W` images to `B×K×H×W` masks."""
        logits = self.head(self.body(images))
        logits = F.interpolate(logits, size=images.shape[-2:], mode="bilinear", align_corners=False)
        return torch.sigmoid(logits + self.prior_logit.to(logits.dtype))


def create_generator(
    num_classes: int,
    config: Optional[RunConfig] = None,
    *,
    seed: Optional[int] = None,
) -> MaskGenerator:
    """Builds a freshly initialized generator.

    Initialization uses `seed`, or the seed of `config`, without
    touching the global torch random state.
    """
    widths = config.generator_widths if config is not None else DEFAULT_GENERATOR_WIDTHS
    prior_logit = config.generator_prior_logit if config is not None else DEFAULT_GENERATOR_PRIOR_LOGIT
    if seed is None:
        seed = config.seed if config is not None else DEFAULT_SEED

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        generator = MaskGenerator(num_classes, widths, prior_logit)

    logger.debug(f"{generator} created with seed {seed}")
    return generator


def generate_masks(gen: MaskGenerator, img: Union[torch.Tensor, LabeledImage]) -> MaskSet:
    """`M = S(img)` for a single `3×H×W` image."""
    if isinstance(img, LabeledImage):
        img = img.tensor()
    if img.dim() != 3 or img.shape[0] != 3:
        raise ValueError(f"Expected a 3×H×W image, got shape {tuple(img.shape)}")
    if not torch.isfinite(img).all():
        raise ValueError("image has non finite values")
    return MaskSet(gen(img.unsqueeze(0))[0])


class Triplet(NamedTuple):
    foreground: torch.Tensor
    background: torch.Tensor
    text: str


def compose_triplet(
    img: Union[torch.Tensor, LabeledImage],
    masks: MaskSet,
    k: int,
    catalog: ClassCatalog,
    labels: Optional[Sequence[int]] = None,
) -> Triplet:
    """Splits `img` with the mask of class `k` into its foreground
    `M_k·X` and background `(1 - M_k)·X` plus the class text `t_k`.

    `labels` is taken from `img` when a `LabeledImage` is given.
    """
    if isinstance(img, LabeledImage):
        labels = img.labels if labels is None else labels
        img = img.tensor(masks.values.dtype)
    if labels is None:
        raise ValueError("labels are needed for composing a triplet")
    if not 0 <= k < masks.num_classes or k >= len(catalog):
        raise IndexError(f"class index {k} out of range for {masks.num_classes} classes")
    if not labels[k]:
        raise ValueError(f"class {catalog.names[k]!r} is not present in the image")
    if img.shape[-2:] != masks.values.shape[-2:]:
        raise ValueError(f"Mask size {tuple(masks.values.shape[-2:])} does not match image {tuple(img.shape[-2:])}")

    mask = masks.channel(k).unsqueeze(0)
    return Triplet(mask * img, (1 - mask) * img, catalog.text(k))


def compose_pairs(
    images: torch.Tensor, masks: torch.Tensor, sample_index: torch.Tensor, class_index: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Batched `compose_triplet` images: one foreground and background per
    `(sample, class)` pair, `N×3×H×W` each."""
    mask = masks[sample_index, class_index].unsqueeze(1)
    selected = images[sample_index]
    return mask * selected, (1 - mask) * selected


def save_generator(
    path: Union[str, Path],
    gen: MaskGenerator,
    *,
    catalog: Optional[ClassCatalog] = None,
    config: Optional[RunConfig] = None,
) -> Path:
    manifest = {
        "num_classes": gen.num_classes,
        "widths": list(gen.widths),
        "prior_logit": float(gen.prior_logit),
        "catalog": catalog.fingerprint() if catalog is not None else None,
        "config": config.to_lines() if config is not None else None,
    }
    return write_archive(path, GENERATOR_ARCHIVE_KIND, manifest, gen.state_dict())


def load_generator(path: Union[str, Path], catalog: Optional[ClassCatalog] = None) -> MaskGenerator:
    manifest, state_dict = read_archive(path, GENERATOR_ARCHIVE_KIND)
    if catalog is not None and manifest.get("catalog") not in (None, catalog.fingerprint()):
        raise ArchiveFormatError(f"{path} was trained with a different class catalog")

    gen = MaskGenerator(manifest["num_classes"], manifest["widths"], manifest["prior_logit"])
    try:
        gen.load_state_dict(state_dict)
    except RuntimeError as exc:
        raise ArchiveFormatError(f"{path} parameters do not fit the declared architecture: {exc}") from exc
    logger.debug(f"{gen} loaded from {path}")
    return gen
