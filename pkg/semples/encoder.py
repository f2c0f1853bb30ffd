# MIT License
# Copyright (c) 2024 The semples authors

import logging
import re
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import mmh3
import torch
import torch.nn.functional as F
from torch import nn

from ._catalog import ClassCatalog
from .base import DualEncoder
from .default_values import (
    DEFAULT_CLIP_MODEL,
    DEFAULT_TOY_CONCEPT_SCALE,
    DEFAULT_TOY_EMBED_DIM,
    DEFAULT_TOY_ENCODER_SEED,
    DEFAULT_TOY_FILLER_SCALE,
    DEFAULT_TOY_NULL_SCALE,
    DEFAULT_TOY_PATCH_SIZE,
)
from .errors import ConfigError

logger = logging.getLogger(__name__)

# Concepts are mixes of the red, green and blue channel directions. The
# `train` concept leaks toward `rails`, the texture it co-occurs with.
TOY_VOCABULARY: Mapping[str, Tuple[float, float, float]] = {
    "train": (1.0, 0.0, 0.45),
    "bird": (0.0, 1.0, 0.0),
    "rails": (0.0, 0.0, 1.0),
}

_POOL_GRID = 4
_WORD = re.compile(r"[a-z0-9]+")


class ToyDualEncoder(nn.Module, DualEncoder):
    """Deterministic dual encoder with a constructed geometry.

    An image is average pooled to a 4×4 grid per channel and linearly
    projected, each channel onto its own axis of an orthonormal basis;
    a small constant `null_axis` term is added before normalizing, so an
    all zero image embeds to `null_axis`. The term is kept well below the
    channel means of a masked object, so the direction of a masked image
    depends on its color mix and not on how much of it the mask keeps.

    A token sequence is averaged, rotated by a fixed orthogonal matrix and
    gets the same `null_axis` term. Vocabulary words are placed so that
    after the rotation they point at the channel mix of their concept,
    any other word hashes to a small seeded random vector.
    """

    channel_axes: torch.Tensor
    null_axis: torch.Tensor
    image_projection: torch.Tensor
    token_rotation: torch.Tensor

    def __init__(
        self,
        embed_dim: int = DEFAULT_TOY_EMBED_DIM,
        patch_size: int = DEFAULT_TOY_PATCH_SIZE,
        seed: int = DEFAULT_TOY_ENCODER_SEED,
        vocabulary: Optional[Mapping[str, Sequence[float]]] = None,
        null_scale: float = DEFAULT_TOY_NULL_SCALE,
        concept_scale: float = DEFAULT_TOY_CONCEPT_SCALE,
        filler_scale: float = DEFAULT_TOY_FILLER_SCALE,
    ) -> None:
        super().__init__()
        if embed_dim < 4:
            raise ValueError(f"embed_dim must be at least 4, got {embed_dim}")
        if patch_size % _POOL_GRID != 0:
            raise ValueError(f"patch_size must be a multiple of {_POOL_GRID}, got {patch_size}")

        self._embed_dim = embed_dim
        self._patch_size = patch_size
        self._seed = seed
        self._null_scale = null_scale
        self._concept_scale = concept_scale
        self._filler_scale = filler_scale
        self._vocabulary = dict(TOY_VOCABULARY if vocabulary is None else vocabulary)
        self._filler_cache: Dict[str, torch.Tensor] = {}

        generator = torch.Generator().manual_seed(seed)
        basis, _ = torch.linalg.qr(torch.randn(embed_dim, embed_dim, generator=generator, dtype=torch.float64))
        rotation, _ = torch.linalg.qr(torch.randn(embed_dim, embed_dim, generator=generator, dtype=torch.float64))

        channel_axes = basis[:, :3].T.contiguous()
        cells = _POOL_GRID * _POOL_GRID
        # pooled features are laid out channel major, 16 cells per channel
        projection = channel_axes.repeat_interleave(cells, dim=0) / cells

        self.register_buffer("channel_axes", channel_axes.float())
        self.register_buffer("null_axis", basis[:, 3].float().contiguous())
        self.register_buffer("image_projection", projection.float())
        self.register_buffer("token_rotation", rotation.float())
        self.requires_grad_(False)
        logger.debug(f"{self} created")

    def __str__(self) -> str:
        return f"<ToyDualEncoder dim={self._embed_dim} patch={self._patch_size} seed={self._seed}>"

    __repr__ = __str__

    @property
    def embed_dim(self) -> int:
        return self._embed_dim

    @property
    def token_dim(self) -> int:
        return self._embed_dim

    @property
    def patch_size(self) -> int:
        return self._patch_size

    def _finish(self, raw: torch.Tensor) -> torch.Tensor:
        return F.normalize(raw + self._null_scale * self.null_axis.to(raw.dtype), dim=-1)

    def image_fn(self, images: torch.Tensor) -> torch.Tensor:
        single = images.dim() == 3
        batch = images.unsqueeze(0) if single else images
        pooled = F.adaptive_avg_pool2d(batch, _POOL_GRID).flatten(1)
        out = self._finish(pooled @ self.image_projection.to(batch.dtype))
        return out[0] if single else out

    def token_fn(self, tokens: torch.Tensor) -> torch.Tensor:
        return self._finish(tokens.mean(dim=-2) @ self.token_rotation.to(tokens.dtype))

    def _filler(self, word: str) -> torch.Tensor:
        if word not in self._filler_cache:
            generator = torch.Generator().manual_seed(mmh3.hash(word, self._seed, signed=False))
            vector = torch.randn(self._embed_dim, generator=generator)
            self._filler_cache[word] = self._filler_scale * F.normalize(vector, dim=0)
        return self._filler_cache[word]

    def word_embedding(self, word: str) -> torch.Tensor:
        """Token embedding of a single lowercase word."""
        if word in self._vocabulary:
            mix = torch.tensor(self._vocabulary[word], dtype=torch.float32)
            return self._concept_scale * (mix @ self.channel_axes) @ self.token_rotation.T
        return self._filler(word)

    def tokenize_fn(self, text: str) -> torch.Tensor:
        words = _WORD.findall(text.lower())
        if not words:
            raise ValueError(f"Text {text!r} has no tokens")
        return torch.stack([self.word_embedding(word) for word in words])

    def patch_fn(self, image: torch.Tensor) -> torch.Tensor:
        p = self._patch_size
        patches = image.unfold(1, p, p).unfold(2, p, p)
        patches = patches.permute(1, 2, 0, 3, 4).reshape(-1, image.shape[0], p, p)
        return self.image_fn(patches)

    def state_tensors(self) -> Dict[str, torch.Tensor]:
        return {name: buffer for name, buffer in self.named_buffers()}


def create_encoder(
    kind: str = "toy",
    *,
    checkpoint: Optional[str] = None,
    seed: int = DEFAULT_TOY_ENCODER_SEED,
    model_name: str = DEFAULT_CLIP_MODEL,
) -> DualEncoder:
    """Factory for the dual encoder backends.

    `toy` builds the deterministic `ToyDualEncoder` from `seed`, no
    checkpoint is involved.

    `clip` loads a pretrained open_clip model, `model_name` selects the
    architecture, ViT-B-32 by default, and `checkpoint` is either a path to
    the weights file or an open_clip pretrained tag. Needs the `clip` extra.
    """
    if kind == "toy":
        return ToyDualEncoder(seed=seed)
    if kind == "clip":
        from .clip_adapter import ClipDualEncoder

        return ClipDualEncoder.from_checkpoint(checkpoint, model_name=model_name)
    raise ConfigError(f"Unknown encoder {kind!r}, valid encoders are: toy, clip")


def _check_finite(tensor: torch.Tensor, what: str) -> None:
    if not torch.isfinite(tensor).all():
        raise ValueError(f"{what} has non finite values")


def encode_image(enc: DualEncoder, img: torch.Tensor) -> torch.Tensor:
    """`v = E_I(img)` for a `3×H×W` image or a `B×3×H×W` batch."""
    if img.dim() not in (3, 4) or img.shape[-3] != 3:
        raise ValueError(f"Expected a 3×H×W image or a B×3×H×W batch, got shape {tuple(img.shape)}")
    _check_finite(img, "image")
    return enc.image_fn(img)


def encode_text(enc: DualEncoder, tokens: torch.Tensor) -> torch.Tensor:
    """`u = E_T(tokens)` for an `L×token_dim` sequence or a batch of them."""
    if tokens.dim() < 2 or tokens.shape[-2] == 0:
        raise ValueError("Token sequence can not be empty")
    if tokens.shape[-1] != enc.token_dim:
        raise ValueError(f"Token width {tokens.shape[-1]} does not match the encoder width {enc.token_dim}")
    _check_finite(tokens, "token sequence")
    return enc.token_fn(tokens)


def encode_patches(enc: DualEncoder, img: torch.Tensor) -> torch.Tensor:
    """One embedding per patch of a `3×H×W` image, row major."""
    if img.dim() != 3 or img.shape[0] != 3:
        raise ValueError(f"Expected a 3×H×W image, got shape {tuple(img.shape)}")
    height, width = img.shape[1:]
    size = enc.patch_size
    if height % size or width % size:
        raise ValueError(f"Image size {height}x{width} must be a multiple of the patch size {size}")
    _check_finite(img, "image")
    return enc.patch_fn(img)


@torch.no_grad()
def encode_texts(enc: DualEncoder, texts: Sequence[str]) -> torch.Tensor:
    """Embeds plain texts, `len(texts)×D`, outside of any graph."""
    return torch.stack([encode_text(enc, enc.tokenize_fn(text)) for text in texts])


class TextEmbeddingCache:
    """Class text embeddings `u_f` of a catalog.

    The encoder never changes, so every `t_k` is encoded once at
    construction and shared by all the steps of every phase.
    """

    _catalog: ClassCatalog
    _embeddings: torch.Tensor

    def __init__(self, enc: DualEncoder, catalog: ClassCatalog) -> None:
        self._catalog = catalog
        self._embeddings = encode_texts(enc, [catalog.text(k) for k in range(len(catalog))])
        logger.debug(f"{len(catalog)} class texts encoded")

    @property
    def embeddings(self) -> torch.Tensor:
        return self._embeddings

    def __getitem__(self, k: int) -> torch.Tensor:
        return self._embeddings[k]

    def texts(self) -> List[str]:
        return [self._catalog.text(k) for k in range(len(self._catalog))]
