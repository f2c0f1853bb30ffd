# MIT License
# Copyright (c) 2024 The semples authors

import logging
from pathlib import Path
from typing import Optional, Union

import torch
from torch import nn

from ._catalog import ClassCatalog
from .archive import read_archive, write_archive
from .base import DualEncoder
from .default_values import DEFAULT_PROMPT_INIT_STD
from .encoder import encode_text
from .errors import ArchiveFormatError

logger = logging.getLogger(__name__)

BANK_ARCHIVE_KIND = "prompt-bank"


class PromptBank(nn.Module):
    """One learnable sequence of token embeddings per class, `K×L_p×D_tok`,
    describing what the background of that class looks like.

    A bank starts trainable, `freeze` and `thaw` toggle it.
    """

    _catalog_fingerprint: str
    _seed: int
    _init_std: float

    def __init__(self, embeddings: torch.Tensor, catalog_fingerprint: str, seed: int, init_std: float) -> None:
        super().__init__()
        if embeddings.dim() != 3:
            raise ValueError(f"Prompt embeddings must be K×L_p×D_tok, got shape {tuple(embeddings.shape)}")
        if not torch.isfinite(embeddings).all():
            raise ValueError("Prompt embeddings must be finite")
        self.embeddings = nn.Parameter(embeddings.detach().clone())
        self._catalog_fingerprint = catalog_fingerprint
        self._seed = seed
        self._init_std = init_std

    def __str__(self) -> str:
        num_classes, prompt_len, token_dim = self.embeddings.shape
        return f"<PromptBank classes={num_classes} len={prompt_len} dim={token_dim} trainable={self.trainable}>"

    __repr__ = __str__

    @property
    def num_classes(self) -> int:
        return self.embeddings.shape[0]

    @property
    def prompt_len(self) -> int:
        return self.embeddings.shape[1]

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def init_std(self) -> float:
        return self._init_std

    @property
    def catalog_fingerprint(self) -> str:
        return self._catalog_fingerprint

    @property
    def trainable(self) -> bool:
        return self.embeddings.requires_grad

    def freeze(self) -> "PromptBank":
        self.embeddings.requires_grad_(False)
        return self

    def thaw(self) -> "PromptBank":
        self.embeddings.requires_grad_(True)
        return self


def init_bank(
    catalog: ClassCatalog,
    prompt_len: int,
    encoder: DualEncoder,
    seed: int,
    init_std: float = DEFAULT_PROMPT_INIT_STD,
) -> PromptBank:
    """Draws every prompt from `N(0, init_std²)` with a generator seeded by
    `seed`; the global torch random state is left alone."""
    if prompt_len < 1:
        raise ValueError(f"prompt_len must be at least 1, got {prompt_len}")
    generator = torch.Generator().manual_seed(seed)
    embeddings = torch.randn(len(catalog), prompt_len, encoder.token_dim, generator=generator) * init_std
    bank = PromptBank(embeddings, catalog.fingerprint(), seed, init_std)
    logger.debug(f"{bank} initialized with seed {seed}")
    return bank


def background_embedding(bank: PromptBank, k: int, encoder: DualEncoder) -> torch.Tensor:
    """`u_b = E_T(p_k)` for class `k`."""
    if not 0 <= k < bank.num_classes:
        raise IndexError(f"class index {k} out of range for {bank.num_classes} prompts")
    return encode_text(encoder, bank.embeddings[k])


def background_embeddings(bank: PromptBank, encoder: DualEncoder) -> torch.Tensor:
    """`u_b` for every class at once, `K×D`."""
    return encode_text(encoder, bank.embeddings)


def save_bank(path: Union[str, Path], bank: PromptBank) -> Path:
    manifest = {
        "catalog": bank.catalog_fingerprint,
        "prompt_len": bank.prompt_len,
        "seed": bank.seed,
        "init_std": bank.init_std,
    }
    return write_archive(path, BANK_ARCHIVE_KIND, manifest, {"embeddings": bank.embeddings})


def load_bank(path: Union[str, Path], catalog: Optional[ClassCatalog] = None) -> PromptBank:
    """Loads a bank saved by `save_bank`. The bank comes back frozen.

    When `catalog` is given its fingerprint must match the one the bank
    was created for.
    """
    manifest, state_dict = read_archive(path, BANK_ARCHIVE_KIND)
    if catalog is not None and manifest["catalog"] != catalog.fingerprint():
        raise ArchiveFormatError(f"{path} was built for a different class catalog")
    if "embeddings" not in state_dict:
        raise ArchiveFormatError(f"{path} has no prompt embeddings")

    embeddings = state_dict["embeddings"]
    bank = PromptBank(embeddings, manifest["catalog"], manifest["seed"], manifest["init_std"]).freeze()
    logger.debug(f"{bank} loaded from {path}")
    return bank
