# MIT License
# Copyright (c) 2024 The semples authors

from abc import ABCMeta, abstractmethod
from typing import Dict

import torch


class DualEncoder(metaclass=ABCMeta):
    """Frozen image and text towers sharing one embedding space.

    Images are channels first reals in [0, 1], either a single `3×H×W`
    image or a `B×3×H×W` batch; any normalization the backend needs is
    applied internally. Outputs always have unit norm.
    """

    @property
    @abstractmethod
    def embed_dim(self) -> int:
        """Width `D` of the shared embedding space."""

    @property
    @abstractmethod
    def token_dim(self) -> int:
        """Width of a single token embedding, the last dimension of the
        sequences `token_fn` consumes and `tokenize_fn` produces."""

    @property
    @abstractmethod
    def patch_size(self) -> int:
        """Side in pixels of the square patches `patch_fn` works with."""

    @abstractmethod
    def image_fn(self, images: torch.Tensor) -> torch.Tensor:
        """Embeds a `3×H×W` image or a `B×3×H×W` batch, returning `D` or
        `B×D` unit vectors.

        Differentiable with respect to `images`.
        """

    @abstractmethod
    def token_fn(self, tokens: torch.Tensor) -> torch.Tensor:
        """Embeds an `L×token_dim` sequence or a `B×L×token_dim` batch of
        sequences of the same length, returning `D` or `B×D` unit vectors.

        Differentiable with respect to `tokens`, this is the path learnable
        prompts take.
        """

    @abstractmethod
    def tokenize_fn(self, text: str) -> torch.Tensor:
        """Turns a text into the `L×token_dim` sequence `token_fn`
        expects."""

    @abstractmethod
    def patch_fn(self, image: torch.Tensor) -> torch.Tensor:
        """Embeds every patch of a `3×H×W` image, returning `P×D` unit
        vectors in row major patch order."""

    @abstractmethod
    def state_tensors(self) -> Dict[str, torch.Tensor]:
        """Every tensor that defines the encoder, by name.

        Used for proving that no training phase touches the encoder.
        """
