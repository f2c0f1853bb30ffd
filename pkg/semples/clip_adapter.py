# MIT License
# Copyright (c) 2024 The semples authors

"""open_clip backed dual encoder.

Images are resized to the model input resolution and normalized with the
model statistics inside the adapter, so the rest of semples keeps working
in raw [0, 1] image space. Token sequences given to `token_fn` are wrapped
with the start and end tokens and padded to the context length before
running the text transformer; the text feature is read at the end token.

The patch token grid is fixed by the input resolution, `patch_fn`
resamples it to one token per patch of the image it was given.
"""
import logging
from typing import Dict, Optional

import torch
import torch.nn.functional as F
from torch import nn

from .base import DualEncoder
from .default_values import DEFAULT_CLIP_MODEL, DEFAULT_CLIP_PATCH_SIZE
from .errors import ConfigError, MissingArtifactError

try:
    import open_clip
except ImportError:  # pragma: no cover
    open_clip = None

logger = logging.getLogger(__name__)

_INPUT_SIZE = 224


def resize_token_grid(tokens: torch.Tensor, rows: int, cols: int) -> torch.Tensor:
    """Bilinearly resamples the `N×D` patch tokens of a square grid, row
    major, to a `rows×cols` grid, returned as `rows*cols×D`."""
    side = int(round(tokens.shape[0] ** 0.5))
    if side * side != tokens.shape[0]:
        raise ValueError(f"{tokens.shape[0]} patch tokens do not form a square grid")
    if (rows, cols) == (side, side):
        return tokens
    grid = tokens.T.reshape(1, -1, side, side)
    grid = F.interpolate(grid, size=(rows, cols), mode="bilinear", align_corners=False)
    return grid[0].reshape(tokens.shape[1], -1).T


class ClipDualEncoder(nn.Module, DualEncoder):

    _model: nn.Module
    _tokenizer: object
    _patch_size: int

    def __init__(self, model: nn.Module, tokenizer, patch_size: int = DEFAULT_CLIP_PATCH_SIZE) -> None:
        super().__init__()
        self._model = model.eval()
        self._tokenizer = tokenizer
        self._patch_size = patch_size
        self.requires_grad_(False)

        visual = model.visual
        mean = getattr(visual, "image_mean", None) or open_clip.OPENAI_DATASET_MEAN
        std = getattr(visual, "image_std", None) or open_clip.OPENAI_DATASET_STD
        self.register_buffer("pixel_mean", torch.tensor(mean).view(3, 1, 1), persistent=False)
        self.register_buffer("pixel_std", torch.tensor(std).view(3, 1, 1), persistent=False)
        logger.debug(f"{self} created")

    @classmethod
    def from_checkpoint(cls, checkpoint: Optional[str], model_name: str = DEFAULT_CLIP_MODEL) -> "ClipDualEncoder":
        if open_clip is None:
            raise ConfigError("The clip encoder needs open_clip, install semples with the `clip` extra")
        if checkpoint is None:
            raise MissingArtifactError("The clip encoder needs --encoder-checkpoint")
        try:
            model, _, _ = open_clip.create_model_and_transforms(model_name, pretrained=checkpoint)
        except RuntimeError as exc:
            raise MissingArtifactError(f"Can not load {model_name} weights from {checkpoint}: {exc}") from exc
        tokenizer = open_clip.get_tokenizer(model_name)
        patch_size = model.visual.patch_size
        patch_size = patch_size[0] if isinstance(patch_size, tuple) else patch_size
        return cls(model, tokenizer, patch_size)

    def __str__(self) -> str:
        return f"<ClipDualEncoder dim={self.embed_dim} patch={self._patch_size}>"

    __repr__ = __str__

    @property
    def embed_dim(self) -> int:
        return self._model.text_projection.shape[1]

    @property
    def token_dim(self) -> int:
        return self._model.token_embedding.weight.shape[1]

    @property
    def patch_size(self) -> int:
        return self._patch_size

    def _prepare(self, images: torch.Tensor) -> torch.Tensor:
        batch = images.unsqueeze(0) if images.dim() == 3 else images
        batch = F.interpolate(batch, size=(_INPUT_SIZE, _INPUT_SIZE), mode="bilinear", align_corners=False)
        return (batch - self.pixel_mean.to(batch.dtype)) / self.pixel_std.to(batch.dtype)

    def image_fn(self, images: torch.Tensor) -> torch.Tensor:
        features = self._model.encode_image(self._prepare(images))
        out = F.normalize(features, dim=-1)
        return out[0] if images.dim() == 3 else out

    def _special(self, token_id: int) -> torch.Tensor:
        return self._model.token_embedding.weight[token_id]

    def tokenize_fn(self, text: str) -> torch.Tensor:
        ids = self._tokenizer([text])[0]
        eot = int(ids.argmax())
        # drop the start and end tokens, token_fn adds them back
        return self._model.token_embedding(ids[1:eot]).detach()

    def token_fn(self, tokens: torch.Tensor) -> torch.Tensor:
        single = tokens.dim() == 2
        batch = tokens.unsqueeze(0) if single else tokens
        context = self._model.positional_embedding.shape[0]
        length = batch.shape[1]
        if length + 2 > context:
            raise ValueError(f"Token sequence of length {length} does not fit a context of {context}")

        ids = self._tokenizer([""])[0]
        sos = self._special(int(ids[0])).to(batch.dtype)
        eos = self._special(int(ids.argmax())).to(batch.dtype)
        pad = torch.zeros(context - length - 2, batch.shape[2], dtype=batch.dtype)
        size = batch.shape[0]
        x = torch.cat(
            [sos.expand(size, 1, -1), batch, eos.expand(size, 1, -1), pad.expand(size, -1, -1)],
            dim=1,
        )
        x = x + self._model.positional_embedding.to(x.dtype)
        transformer = self._model.transformer
        if getattr(transformer, "batch_first", False):
            x = transformer(x, attn_mask=self._model.attn_mask)
        else:
            x = transformer(x.permute(1, 0, 2), attn_mask=self._model.attn_mask).permute(1, 0, 2)
        x = self._model.ln_final(x)
        features = x[:, length + 1] @ self._model.text_projection.to(x.dtype)
        out = F.normalize(features, dim=-1)
        return out[0] if single else out

    def patch_fn(self, image: torch.Tensor) -> torch.Tensor:
        visual = self._model.visual
        visual.output_tokens = True
        try:
            _, tokens = visual(self._prepare(image))
        finally:
            visual.output_tokens = False
        rows, cols = image.shape[-2] // self._patch_size, image.shape[-1] // self._patch_size
        return F.normalize(resize_token_grid(tokens[0] @ visual.proj, rows, cols), dim=-1)

    def state_tensors(self) -> Dict[str, torch.Tensor]:
        return dict(self._model.state_dict())
