# MIT License
# Copyright (c) 2024 The semples authors

"""Clamped cosine similarity and the matching, prompt and refinement
losses.

Every loss takes either a single pair of `D` vectors or `N×D` stacks of
pairs. With `sample_index` (length `N`, the sample each pair comes from)
pairs are first averaged per sample and then across samples, otherwise
all pairs are averaged together.

Similarities below `eps` are replaced by `eps` and so are complements
`1 - sim` below `eps`; where the similarity equals `eps` exactly the
pass through branch is taken.
"""
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Dict, Optional, Tuple

import torch


def _check_finite(*tensors: torch.Tensor) -> None:
    for tensor in tensors:
        if not torch.isfinite(tensor.detach()).all():
            raise ValueError("loss inputs must be finite")


def clamped_cos(a: torch.Tensor, b: torch.Tensor, eps: float) -> torch.Tensor:
    """`cos(a, b)` limited to `[eps, 1]` along the last dimension."""
    norm_a = torch.linalg.vector_norm(a, dim=-1)
    norm_b = torch.linalg.vector_norm(b, dim=-1)
    if (norm_a == 0).any() or (norm_b == 0).any():
        raise ValueError("cosine similarity is undefined for a zero vector")
    cos = (a * b).sum(dim=-1) / (norm_a * norm_b)
    cos = torch.where(cos >= eps, cos, torch.full_like(cos, eps))
    return cos.clamp(max=1.0)


def _clamped_complement(sim: torch.Tensor, eps: float) -> torch.Tensor:
    complement = 1 - sim
    return torch.where(complement >= eps, complement, torch.full_like(complement, eps))


def _aggregate(values: torch.Tensor, sample_index: Optional[torch.Tensor]) -> torch.Tensor:
    if values.dim() == 0:
        return values
    if sample_index is None:
        return values.mean()
    if sample_index.shape != values.shape:
        raise ValueError(f"sample_index of shape {tuple(sample_index.shape)} does not match {tuple(values.shape)}")
    _, inverse = torch.unique(sample_index, return_inverse=True)
    counts = torch.bincount(inverse).to(values.dtype)
    sums = torch.zeros(counts.shape[0], dtype=values.dtype).index_add(0, inverse, values)
    return (sums / counts).mean()


def loss_match(
    v_f: torch.Tensor,
    v_b: torch.Tensor,
    u_f: torch.Tensor,
    lambda_b: float,
    eps: float,
    sample_index: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """`-log(sim(v_f, u_f)) - lambda_b * log(1 - sim(v_b, u_f))`."""
    _check_finite(v_f, v_b, u_f)
    loss = -torch.log(clamped_cos(v_f, u_f, eps))
    if lambda_b:
        loss = loss - lambda_b * torch.log(_clamped_complement(clamped_cos(v_b, u_f, eps), eps))
    return _aggregate(loss, sample_index)


def loss_prompt(
    u_b: torch.Tensor,
    v_b: torch.Tensor,
    u_f: torch.Tensor,
    lambda_T: float,
    eps: float,
    sample_index: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Returns `(prompt_I, prompt_T, total)`.

    `prompt_I` pulls the prompt embedding `u_b` toward the background
    image embedding `v_b`, `prompt_T` pushes it away from the class text
    `u_f`; `total = prompt_I + lambda_T * prompt_T`.
    """
    _check_finite(u_b, v_b, u_f)
    prompt_I = _aggregate(-torch.log(clamped_cos(u_b, v_b, eps)), sample_index)
    prompt_T = _aggregate(-torch.log(_clamped_complement(clamped_cos(u_b, u_f, eps), eps)), sample_index)
    total = prompt_I + lambda_T * prompt_T if lambda_T else prompt_I
    return prompt_I, prompt_T, total


def loss_refine(
    v_f: torch.Tensor,
    u_b: torch.Tensor,
    eps: float,
    sample_index: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """`-log(1 - sim(v_f, u_b))`, the foreground kept away from the
    learned background."""
    _check_finite(v_f, u_b)
    return _aggregate(-torch.log(_clamped_complement(clamped_cos(v_f, u_b, eps), eps)), sample_index)


def loss_total(match: torch.Tensor, refine: torch.Tensor, lambda_refine: float) -> torch.Tensor:
    """`match + lambda_refine * refine`."""
    if not lambda_refine:
        return match
    return match + lambda_refine * refine


@dataclass(frozen=True)
class LossReport:
    """Scalar values of a single optimizer step.

    Losses not computed in a step are reported as zero.
    """

    # matching loss of the foreground and background images
    match: float

    # prompt loss terms, the image attraction, the text repulsion
    # and its weighted sum
    prompt_I: float
    prompt_T: float
    prompt_total: float

    # refinement loss and match + lambda * refine
    refine: float
    total: float

    # (lambda_b, lambda_T, lambda) in effect for the step
    weights_used: Tuple[float, float, float]

    def __post_init__(self) -> None:
        for name in ("match", "prompt_I", "prompt_T", "prompt_total", "refine", "total"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non negative, got {value}")

    def to_record(self, step: int, phase: str) -> Dict[str, Any]:
        """JSON lines record of the step, the wall clock time is kept in
        the `time` field only."""
        lambda_b, lambda_T, lambda_refine = self.weights_used
        return {
            "step": step,
            "phase": phase,
            "match": self.match,
            "prompt_I": self.prompt_I,
            "prompt_T": self.prompt_T,
            "prompt_total": self.prompt_total,
            "refine": self.refine,
            "total": self.total,
            "weights": {"lambda_b": lambda_b, "lambda_T": lambda_T, "lambda_refine": lambda_refine},
            "time": datetime.now(timezone.utc).isoformat(),
        }
