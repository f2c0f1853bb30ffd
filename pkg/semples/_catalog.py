# MIT License
# Copyright (c) 2024 The semples authors

import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Tuple, Union

import mmh3
import numpy as np
import torch

from .default_values import DEFAULT_TEMPLATE


def _placeholders(template: str) -> int:
    return sum(1 for _, name, _, _ in string.Formatter().parse(template) if name is not None)


@dataclass(frozen=True)
class ClassCatalog:
    """Ordered class names plus the template used for building the
    class text `t_k`."""

    names: Tuple[str, ...]
    template: str = DEFAULT_TEMPLATE

    def __post_init__(self) -> None:
        object.__setattr__(self, "names", tuple(self.names))
        if not self.names:
            raise ValueError("A catalog needs at least one class name")
        if any(not name or not name.strip() for name in self.names):
            raise ValueError("Class names can not be empty")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"Class names must be unique, got {self.names}")
        if _placeholders(self.template) != 1:
            raise ValueError(f"Template must contain exactly one placeholder, got {self.template!r}")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None

    def text(self, k: int) -> str:
        """Returns `t_k`, the template filled with the k-th class name."""
        if not 0 <= k < len(self.names):
            raise IndexError(f"class index {k} out of range for {len(self.names)} classes")
        return self.template.format(self.names[k])

    def fingerprint(self) -> str:
        payload = "\n".join(self.names + (self.template,)).encode("utf-8")
        return mmh3.hash_bytes(payload).hex()

    @classmethod
    def from_file(cls, path: Union[str, Path], template: str = DEFAULT_TEMPLATE) -> "ClassCatalog":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line.strip() for line in lines if line.strip()), template)

    def to_file(self, path: Union[str, Path]) -> None:
        Path(path).write_text("".join(f"{name}\n" for name in self.names), encoding="utf-8")


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class LabeledImage:
    """An RGB image stored as H×W×3 reals in [0, 1] plus its multi-hot
    label vector. Arrays are copied and marked read only."""

    id: str
    pixels: np.ndarray
    labels: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels, dtype=np.float32)
        labels = np.asarray(self.labels)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ValueError(f"{self.id}: pixels must be H×W×3, got {pixels.shape}")
        if not np.all(np.isfinite(pixels)) or pixels.min() < 0.0 or pixels.max() > 1.0:
            raise ValueError(f"{self.id}: pixels must be finite and within [0, 1]")
        if labels.ndim != 1 or not np.all((labels == 0) | (labels == 1)):
            raise ValueError(f"{self.id}: labels must be a binary vector")
        object.__setattr__(self, "pixels", _readonly(pixels))
        object.__setattr__(self, "labels", _readonly(labels.astype(np.uint8)))

    def __repr__(self) -> str:
        height, width, _ = self.pixels.shape
        return f"<LabeledImage id={self.id} size={height}x{width} present={self.present_classes()}>"

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def present_classes(self) -> Tuple[int, ...]:
        return tuple(int(k) for k in np.flatnonzero(self.labels))

    def tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Channels first copy of the pixels, 3×H×W."""
        return torch.from_numpy(np.ascontiguousarray(self.pixels.transpose(2, 0, 1))).to(dtype)


def multi_hot(present: Sequence[int], num_classes: int) -> np.ndarray:
    labels = np.zeros(num_classes, dtype=np.uint8)
    labels[list(present)] = 1
    return labels
