# MIT License
# Copyright (c) 2024 The semples authors

"""Versioned archive used for every checkpoint written by semples.

An archive is a `torch.save` file holding a single dict with the keys
`format_version`, `kind`, `manifest` and `state_dict`. Tensors are stored
in name order from compact CPU copies, so saving the same state twice
gives the same bytes. Archives are read back with `weights_only` loading,
the manifest must only hold plain JSON like values.
"""
import io
import logging
import pickle
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import torch

from .default_values import ARCHIVE_FORMAT_VERSION
from .errors import ArchiveFormatError, MissingArtifactError

logger = logging.getLogger(__name__)

PAYLOAD_KEYS = frozenset({"format_version", "kind", "manifest", "state_dict"})


def write_archive(
    path: Union[str, Path], kind: str, manifest: Mapping[str, Any], state_dict: Mapping[str, torch.Tensor]
) -> Path:
    """Writes `state_dict` and `manifest` into `path` as a `kind` archive."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": ARCHIVE_FORMAT_VERSION,
        "kind": kind,
        "manifest": dict(manifest),
        "state_dict": OrderedDict(
            (name, state_dict[name].detach().cpu().contiguous().clone()) for name in sorted(state_dict)
        ),
    }
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    path.write_bytes(buffer.getvalue())

    logger.debug(f"{kind} archive written to {path}")
    return path


def read_archive(path: Union[str, Path], kind: str) -> Tuple[Dict[str, Any], Dict[str, torch.Tensor]]:
    """Reads an archive written by `write_archive`, returning the manifest
    and the tensors by name.

    Raises `MissingArtifactError` if the file is not there and
    `ArchiveFormatError` if it is not an archive of the expected kind and
    version.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"{kind} archive not found: {path}")

    try:
        payload = torch.load(io.BytesIO(path.read_bytes()), map_location="cpu", weights_only=True)
    except (RuntimeError, pickle.UnpicklingError, EOFError, ValueError, KeyError, TypeError) as exc:
        raise ArchiveFormatError(f"{path} is not a valid {kind} archive: {exc}") from exc

    if not isinstance(payload, dict) or not PAYLOAD_KEYS <= payload.keys():
        raise ArchiveFormatError(f"{path} is not a valid {kind} archive")
    if payload["kind"] != kind:
        raise ArchiveFormatError(f"{path} holds a {payload['kind']!r} archive, expected {kind!r}")
    if payload["format_version"] != ARCHIVE_FORMAT_VERSION:
        raise ArchiveFormatError(
            f"{path} has format version {payload['format_version']}, supported version is {ARCHIVE_FORMAT_VERSION}"
        )
    state_dict = payload["state_dict"]
    if not isinstance(state_dict, dict) or not all(isinstance(value, torch.Tensor) for value in state_dict.values()):
        raise ArchiveFormatError(f"{path} state is not a mapping of tensors")

    return dict(payload["manifest"]), dict(state_dict)
