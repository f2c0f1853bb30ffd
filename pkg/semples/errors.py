# MIT License
# Copyright (c) 2024 The semples authors

from typing import Optional


class SemplesError(Exception):
    """Base exception for every error raised on purpose by semples."""


class ConfigError(SemplesError):
    """Raised when a run configuration can not be built: unknown preset,
    unknown key, a value that can not be parsed or a value out of its
    allowed range.
    """


class DataError(SemplesError):
    """General exception for problems with the data or the artifacts
    a command consumes.
    """


class CorpusError(DataError):
    """The corpus on disk does not honor the expected layout, for example
    an image listed in `labels.tsv` is missing, a label row names a class
    that is not part of the catalog or a row has no labels at all.
    """


class MissingArtifactError(DataError):
    """A checkpoint or file produced by a previous step is not there,
    typically when the training phases are run out of order.
    """


class ArchiveFormatError(DataError):
    """An archive or container exists but can not be used: wrong kind,
    unsupported format version, bad magic or a catalog that does not
    match the one it was trained with.
    """


class NumericAbort(SemplesError):
    """Training produced a non finite loss and was aborted.

    `phase` and `step` identify where it happened.
    """

    def __init__(self, message: str, phase: Optional[str] = None, step: Optional[int] = None) -> None:
        super().__init__(message)
        self.phase = phase
        self.step = step
