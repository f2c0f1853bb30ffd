# MIT License
# Copyright (c) 2024 The semples authors

import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List, Sequence, Tuple, TypeVar, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from ._catalog import ClassCatalog, LabeledImage, multi_hot
from .default_values import DEFAULT_LOADER_WORKERS
from .errors import CorpusError

logger = logging.getLogger(__name__)

IMAGES_DIR = "images"
LABELS_FILE = "labels.tsv"
CLASSES_FILE = "classes.txt"

T = TypeVar("T")
R = TypeVar("R")


async def gather_in_executor(
    fn: Callable[[T], R], items: Sequence[T], workers: int = DEFAULT_LOADER_WORKERS
) -> List[R]:
    """Runs `fn` over `items` in a thread pool, results keep the order
    of `items`."""
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        futures = [loop.run_in_executor(executor, fn, item) for item in items]
        return await asyncio.gather(*futures)


def read_label_rows(root: Path, catalog: ClassCatalog) -> List[Tuple[str, np.ndarray]]:
    """Parses `labels.tsv`, returning `(id, multi hot labels)` sorted by id."""
    path = root / LABELS_FILE
    if not path.is_file():
        raise CorpusError(f"labels file not found: {path}")

    rows = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").split("\n"), start=1):
        if not line.strip():
            continue
        sample_id, _, names = line.partition("\t")
        sample_id = sample_id.strip()
        if sample_id in rows:
            raise CorpusError(f"{LABELS_FILE}:{lineno}: duplicated id {sample_id}")
        present = [name.strip() for name in names.split(",") if name.strip()]
        if not present:
            raise CorpusError(f"{LABELS_FILE}:{lineno}: sample {sample_id} has no labels")
        try:
            indexes = [catalog.index(name) for name in present]
        except KeyError as exc:
            raise CorpusError(f"{LABELS_FILE}:{lineno}: sample {sample_id} names unknown class {exc}") from None
        rows[sample_id] = multi_hot(indexes, len(catalog))

    return sorted(rows.items())


def read_png(path: Path, mode: str = "RGB") -> np.ndarray:
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert(mode))
    except (UnidentifiedImageError, OSError) as exc:
        raise CorpusError(f"{path} can not be decoded as an image: {exc}") from exc


def _decode(item: Tuple[Path, str, np.ndarray]) -> LabeledImage:
    path, sample_id, labels = item
    if not path.is_file():
        raise CorpusError(f"image for sample {sample_id} not found: {path}")
    try:
        pixels = read_png(path).astype(np.float32) / 255.0
    except CorpusError as exc:
        raise CorpusError(f"sample {sample_id}: {exc}") from exc
    return LabeledImage(sample_id, pixels, labels)


async def read_corpus(
    root: Union[str, Path], catalog: ClassCatalog, workers: int = DEFAULT_LOADER_WORKERS
) -> List[LabeledImage]:
    """Reads every sample listed in `root/labels.tsv`, decoding images
    concurrently. The result is ordered by id."""
    root = Path(root)
    rows = read_label_rows(root, catalog)
    items = [(root / IMAGES_DIR / f"{sample_id}.png", sample_id, labels) for sample_id, labels in rows]
    samples = await gather_in_executor(_decode, items, workers)
    logger.info(f"{len(samples)} samples loaded from {root}")
    return samples


def load_corpus(
    root: Union[str, Path], catalog: ClassCatalog, workers: int = DEFAULT_LOADER_WORKERS
) -> List[LabeledImage]:
    """Synchronous version of `read_corpus`."""
    return asyncio.run(read_corpus(root, catalog, workers))


def write_png(path: Path, array: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array).save(path, format="PNG")


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)


def write_corpus(root: Union[str, Path], samples: Sequence[LabeledImage], catalog: ClassCatalog) -> Path:
    """Writes `samples` with the layout `load_corpus` reads. Pixels are
    stored as 8 bit PNG, so they come back quantized to 1/255."""
    root = Path(root)
    (root / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    lines = []
    for sample in sorted(samples, key=lambda sample: sample.id):
        if len(sample.labels) != len(catalog):
            raise ValueError(f"{sample.id}: {len(sample.labels)} labels for a catalog of {len(catalog)} classes")
        write_png(root / IMAGES_DIR / f"{sample.id}.png", to_uint8(sample.pixels))
        names = ",".join(catalog.names[k] for k in sample.present_classes())
        lines.append(f"{sample.id}\t{names}\n")

    with open(root / LABELS_FILE, "w", encoding="utf-8", newline="\n") as fd:
        fd.writelines(lines)
    catalog.to_file(root / CLASSES_FILE)
    logger.debug(f"{len(lines)} samples written to {root}")
    return root
