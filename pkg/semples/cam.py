# MIT License
# Copyright (c) 2024 The semples authors

import asyncio
import json
import logging
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import matplotlib
import numpy as np
import torch
import torch.nn.functional as F

from ._catalog import ClassCatalog, LabeledImage
from .base import DualEncoder
from .corpus import gather_in_executor, read_png, write_png
from .default_values import CAM_FORMAT_VERSION, DEFAULT_COLORMAP, DEFAULT_IGNORE_INDEX, DEFAULT_LOADER_WORKERS
from .encoder import encode_patches, encode_text
from .errors import ArchiveFormatError, CorpusError, DataError, MissingArtifactError
from .masking import MaskGenerator, MaskSet
from .prompt_bank import PromptBank, background_embedding

logger = logging.getLogger(__name__)

BACKGROUND_NAME = "background"
CAM_SUFFIX = ".cam"
CLASS_MAP_SUFFIX = ".png"

CAM_MAGIC = b"SEMC"
_CAM_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True, eq=False)
class PseudoMask:
    """Hard per pixel labels, `H×W`, 0 is background and `k + 1` the
    class `k` of the catalog."""

    class_map: np.ndarray

    def __post_init__(self) -> None:
        class_map = np.asarray(self.class_map)
        if class_map.ndim != 2:
            raise ValueError(f"class map must be H×W, got shape {class_map.shape}")
        if class_map.size and class_map.min() < 0:
            raise ValueError("class map values can not be negative")
        class_map = class_map.astype(np.uint8)
        class_map.setflags(write=False)
        object.__setattr__(self, "class_map", class_map)

    def __repr__(self) -> str:
        height, width = self.class_map.shape
        return f"<PseudoMask size={height}x{width} labels={np.unique(self.class_map).tolist()}>"

    def one_hot(self, num_classes: int) -> np.ndarray:
        """`K×H×W` indicator of every class, background excluded."""
        return np.stack([(self.class_map == k + 1).astype(np.float32) for k in range(num_classes)])


@dataclass(frozen=True)
class IoUReport:
    """IoU of every label, background first. Labels that appear neither
    in the predictions nor in the ground truth have no IoU and do not
    count for `miou`."""

    class_names: Tuple[str, ...]
    per_class_iou: Tuple[Optional[float], ...]
    miou: float
    threshold: Optional[float] = None

    def to_json(self) -> Dict[str, Any]:
        document = {
            "per_class": dict(zip(self.class_names, self.per_class_iou)),
            "miou": self.miou,
            # CRF and affinity refinement are not applied
            "refinement": "threshold",
        }
        if self.threshold is not None:
            document["threshold"] = self.threshold
        return document


@torch.no_grad()
def extract_cams(
    gen: MaskGenerator, img: Union[torch.Tensor, LabeledImage], labels: Optional[Sequence[int]] = None
) -> MaskSet:
    """Masks of the present classes, each divided by its own maximum.

    Channels of absent classes are zero and an all zero channel stays
    zero.
    """
    if isinstance(img, LabeledImage):
        labels = img.labels if labels is None else labels
        img = img.tensor()
    if labels is None:
        raise ValueError("labels are needed for extracting CAMs")

    masks = gen(img.unsqueeze(0))[0]
    present = torch.as_tensor(np.asarray(labels), dtype=masks.dtype).view(-1, 1, 1)
    if present.shape[0] != masks.shape[0]:
        raise ValueError(f"{present.shape[0]} labels for a generator of {masks.shape[0]} classes")
    cams = masks * present
    peak = cams.flatten(1).max(dim=1).values.view(-1, 1, 1)
    cams = torch.where(peak > 0, cams / peak.clamp(min=torch.finfo(cams.dtype).tiny), torch.zeros_like(cams))
    return MaskSet(cams.clamp(0.0, 1.0))


def _cam_array(cams: Union[MaskSet, torch.Tensor, np.ndarray]) -> np.ndarray:
    if isinstance(cams, MaskSet):
        cams = cams.values
    if isinstance(cams, torch.Tensor):
        cams = cams.detach().cpu().numpy()
    return np.asarray(cams)


def cams_to_pseudo_mask(cams: Union[MaskSet, torch.Tensor, np.ndarray], bg_threshold: float) -> PseudoMask:
    """Pixel label is `argmax_k cams[k] + 1` when the maximum reaches
    `bg_threshold` and background otherwise. Ties go to the lowest class
    index."""
    if not 0.0 <= bg_threshold <= 1.0:
        raise ValueError(f"bg_threshold must be within [0, 1], got {bg_threshold}")
    values = _cam_array(cams)
    if values.shape[0] == 0:
        return PseudoMask(np.zeros(values.shape[1:], dtype=np.uint8))
    best = values.argmax(axis=0)
    peak = values.max(axis=0)
    return PseudoMask(np.where(peak >= bg_threshold, best + 1, 0))


class ConfusionMatrix:
    """Pixel counts of (truth, prediction) pairs accumulated over a whole
    evaluation set. Truth pixels equal to `ignore_index` are not counted."""

    _num_labels: int
    _ignore_index: int
    _counts: np.ndarray

    def __init__(self, num_labels: int, ignore_index: int = DEFAULT_IGNORE_INDEX) -> None:
        self._num_labels = num_labels
        self._ignore_index = ignore_index
        self._counts = np.zeros((num_labels, num_labels), dtype=np.int64)

    @property
    def counts(self) -> np.ndarray:
        return self._counts.copy()

    def add(self, pred: np.ndarray, truth: np.ndarray) -> None:
        pred = np.asarray(pred, dtype=np.int64).ravel()
        truth = np.asarray(truth, dtype=np.int64).ravel()
        keep = truth != self._ignore_index
        pred, truth = pred[keep], truth[keep]
        if pred.size and (max(pred.max(), truth.max()) >= self._num_labels or min(pred.min(), truth.min()) < 0):
            raise DataError(f"label out of range for {self._num_labels} labels")
        index = truth * self._num_labels + pred
        self._counts += np.bincount(index, minlength=self._num_labels**2).reshape(self._num_labels, self._num_labels)

    def _ratios(self) -> List[Optional[Fraction]]:
        intersection = np.diag(self._counts)
        union = self._counts.sum(axis=0) + self._counts.sum(axis=1) - intersection
        return [None if u == 0 else Fraction(int(i), int(u)) for i, u in zip(intersection, union)]

    def iou(self) -> List[Optional[float]]:
        return [None if ratio is None else float(ratio) for ratio in self._ratios()]

    def report(self, class_names: Sequence[str], threshold: Optional[float] = None) -> IoUReport:
        ratios = self._ratios()
        defined = [ratio for ratio in ratios if ratio is not None]
        # exact until the final rounding
        miou = float(sum(defined) / len(defined)) if defined else 0.0
        per_class = tuple(None if ratio is None else float(ratio) for ratio in ratios)
        return IoUReport(tuple(class_names), per_class, miou, threshold)


def label_names(catalog: Optional[ClassCatalog], num_labels: int) -> Tuple[str, ...]:
    if catalog is not None:
        return (BACKGROUND_NAME,) + catalog.names
    return (BACKGROUND_NAME,) + tuple(f"class_{k}" for k in range(num_labels - 1))


def compute_miou(
    preds: Sequence[Union[PseudoMask, np.ndarray]],
    truths: Sequence[np.ndarray],
    *,
    catalog: Optional[ClassCatalog] = None,
    ids: Optional[Sequence[str]] = None,
    ignore_index: int = DEFAULT_IGNORE_INDEX,
    threshold: Optional[float] = None,
) -> IoUReport:
    """Dataset level IoU: intersections and unions are summed over every
    sample before dividing.

    Without a catalog the number of labels is taken from the largest
    label found.
    """
    if len(preds) != len(truths):
        raise DataError(f"{len(preds)} predictions for {len(truths)} ground truth maps")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(preds))]
    pred_maps = [pred.class_map if isinstance(pred, PseudoMask) else np.asarray(pred) for pred in preds]
    truth_maps = [np.asarray(truth) for truth in truths]

    if catalog is not None:
        num_labels = len(catalog) + 1
    else:
        largest = [int(m[m != ignore_index].max()) for m in pred_maps + truth_maps if (m != ignore_index).any()]
        num_labels = max(largest, default=0) + 1

    matrix = ConfusionMatrix(num_labels, ignore_index)
    for sample_id, pred, truth in zip(ids, pred_maps, truth_maps):
        if pred.shape != truth.shape:
            raise DataError(f"sample {sample_id}: prediction {pred.shape} and ground truth {truth.shape} differ")
        matrix.add(pred, truth)
    return matrix.report(label_names(catalog, num_labels), threshold)


def sweep_thresholds(
    cams: Sequence[Union[MaskSet, np.ndarray]],
    truths: Sequence[np.ndarray],
    thresholds: Sequence[float],
    **kwargs,
) -> List[IoUReport]:
    """One `IoUReport` per background threshold."""
    return [
        compute_miou([cams_to_pseudo_mask(cam, threshold) for cam in cams], truths, threshold=threshold, **kwargs)
        for threshold in thresholds
    ]


def write_cam_file(path: Union[str, Path], cams: Union[MaskSet, torch.Tensor, np.ndarray]) -> Path:
    values = np.ascontiguousarray(_cam_array(cams), dtype="<f4")
    num_classes, height, width = values.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fd:
        fd.write(_CAM_HEADER.pack(CAM_MAGIC, CAM_FORMAT_VERSION, num_classes, height, width))
        fd.write(values.tobytes(order="C"))
    return path


def read_cam_file(path: Union[str, Path]) -> np.ndarray:
    """Reads a CAM container, returning a `K×H×W` float32 array."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise MissingArtifactError(f"CAM file not found: {path}") from None
    if len(data) < _CAM_HEADER.size:
        raise ArchiveFormatError(f"{path} is too short for a CAM file")
    magic, version, num_classes, height, width = _CAM_HEADER.unpack_from(data)
    if magic != CAM_MAGIC:
        raise ArchiveFormatError(f"{path} is not a CAM file, bad magic {magic!r}")
    if version != CAM_FORMAT_VERSION:
        raise ArchiveFormatError(f"{path} has CAM format version {version}, supported is {CAM_FORMAT_VERSION}")
    expected = num_classes * height * width * 4
    if len(data) - _CAM_HEADER.size != expected:
        raise ArchiveFormatError(f"{path} payload has {len(data) - _CAM_HEADER.size} bytes, expected {expected}")
    values = np.frombuffer(data, dtype="<f4", offset=_CAM_HEADER.size)
    return values.reshape(num_classes, height, width).astype(np.float32)


def write_class_map(path: Union[str, Path], mask: Union[PseudoMask, np.ndarray]) -> Path:
    class_map = mask.class_map if isinstance(mask, PseudoMask) else np.asarray(mask)
    path = Path(path)
    write_png(path, np.ascontiguousarray(class_map, dtype=np.uint8))
    return path


def read_class_map(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"class map not found: {path}")
    return read_png(path, mode="L")


def export_cams(
    gen: MaskGenerator, corpus: Sequence[LabeledImage], out_dir: Union[str, Path], bg_threshold: float
) -> List[Path]:
    """Writes `<id>.cam` and the `<id>.png` pseudo mask of every sample."""
    out_dir = Path(out_dir)
    written = []
    for sample in corpus:
        cams = extract_cams(gen, sample)
        written.append(write_cam_file(out_dir / f"{sample.id}{CAM_SUFFIX}", cams))
        write_class_map(out_dir / f"{sample.id}{CLASS_MAP_SUFFIX}", cams_to_pseudo_mask(cams, bg_threshold))
    logger.info(f"CAMs of {len(written)} samples written to {out_dir}")
    return written


async def read_evaluation_set(
    cams_dir: Union[str, Path], truth_dir: Union[str, Path], workers: int = DEFAULT_LOADER_WORKERS
) -> Tuple[List[str], List[np.ndarray], List[np.ndarray]]:
    """Reads every `<id>.cam` of `cams_dir` with its `<id>.png` ground
    truth from `truth_dir`, ordered by id."""
    cams_dir, truth_dir = Path(cams_dir), Path(truth_dir)
    if not cams_dir.is_dir():
        raise MissingArtifactError(f"CAM directory not found: {cams_dir}")
    if not truth_dir.is_dir():
        raise MissingArtifactError(f"ground truth directory not found: {truth_dir}")

    ids = sorted(path.stem for path in cams_dir.glob(f"*{CAM_SUFFIX}"))
    if not ids:
        raise CorpusError(f"no {CAM_SUFFIX} files in {cams_dir}")
    cams, truths = await asyncio.gather(
        gather_in_executor(read_cam_file, [cams_dir / f"{i}{CAM_SUFFIX}" for i in ids], workers),
        gather_in_executor(read_class_map, [truth_dir / f"{i}{CLASS_MAP_SUFFIX}" for i in ids], workers),
    )
    return ids, cams, truths


def normalize_heatmap(values: np.ndarray) -> np.ndarray:
    """Min-max normalization to [0, 1]; a constant input maps to 0.5."""
    values = np.asarray(values, dtype=np.float64)
    low, high = values.min(), values.max()
    if high - low <= np.finfo(np.float32).eps:
        return np.full_like(values, 0.5)
    return (values - low) / (high - low)


def similarity_heatmap(encoder: DualEncoder, img: torch.Tensor, target: torch.Tensor) -> Tuple[np.ndarray, np.ndarray]:
    """Cosine of every patch embedding of `img` with `target`.

    Returns the raw `rows×cols` similarity grid and the normalized heatmap
    upsampled to the image size.
    """
    height, width = img.shape[-2:]
    patches = encode_patches(encoder, img)
    rows, cols = height // encoder.patch_size, width // encoder.patch_size
    grid = (patches @ target.to(patches.dtype)).reshape(rows, cols)
    normalized = torch.from_numpy(normalize_heatmap(grid.detach().cpu().numpy()))
    heatmap = F.interpolate(normalized[None, None], size=(height, width), mode="bilinear", align_corners=False)
    return grid.detach().cpu().numpy().astype(np.float32), heatmap[0, 0].numpy().clip(0.0, 1.0)


def write_heatmap(
    out_path: Union[str, Path], heatmap: np.ndarray, raw: np.ndarray, colormap: str = DEFAULT_COLORMAP
) -> Path:
    """Writes the heatmap as an RGB PNG plus the raw similarities as a
    `.npy` sidecar next to it."""
    out_path = Path(out_path)
    colors = matplotlib.colormaps[colormap](heatmap, bytes=True)[..., :3]
    try:
        write_png(out_path, np.ascontiguousarray(colors))
        np.save(out_path.with_suffix(".npy"), raw, allow_pickle=False)
    except OSError as exc:
        raise DataError(f"Can not write heatmap {out_path}: {exc}") from exc
    logger.debug(f"heatmap written to {out_path}")
    return out_path


def _as_image(img: Union[torch.Tensor, LabeledImage]) -> torch.Tensor:
    return img.tensor() if isinstance(img, LabeledImage) else img


@torch.no_grad()
def visualize_prompt_regions(
    bank: PromptBank,
    encoder: DualEncoder,
    img: Union[torch.Tensor, LabeledImage],
    k: int,
    out_path: Union[str, Path],
    colormap: str = DEFAULT_COLORMAP,
) -> Path:
    """Heatmap of how much every patch of `img` looks like the learned
    background prompt of class `k`."""
    raw, heatmap = similarity_heatmap(encoder, _as_image(img), background_embedding(bank, k, encoder))
    return write_heatmap(out_path, heatmap, raw, colormap)


@torch.no_grad()
def visualize_text_regions(
    encoder: DualEncoder,
    img: Union[torch.Tensor, LabeledImage],
    text: str,
    out_path: Union[str, Path],
    colormap: str = DEFAULT_COLORMAP,
) -> Path:
    """Same heatmap as `visualize_prompt_regions` for a hand written text,
    such as a manually chosen background description."""
    target = encode_text(encoder, encoder.tokenize_fn(text))
    raw, heatmap = similarity_heatmap(encoder, _as_image(img), target)
    return write_heatmap(out_path, heatmap, raw, colormap)


def write_report(path: Union[str, Path], reports: Sequence[IoUReport]) -> Path:
    """Writes a single report as a JSON object, a sweep as a list."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = reports[0].to_json() if len(reports) == 1 else [report.to_json() for report in reports]
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
