# MIT License
# Copyright (c) 2024 The semples authors

from ._catalog import ClassCatalog, LabeledImage
from .base import DualEncoder
from .cam import (
    ConfusionMatrix,
    IoUReport,
    PseudoMask,
    cams_to_pseudo_mask,
    compute_miou,
    extract_cams,
    read_cam_file,
    read_class_map,
    sweep_thresholds,
    visualize_prompt_regions,
    visualize_text_regions,
    write_cam_file,
    write_class_map,
)
from .config import LossFlag, RunConfig, apply_overrides, default_config, resolve_config
from .corpus import load_corpus, read_corpus, write_corpus
from .default_values import (
    DEFAULT_BG_THRESHOLD,
    DEFAULT_CLAMP_EPS,
    DEFAULT_IGNORE_INDEX,
    DEFAULT_PROMPT_INIT_STD,
    DEFAULT_TEMPLATE,
    DEFAULT_WEIGHT_DECAY,
)
from .encoder import (
    TextEmbeddingCache,
    ToyDualEncoder,
    create_encoder,
    encode_image,
    encode_patches,
    encode_text,
    encode_texts,
)
from .errors import (
    ArchiveFormatError,
    ConfigError,
    CorpusError,
    DataError,
    MissingArtifactError,
    NumericAbort,
    SemplesError,
)
from .masking import (
    MaskGenerator,
    MaskSet,
    Triplet,
    compose_triplet,
    create_generator,
    generate_masks,
    load_generator,
    save_generator,
)
from .objectives import LossReport, clamped_cos, loss_match, loss_prompt, loss_refine, loss_total
from .prompt_bank import PromptBank, background_embedding, background_embeddings, init_bank, load_bank, save_bank
from .toy import make_toy_corpus
from .trainer import (
    Checkpointer,
    Phase,
    PhasePlan,
    TrainingEvents,
    TrainingLog,
    frozen,
    parameter_digest,
    run_phase,
    run_pipeline,
)
from .version import __version__

__all__ = (
    "apply_overrides",
    "ArchiveFormatError",
    "background_embedding",
    "background_embeddings",
    "cams_to_pseudo_mask",
    "Checkpointer",
    "clamped_cos",
    "ClassCatalog",
    "compose_triplet",
    "compute_miou",
    "ConfigError",
    "ConfusionMatrix",
    "CorpusError",
    "create_encoder",
    "create_generator",
    "DataError",
    "default_config",
    "DEFAULT_BG_THRESHOLD",
    "DEFAULT_CLAMP_EPS",
    "DEFAULT_IGNORE_INDEX",
    "DEFAULT_PROMPT_INIT_STD",
    "DEFAULT_TEMPLATE",
    "DEFAULT_WEIGHT_DECAY",
    "DualEncoder",
    "encode_image",
    "encode_patches",
    "encode_text",
    "encode_texts",
    "extract_cams",
    "frozen",
    "generate_masks",
    "init_bank",
    "IoUReport",
    "LabeledImage",
    "load_bank",
    "load_corpus",
    "load_generator",
    "loss_match",
    "loss_prompt",
    "loss_refine",
    "loss_total",
    "LossFlag",
    "LossReport",
    "make_toy_corpus",
    "MaskGenerator",
    "MaskSet",
    "MissingArtifactError",
    "NumericAbort",
    "parameter_digest",
    "Phase",
    "PhasePlan",
    "PromptBank",
    "PseudoMask",
    "read_cam_file",
    "read_class_map",
    "read_corpus",
    "run_phase",
    "run_pipeline",
    "resolve_config",
    "RunConfig",
    "save_bank",
    "save_generator",
    "SemplesError",
    "sweep_thresholds",
    "TextEmbeddingCache",
    "ToyDualEncoder",
    "TrainingEvents",
    "TrainingLog",
    "Triplet",
    "visualize_prompt_regions",
    "visualize_text_regions",
    "write_cam_file",
    "write_class_map",
    "write_corpus",
    "__version__",
)
