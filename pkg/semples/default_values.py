# MIT License
# Copyright (c) 2024 The semples authors

DEFAULT_TEMPLATE = "a photo of {}"
DEFAULT_CLAMP_EPS = 1e-4
DEFAULT_PROMPT_INIT_STD = 0.02
DEFAULT_WEIGHT_DECAY = 0.01
DEFAULT_BG_THRESHOLD = 0.3
DEFAULT_CHECKPOINT_EVERY = 0
DEFAULT_SEED = 0
DEFAULT_GENERATOR_WIDTHS = (16, 32)
DEFAULT_GENERATOR_PRIOR_LOGIT = -2.0
DEFAULT_LOADER_WORKERS = 4
DEFAULT_IGNORE_INDEX = 255
DEFAULT_COLORMAP = "jet"

DEFAULT_TOY_EMBED_DIM = 32
DEFAULT_TOY_PATCH_SIZE = 16
DEFAULT_TOY_ENCODER_SEED = 0
DEFAULT_TOY_NULL_SCALE = 0.005
DEFAULT_TOY_CONCEPT_SCALE = 4.0
DEFAULT_TOY_FILLER_SCALE = 0.01
DEFAULT_TOY_NUM_IMAGES = 64
DEFAULT_TOY_IMAGE_SIZE = 64
DEFAULT_TOY_COOCCURRENCE_RATE = 1.0

DEFAULT_CLIP_MODEL = "ViT-B-32"
DEFAULT_CLIP_PATCH_SIZE = 32

ARCHIVE_FORMAT_VERSION = 2
CAM_FORMAT_VERSION = 1
SEED_ENV_VAR = "SEMPLES_SEED"
