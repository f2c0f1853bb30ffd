# MIT License
# Copyright (c) 2024 The semples authors

import argparse
import asyncio
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from ._catalog import ClassCatalog, LabeledImage
from .base import DualEncoder
from .cam import (
    export_cams,
    read_evaluation_set,
    sweep_thresholds,
    visualize_prompt_regions,
    visualize_text_regions,
    write_report,
)
from .config import PRESET_TAGS, RunConfig, resolve_config
from .corpus import CLASSES_FILE, load_corpus
from .default_values import DEFAULT_BG_THRESHOLD, DEFAULT_SEED, SEED_ENV_VAR
from .encoder import create_encoder
from .errors import ConfigError, CorpusError, DataError, MissingArtifactError, NumericAbort
from .masking import create_generator, load_generator, save_generator
from .prompt_bank import init_bank, load_bank, save_bank
from .toy import make_toy_corpus
from .trainer import ARTIFACT_NAMES, Checkpointer, Phase, PhasePlan, TrainingLog, run_phase, run_pipeline
from .version import __version__

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

CONFIG_FILE = "config.txt"
CHECKPOINTS_DIR = "checkpoints"
LOG_NAMES = {Phase.A_MATCH: "log_A.jsonl", Phase.B_PROMPT: "log_B.jsonl", Phase.C_REFINE: "log_C.jsonl"}


@dataclass
class CommandInvocation:
    """A parsed command line."""

    command: str
    preset: str = "toy"
    config_path: Optional[Path] = None
    overrides: List[str] = field(default_factory=list)
    # input and output locations, None when not given
    paths: Dict[str, Optional[Path]] = field(default_factory=dict)
    # every other command specific argument
    options: Dict[str, Any] = field(default_factory=dict)
    encoder: str = "toy"
    encoder_checkpoint: Optional[str] = None

    def path(self, name: str) -> Path:
        value = self.paths.get(name)
        if value is None:
            raise ConfigError(f"{self.command} needs --{name.replace('_', '-')}")
        return value

    def config(self) -> RunConfig:
        return resolve_config(self.preset, self.config_path, self.overrides)

    def make_encoder(self) -> DualEncoder:
        return create_encoder(self.encoder, checkpoint=self.encoder_checkpoint)


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise MissingArtifactError(f"{what} not found: {path}")
    return path


def _load_data(invocation: CommandInvocation) -> Tuple[ClassCatalog, List[LabeledImage]]:
    data = invocation.path("data")
    classes = data / CLASSES_FILE
    if not classes.is_file():
        raise CorpusError(f"class list not found: {classes}")
    catalog = ClassCatalog.from_file(classes)
    return catalog, load_corpus(data, catalog)


def _prepare_out(invocation: CommandInvocation, config: RunConfig) -> Path:
    out = invocation.path("out")
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_FILE).write_text("\n".join(config.to_lines()) + "\n", encoding="utf-8")
    return out


def _write_log(out: Path, log: TrainingLog) -> None:
    log.write_jsonl(out / LOG_NAMES[log.phase])


def _events(out: Path, catalog: ClassCatalog, config: RunConfig) -> Optional[Checkpointer]:
    if not config.checkpoint_every:
        return None
    return Checkpointer(out / CHECKPOINTS_DIR, config.checkpoint_every, catalog, config)


def _cmd_make_toy(invocation: CommandInvocation) -> None:
    seed = invocation.options.get("seed")
    if seed is None:
        try:
            seed = int(os.environ.get(SEED_ENV_VAR, DEFAULT_SEED))
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from None
    try:
        make_toy_corpus(
            invocation.path("out"),
            seed,
            num_images=invocation.options["num_images"],
            image_size=invocation.options["image_size"],
            cooccurrence_rate=invocation.options["cooccurrence_rate"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_train_match(invocation: CommandInvocation) -> None:
    config = invocation.config()
    encoder = invocation.make_encoder()
    catalog, corpus = _load_data(invocation)
    out = _prepare_out(invocation, config)

    gen = create_generator(len(catalog), config)
    plan = PhasePlan.for_phase(Phase.A_MATCH, config)
    _, log = run_phase(
        plan, corpus, gen, None, encoder, config, catalog=catalog, events=_events(out, catalog, config)
    )
    save_generator(out / ARTIFACT_NAMES[Phase.A_MATCH], gen, catalog=catalog, config=config)
    _write_log(out, log)


def _cmd_train_prompts(invocation: CommandInvocation) -> None:
    out = invocation.path("out")
    generator_path = _require_file(
        invocation.paths.get("generator") or out / ARTIFACT_NAMES[Phase.A_MATCH], "phase A generator checkpoint"
    )
    config = invocation.config()
    encoder = invocation.make_encoder()
    catalog, corpus = _load_data(invocation)
    gen = load_generator(generator_path, catalog)
    out = _prepare_out(invocation, config)

    bank = init_bank(catalog, config.prompt_len, encoder, config.seed, config.prompt_init_std)
    plan = PhasePlan.for_phase(Phase.B_PROMPT, config)
    _, log = run_phase(
        plan, corpus, gen, bank, encoder, config, catalog=catalog, events=_events(out, catalog, config)
    )
    save_bank(out / ARTIFACT_NAMES[Phase.B_PROMPT], bank)
    _write_log(out, log)


def _cmd_train_refine(invocation: CommandInvocation) -> None:
    out = invocation.path("out")
    generator_path = _require_file(
        invocation.paths.get("generator") or out / ARTIFACT_NAMES[Phase.A_MATCH], "phase A generator checkpoint"
    )
    bank_path = _require_file(
        invocation.paths.get("bank") or out / ARTIFACT_NAMES[Phase.B_PROMPT], "phase B prompt bank"
    )
    config = invocation.config()
    encoder = invocation.make_encoder()
    catalog, corpus = _load_data(invocation)
    gen = load_generator(generator_path, catalog)
    bank = load_bank(bank_path, catalog)
    out = _prepare_out(invocation, config)

    plan = PhasePlan.for_phase(Phase.C_REFINE, config)
    _, log = run_phase(
        plan, corpus, gen, bank, encoder, config, catalog=catalog, events=_events(out, catalog, config)
    )
    save_generator(out / ARTIFACT_NAMES[Phase.C_REFINE], gen, catalog=catalog, config=config)
    _write_log(out, log)


def _cmd_train_all(invocation: CommandInvocation) -> None:
    config = invocation.config()
    encoder = invocation.make_encoder()
    catalog, corpus = _load_data(invocation)
    out = _prepare_out(invocation, config)

    result = run_pipeline(corpus, config, encoder=encoder, catalog=catalog, events=_events(out, catalog, config))
    save_generator(out / ARTIFACT_NAMES[Phase.A_MATCH], result.match_generator, catalog=catalog, config=config)
    save_bank(out / ARTIFACT_NAMES[Phase.B_PROMPT], result.bank)
    save_generator(out / ARTIFACT_NAMES[Phase.C_REFINE], result.generator, catalog=catalog, config=config)
    for log in result.logs.values():
        _write_log(out, log)


def _cmd_extract_cams(invocation: CommandInvocation) -> None:
    generator_path = _require_file(invocation.path("generator"), "generator checkpoint")
    catalog, corpus = _load_data(invocation)
    gen = load_generator(generator_path, catalog)
    threshold = invocation.options.get("threshold")
    if threshold is None:
        threshold = invocation.config().bg_threshold
    export_cams(gen, corpus, invocation.path("out"), threshold)


def _cmd_eval(invocation: CommandInvocation) -> None:
    ids, cams, truths = asyncio.run(read_evaluation_set(invocation.path("cams"), invocation.path("truth")))
    classes = invocation.paths.get("classes")
    catalog = ClassCatalog.from_file(_require_file(classes, "class list")) if classes else None
    thresholds = invocation.options.get("thresholds") or [DEFAULT_BG_THRESHOLD]
    for threshold in thresholds:
        if not 0.0 <= threshold <= 1.0:
            raise ConfigError(f"--threshold must be within [0, 1], got {threshold}")

    reports = sweep_thresholds(cams, truths, thresholds, catalog=catalog, ids=ids)
    for report in reports:
        logger.info(f"threshold {report.threshold} miou {report.miou:.4f}")
    write_report(invocation.path("out"), reports)


def _cmd_visualize(invocation: CommandInvocation) -> None:
    catalog, corpus = _load_data(invocation)
    sample_id = invocation.options["id"]
    samples = [sample for sample in corpus if sample.id == sample_id]
    if not samples:
        raise CorpusError(f"sample {sample_id} is not part of the corpus")
    encoder = invocation.make_encoder()
    sample = samples[0]
    if sample.height % encoder.patch_size or sample.width % encoder.patch_size:
        raise DataError(
            f"sample {sample_id} is {sample.height}x{sample.width}, "
            f"heatmaps need sides multiple of the patch size {encoder.patch_size}"
        )
    out = invocation.path("out")

    text = invocation.options.get("text")
    if text:
        visualize_text_regions(encoder, sample, text, out)
        return

    bank_path = _require_file(invocation.path("bank"), "prompt bank")
    class_name = invocation.options.get("class_name")
    if not class_name:
        raise ConfigError("visualize needs --class together with --bank, or --text")
    try:
        k = catalog.index(class_name)
    except KeyError:
        raise ConfigError(f"unknown class {class_name!r}, classes are: {', '.join(catalog.names)}") from None
    visualize_prompt_regions(load_bank(bank_path, catalog), encoder, sample, k, out)


COMMANDS: Mapping[str, Callable[[CommandInvocation], None]] = {
    "make-toy": _cmd_make_toy,
    "train-match": _cmd_train_match,
    "train-prompts": _cmd_train_prompts,
    "train-refine": _cmd_train_refine,
    "train-all": _cmd_train_all,
    "extract-cams": _cmd_extract_cams,
    "eval": _cmd_eval,
    "visualize": _cmd_visualize,
}


def dispatch(invocation: CommandInvocation) -> int:
    """Runs a command, returning the process exit code.

    Failures are reported with a single `error=<class> message=<text>`
    line on stderr.
    """
    try:
        COMMANDS[invocation.command](invocation)
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG)
    except DataError as exc:
        return _fail(exc, EXIT_DATA)
    except NumericAbort as exc:
        return _fail(exc, EXIT_NUMERIC)
    return EXIT_OK


def _fail(exc: Exception, code: int) -> int:
    message = " ".join(str(exc).split())
    print(f"error={type(exc).__name__} message={message}", file=sys.stderr)
    return code


def _common_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--preset", choices=PRESET_TAGS, default="toy", help="configuration preset")
    parser.add_argument("--config", type=Path, help="key=value configuration file")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config key"
    )
    parser.add_argument("--encoder", choices=("toy", "clip"), default="toy")
    parser.add_argument("--encoder-checkpoint", help="pretrained weights for the clip encoder")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="semples", description="Weakly supervised segmentation training lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    toy = commands.add_parser("make-toy", parents=[common], help="generate the toy corpus")
    toy.add_argument("--out", type=Path, required=True)
    toy.add_argument("--seed", type=int, help=f"defaults to ${SEED_ENV_VAR} or {DEFAULT_SEED}")
    toy.add_argument("--num-images", type=int, default=64)
    toy.add_argument("--image-size", type=int, default=64)
    toy.add_argument("--cooccurrence-rate", type=float, default=1.0)

    for name, help_text in (
        ("train-match", "phase A, segment-label matching"),
        ("train-prompts", "phase B, background prompt learning"),
        ("train-refine", "phase C, prompt guided refinement"),
        ("train-all", "phases A, B and C"),
    ):
        train = commands.add_parser(name, parents=[common], help=help_text)
        train.add_argument("--data", type=Path, required=True, help="corpus root")
        train.add_argument("--out", type=Path, required=True, help="run directory")
        if name in ("train-prompts", "train-refine"):
            train.add_argument("--generator", type=Path, help="defaults to OUT/generator_A.ckpt")
        if name == "train-refine":
            train.add_argument("--bank", type=Path, help="defaults to OUT/bank_B.ckpt")

    extract = commands.add_parser("extract-cams", parents=[common], help="write CAMs and pseudo masks")
    extract.add_argument("--data", type=Path, required=True)
    extract.add_argument("--generator", type=Path, required=True)
    extract.add_argument("--out", type=Path, required=True)
    extract.add_argument("--threshold", type=float, help="background threshold of the pseudo masks")

    evaluate = commands.add_parser("eval", parents=[common], help="mIoU of CAM files against ground truth")
    evaluate.add_argument("--cams", type=Path, required=True)
    evaluate.add_argument("--truth", type=Path, required=True)
    evaluate.add_argument("--classes", type=Path, help="classes.txt naming the labels of the report")
    evaluate.add_argument(
        "--threshold", dest="thresholds", type=float, action="append", help="repeat for a threshold sweep"
    )
    evaluate.add_argument("--out", type=Path, required=True, help="JSON report path")

    visualize = commands.add_parser("visualize", parents=[common], help="prompt to patch similarity heatmap")
    visualize.add_argument("--data", type=Path, required=True)
    visualize.add_argument("--id", required=True, help="sample id")
    visualize.add_argument("--out", type=Path, required=True, help="PNG path, a .npy sidecar is written next to it")
    visualize.add_argument("--bank", type=Path)
    visualize.add_argument("--class", dest="class_name")
    visualize.add_argument("--text", help="hand written prompt instead of a learned one")
    return parser


_PATH_ARGS = ("data", "out", "generator", "bank", "cams", "truth", "classes")
_SHARED_ARGS = ("command", "preset", "config", "overrides", "encoder", "encoder_checkpoint", "verbose")


def parse_invocation(argv: Optional[Sequence[str]] = None) -> Tuple[CommandInvocation, bool]:
    args = vars(build_parser().parse_args(argv))
    paths = {name: args.get(name) for name in _PATH_ARGS if name in args}
    options = {name: value for name, value in args.items() if name not in _PATH_ARGS + _SHARED_ARGS}
    invocation = CommandInvocation(
        command=args["command"],
        preset=args["preset"],
        config_path=args["config"],
        overrides=list(args["overrides"]),
        paths=paths,
        options=options,
        encoder=args["encoder"],
        encoder_checkpoint=args["encoder_checkpoint"],
    )
    return invocation, args["verbose"]


def main(argv: Optional[Sequence[str]] = None) -> int:
    invocation, verbose = parse_invocation(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    return dispatch(invocation)
