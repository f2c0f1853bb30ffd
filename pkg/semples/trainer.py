# MIT License
# Copyright (c) 2024 The semples authors

import copy
import enum
import json
import logging
import math
from abc import ABCMeta, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import mmh3
import numpy as np
import torch
from torch import nn

from ._catalog import ClassCatalog, LabeledImage
from .base import DualEncoder
from .config import LossFlag, RunConfig
from .encoder import TextEmbeddingCache, encode_text
from .errors import NumericAbort
from .masking import MaskGenerator, compose_pairs, create_generator, save_generator
from .objectives import LossReport, loss_match, loss_prompt, loss_refine, loss_total
from .prompt_bank import PromptBank, init_bank, save_bank

logger = logging.getLogger(__name__)


class Phase(str, enum.Enum):
    A_MATCH = "A_match"
    B_PROMPT = "B_prompt"
    C_REFINE = "C_refine"

    @property
    def letter(self) -> str:
        return self.value[0]


class Component(str, enum.Enum):
    MASK_GENERATOR = "mask_generator"
    PROMPT_BANK = "prompt_bank"


_DECLARED: Mapping[Phase, Tuple[Component, FrozenSet[LossFlag]]] = {
    Phase.A_MATCH: (Component.MASK_GENERATOR, frozenset({LossFlag.MATCH})),
    Phase.B_PROMPT: (Component.PROMPT_BANK, frozenset({LossFlag.PROMPT_I, LossFlag.PROMPT_T})),
    Phase.C_REFINE: (Component.MASK_GENERATOR, frozenset({LossFlag.MATCH, LossFlag.REFINE})),
}

# loss a phase can not run without
_REQUIRED: Mapping[Phase, FrozenSet[LossFlag]] = {
    Phase.A_MATCH: frozenset({LossFlag.MATCH}),
    Phase.B_PROMPT: frozenset({LossFlag.PROMPT_I, LossFlag.PROMPT_T}),
    Phase.C_REFINE: frozenset({LossFlag.REFINE}),
}

ARTIFACT_NAMES: Mapping[Phase, str] = {
    Phase.A_MATCH: "generator_A.ckpt",
    Phase.B_PROMPT: "bank_B.ckpt",
    Phase.C_REFINE: "generator_C.ckpt",
}


@dataclass(frozen=True)
class PhasePlan:
    """What a phase trains, with which losses, for how long."""

    phase: Phase
    trainable: FrozenSet[Component]
    losses: FrozenSet[LossFlag]
    epochs: int
    lr: float

    def __post_init__(self) -> None:
        component, allowed = _DECLARED[self.phase]
        if self.trainable != frozenset({component}):
            raise ValueError(f"phase {self.phase.value} trains {component.value} only, got {set(self.trainable)}")
        if not self.losses <= allowed:
            raise ValueError(f"phase {self.phase.value} accepts losses {set(allowed)}, got {set(self.losses)}")
        if self.epochs < 1 or self.lr <= 0:
            raise ValueError("epochs and lr must be positive")

    @classmethod
    def for_phase(cls, phase: Phase, config: RunConfig) -> "PhasePlan":
        component, allowed = _DECLARED[phase]
        return cls(
            phase=phase,
            trainable=frozenset({component}),
            losses=allowed & config.enabled_losses,
            epochs=config.phase_epochs(phase.letter),
            lr=config.phase_lr(phase.letter),
        )

    @property
    def is_noop(self) -> bool:
        """True when none of the losses the phase depends on is enabled,
        the phase then leaves everything untouched."""
        return not (self.losses & _REQUIRED[self.phase])


@dataclass
class TrainingLog:
    phase: Phase
    reports: List[LossReport] = field(default_factory=list)
    records: List[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.reports)

    def append(self, step: int, report: LossReport) -> None:
        self.reports.append(report)
        self.records.append(report.to_record(step, self.phase.value))

    def values(self, name: str) -> List[float]:
        return [getattr(report, name) for report in self.reports]

    def write_jsonl(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fd:
            for record in self.records:
                fd.write(json.dumps(record, sort_keys=True) + "\n")
        return path


class TrainingEvents(metaclass=ABCMeta):
    """TrainingEvents can be used for being notified about the progress
    of the training phases.

    Each kind of event is identified with its own function named
    `on_<event_name>`. An exception raised by a hook is logged and
    training continues.
    """

    @abstractmethod
    def on_phase_start(self, plan: PhasePlan) -> None:
        """Called before the first step of a phase, also for phases that
        turn out to be a no-op."""

    @abstractmethod
    def on_step(self, plan: PhasePlan, step: int, report: LossReport, component: nn.Module) -> None:
        """Called after every optimizer step, `step` starts at 1 and
        `component` is the module being trained."""

    @abstractmethod
    def on_phase_end(self, plan: PhasePlan, log: TrainingLog, component: nn.Module) -> None:
        """Called once the phase finished, with its complete log."""


def _notify(events: Optional[TrainingEvents], hook: str, *args) -> None:
    if events is None:
        return
    try:
        getattr(events, hook)(*args)
    except Exception:
        logger.exception(f"Hook {hook} raised an exception, continuing training")


class Checkpointer(TrainingEvents):
    """Writes the trained component at the end of every phase and, when
    `every` is positive, every `every` steps."""

    _directory: Path
    _every: int
    _catalog: Optional[ClassCatalog]
    _config: Optional[RunConfig]

    def __init__(
        self,
        directory: Union[str, Path],
        every: int = 0,
        catalog: Optional[ClassCatalog] = None,
        config: Optional[RunConfig] = None,
    ) -> None:
        self._directory = Path(directory)
        self._every = every
        self._catalog = catalog
        self._config = config

    def _write(self, component: nn.Module, name: str) -> Path:
        path = self._directory / name
        if isinstance(component, PromptBank):
            save_bank(path, component)
        else:
            save_generator(path, component, catalog=self._catalog, config=self._config)
        logger.info(f"checkpoint written to {path}")
        return path

    def on_phase_start(self, plan: PhasePlan) -> None:
        pass

    def on_step(self, plan: PhasePlan, step: int, report: LossReport, component: nn.Module) -> None:
        if self._every and step % self._every == 0:
            stem = ARTIFACT_NAMES[plan.phase].rsplit(".", 1)[0]
            self._write(component, f"{stem}.step{step:06d}.ckpt")

    def on_phase_end(self, plan: PhasePlan, log: TrainingLog, component: nn.Module) -> None:
        self._write(component, ARTIFACT_NAMES[plan.phase])


class frozen:
    """Context manager that disables gradients for every parameter of
    the given modules and restores the previous flags on exit."""

    _saved: List[Tuple[nn.Parameter, bool]]

    def __init__(self, *modules: object) -> None:
        self._saved = []
        for module in modules:
            if isinstance(module, nn.Module):
                self._saved.extend((param, param.requires_grad) for param in module.parameters())

    def __enter__(self) -> "frozen":
        for param, _ in self._saved:
            param.requires_grad_(False)
        return self

    def __exit__(self, exc_type, exc_value, traceback) -> None:
        for param, requires_grad in self._saved:
            param.requires_grad_(requires_grad)


def parameter_digest(tensors: Union[Mapping[str, torch.Tensor], nn.Module]) -> str:
    """Stable hex digest of a set of named tensors."""
    if isinstance(tensors, nn.Module):
        tensors = tensors.state_dict()
    parts = []
    for name in sorted(tensors):
        data = tensors[name].detach().cpu().contiguous().numpy().tobytes()
        parts.append(name.encode("utf-8") + b"\0" + mmh3.hash_bytes(data))
    return mmh3.hash_bytes(b"".join(parts)).hex()


def _batches(num_samples: int, batch_size: int, seed: int, epoch: int) -> Iterator[np.ndarray]:
    order = np.random.default_rng([seed, epoch]).permutation(num_samples)
    for start in range(0, num_samples, batch_size):
        yield order[start : start + batch_size]


def steps_per_epoch(num_samples: int, batch_size: int) -> int:
    return math.ceil(num_samples / batch_size)


class _Batch:
    """Images of a batch and the `(sample, class)` pairs of their
    present classes."""

    __slots__ = ("images", "sample_index", "class_index")

    def __init__(self, samples: Sequence[LabeledImage]) -> None:
        self.images = [sample.tensor() for sample in samples]
        pairs = [(i, k) for i, sample in enumerate(samples) for k in sample.present_classes()]
        self.sample_index = torch.tensor([i for i, _ in pairs], dtype=torch.long)
        self.class_index = torch.tensor([k for _, k in pairs], dtype=torch.long)


def _compose_embeddings(
    gen: MaskGenerator, encoder: DualEncoder, batch: _Batch
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Masks the batch and returns `(v_f, v_b, masks)` one row per pair."""
    if len({tuple(image.shape) for image in batch.images}) == 1:
        images = torch.stack(batch.images)
        masks = gen(images)
        foreground, background = compose_pairs(images, masks, batch.sample_index, batch.class_index)
        return encoder.image_fn(foreground), encoder.image_fn(background), masks

    # images of different sizes go through the generator one at a time
    v_f, v_b, masks = [], [], []
    for i, image in enumerate(batch.images):
        selected = batch.sample_index == i
        mask = gen(image.unsqueeze(0))
        classes = batch.class_index[selected]
        foreground, background = compose_pairs(
            image.unsqueeze(0), mask, torch.zeros_like(classes), classes
        )
        v_f.append(encoder.image_fn(foreground))
        v_b.append(encoder.image_fn(background))
        masks.append(mask.flatten())
    return torch.cat(v_f), torch.cat(v_b), torch.cat(masks)


def _check_masks(masks: torch.Tensor, phase: Phase, step: int) -> None:
    data = masks.detach()
    if not torch.isfinite(data).all() or data.min() < 0 or data.max() > 1:
        raise NumericAbort(f"masks left [0, 1] in phase {phase.value} at step {step}", phase.value, step)


def _check_loss(loss: torch.Tensor, phase: Phase, step: int) -> None:
    if not torch.isfinite(loss.detach()).all():
        raise NumericAbort(f"non finite loss in phase {phase.value} at step {step}", phase.value, step)


def _step_losses(
    plan: PhasePlan,
    batch: _Batch,
    gen: MaskGenerator,
    bank: Optional[PromptBank],
    encoder: DualEncoder,
    text_cache: TextEmbeddingCache,
    config: RunConfig,
    step: int,
) -> Tuple[torch.Tensor, LossReport]:
    eps = config.clamp_eps
    weights = (config.lambda_b, config.lambda_T, config.lambda_refine)
    u_f = text_cache.embeddings[batch.class_index]
    index = batch.sample_index
    zero = torch.zeros(())
    match = prompt_I = prompt_T = prompt_total = refine = zero

    if plan.phase is Phase.B_PROMPT:
        with torch.no_grad():
            _, v_b, masks = _compose_embeddings(gen, encoder, batch)
        u_b = encode_text(encoder, bank.embeddings[batch.class_index])
        prompt_I, prompt_T, _ = loss_prompt(u_b, v_b, u_f, config.lambda_T, eps, index)
        objective = zero
        if LossFlag.PROMPT_I in plan.losses:
            objective = objective + prompt_I
        if LossFlag.PROMPT_T in plan.losses:
            objective = objective + config.lambda_T * prompt_T
        prompt_total = objective
    else:
        v_f, v_b, masks = _compose_embeddings(gen, encoder, batch)
        if LossFlag.MATCH in plan.losses:
            match = loss_match(v_f, v_b, u_f, config.lambda_b, eps, index)
        if plan.phase is Phase.C_REFINE:
            with torch.no_grad():
                u_b = encode_text(encoder, bank.embeddings[batch.class_index])
            refine = loss_refine(v_f, u_b, eps, index)
            objective = loss_total(match, refine, config.lambda_refine)
        else:
            objective = match

    _check_masks(masks, plan.phase, step)
    _check_loss(objective, plan.phase, step)
    report = LossReport(
        match=match.detach().item(),
        prompt_I=prompt_I.detach().item(),
        prompt_T=prompt_T.detach().item(),
        prompt_total=prompt_total.detach().item(),
        refine=refine.detach().item(),
        total=objective.detach().item(),
        weights_used=weights,
    )
    return objective, report


def run_phase(
    plan: PhasePlan,
    corpus: Sequence[LabeledImage],
    gen: MaskGenerator,
    bank: Optional[PromptBank],
    encoder: DualEncoder,
    config: RunConfig,
    *,
    catalog: ClassCatalog,
    text_cache: Optional[TextEmbeddingCache] = None,
    max_steps: Optional[int] = None,
    events: Optional[TrainingEvents] = None,
) -> Tuple[nn.Module, TrainingLog]:
    """Runs a single phase, updating in place and returning the trained
    component, the generator for A and C, the bank for B, together with
    the log of every step.

    Only the component the plan trains is handed to the optimizer, the
    other one and the encoder are frozen for the duration of the phase.
    `max_steps` stops the phase early, the learning rate schedule still
    spans the full phase.
    """
    if not corpus:
        raise ValueError("corpus can not be empty")
    if plan.phase is not Phase.A_MATCH and bank is None:
        raise ValueError(f"phase {plan.phase.value} needs a prompt bank")

    trained: nn.Module = bank if plan.phase is Phase.B_PROMPT else gen
    others = [gen if trained is bank else bank, encoder]
    log = TrainingLog(plan.phase)
    _notify(events, "on_phase_start", plan)

    if plan.is_noop:
        logger.info(f"phase {plan.phase.value} skipped, none of its losses is enabled")
        _notify(events, "on_phase_end", plan, log, trained)
        return trained, log

    text_cache = text_cache or TextEmbeddingCache(encoder, catalog)
    total_steps = plan.epochs * steps_per_epoch(len(corpus), config.batch_size)
    logger.info(f"phase {plan.phase.value} started, {total_steps} steps over {len(corpus)} samples")

    with frozen(*others):
        params = list(trained.parameters())
        for param in params:
            param.requires_grad_(True)
        optimizer = torch.optim.AdamW(params, lr=plan.lr, weight_decay=config.weight_decay)
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=total_steps)

        step = 0
        for epoch in range(plan.epochs):
            for indexes in _batches(len(corpus), config.batch_size, config.seed, epoch):
                if max_steps is not None and step >= max_steps:
                    break
                samples = []
                for i in indexes:
                    if corpus[i].present_classes():
                        samples.append(corpus[i])
                    else:
                        logger.warning(f"sample {corpus[i].id} has no present class, skipped")
                if not samples:
                    continue

                step += 1
                objective, report = _step_losses(plan, _Batch(samples), gen, bank, encoder, text_cache, config, step)
                optimizer.zero_grad(set_to_none=True)
                objective.backward()
                optimizer.step()
                scheduler.step()
                log.append(step, report)
                _notify(events, "on_step", plan, step, report, trained)

        if isinstance(trained, PromptBank):
            trained.freeze()

    last = f"{log.reports[-1].total:.6f}" if log.reports else "n/a"
    logger.info(f"phase {plan.phase.value} finished after {step} steps, last total {last}")
    _notify(events, "on_phase_end", plan, log, trained)
    return trained, log


@dataclass
class PipelineResult:
    generator: MaskGenerator
    bank: PromptBank
    logs: Dict[Phase, TrainingLog]
    # copy of the generator as phase A left it
    match_generator: MaskGenerator


def run_pipeline(
    corpus: Sequence[LabeledImage],
    config: RunConfig,
    *,
    encoder: DualEncoder,
    catalog: ClassCatalog,
    gen: Optional[MaskGenerator] = None,
    bank: Optional[PromptBank] = None,
    phases: Sequence[Phase] = tuple(Phase),
    max_steps: Optional[int] = None,
    events: Optional[TrainingEvents] = None,
) -> PipelineResult:
    """Runs the phases in order, A then B then C by default, sharing one
    text embedding cache. A fresh generator and bank are created from
    `config` when not given."""
    gen = gen if gen is not None else create_generator(len(catalog), config)
    if bank is None:
        bank = init_bank(catalog, config.prompt_len, encoder, config.seed, config.prompt_init_std)
    text_cache = TextEmbeddingCache(encoder, catalog)
    logs: Dict[Phase, TrainingLog] = {}
    match_generator = gen

    for phase in sorted(phases, key=lambda phase: phase.value):
        plan = PhasePlan.for_phase(phase, config)
        _, logs[phase] = run_phase(
            plan,
            corpus,
            gen,
            bank,
            encoder,
            config,
            catalog=catalog,
            text_cache=text_cache,
            max_steps=max_steps,
            events=events,
        )
        if phase is Phase.A_MATCH:
            match_generator = copy.deepcopy(gen)

    return PipelineResult(gen, bank, logs, match_generator)
