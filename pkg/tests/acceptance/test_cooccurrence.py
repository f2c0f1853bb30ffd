# MIT License
# Copyright (c) 2024 The semples authors

"""Full pipeline on the toy corpus, where every `train` comes with the
`rails` texture the class text leaks toward.
"""
import numpy as np
import pytest

from semples import Phase, cams_to_pseudo_mask, compute_miou, extract_cams, generate_masks, parameter_digest
from semples.toy import TRAIN

THRESHOLD = 0.3


def _train_activation(gen, toy_corpus):
    """Mean train mask over the rails band and over the train pixels of
    every train image."""
    rails, foreground = [], []
    for sample in toy_corpus.samples:
        if not sample.image.labels[TRAIN]:
            continue
        mask = generate_masks(gen, sample.image).values[TRAIN].detach().numpy()
        rails.append(mask[sample.region_map == 1])
        foreground.append(mask[sample.class_map == TRAIN + 1])
    return float(np.concatenate(rails).mean()), float(np.concatenate(foreground).mean())


def _miou(gen, toy_corpus):
    preds = [cams_to_pseudo_mask(extract_cams(gen, sample.image), THRESHOLD) for sample in toy_corpus.samples]
    truths = [sample.class_map for sample in toy_corpus.samples]
    return compute_miou(preds, truths, catalog=toy_corpus.catalog, threshold=THRESHOLD).miou


@pytest.fixture(scope="module")
def activations(full_run, toy_corpus):
    return {
        "match": _train_activation(full_run.match_generator, toy_corpus),
        "refined": _train_activation(full_run.generator, toy_corpus),
    }


def test_rails_are_suppressed(activations):
    rails_match, _ = activations["match"]
    rails_refined, _ = activations["refined"]
    assert rails_refined <= 0.7 * rails_match


def test_train_is_retained(activations):
    _, train_match = activations["match"]
    _, train_refined = activations["refined"]
    assert train_refined >= 0.9 * train_match


def test_pseudo_masks_improve(full_run, match_only_run, toy_corpus):
    assert _miou(full_run.generator, toy_corpus) > _miou(match_only_run.generator, toy_corpus)


def test_match_only_ablation_stops_after_phase_a(full_run, match_only_run):
    assert len(match_only_run.logs[Phase.B_PROMPT]) == 0
    assert len(match_only_run.logs[Phase.C_REFINE]) == 0
    assert parameter_digest(match_only_run.generator) == parameter_digest(full_run.match_generator)
