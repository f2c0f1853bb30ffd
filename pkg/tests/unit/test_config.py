# MIT License
# Copyright (c) 2024 The semples authors

import pytest

from semples.config import (
    ALL_LOSSES,
    LossFlag,
    RunConfig,
    apply_overrides,
    default_config,
    parse_assignments,
    read_config_file,
    resolve_config,
)
from semples.errors import ConfigError


class TestDefaultConfig:
    def test_voc(self):
        config = default_config("voc")
        assert (config.lambda_b, config.lambda_T, config.lambda_refine) == (2.4, 0.02, 0.05)
        assert config.prompt_len == 30
        assert config.batch_size == 64
        assert config.epochs == 60
        assert config.lr_phaseA == 5e-4

    def test_coco(self):
        config = default_config("coco")
        assert (config.lambda_b, config.lambda_T, config.lambda_refine) == (0.75, 0.01, 0.2)
        assert config.lr_phaseA == config.lr_phaseB == config.lr_phaseC == 5e-6

    def test_toy_honors_invariants(self):
        config = default_config("toy")
        assert 0 < config.clamp_eps <= 0.01
        assert config.prompt_len >= 1
        assert min(config.lr_phaseA, config.lr_phaseB, config.lr_phaseC) > 0
        assert config.enabled_losses == ALL_LOSSES

    def test_unknown_tag_lists_valid_ones(self):
        with pytest.raises(ConfigError) as excinfo:
            default_config("imagenet")
        assert "voc" in str(excinfo.value)
        assert "coco" in str(excinfo.value)
        assert "toy" in str(excinfo.value)


class TestRunConfig:
    @pytest.mark.parametrize(
        "changes",
        [
            {"clamp_eps": 0.0},
            {"clamp_eps": 0.02},
            {"prompt_len": 0},
            {"lr_phaseB": 0.0},
            {"lambda_b": -1.0},
            {"bg_threshold": 1.5},
            {"epochs_phaseC": 0},
            {"generator_widths": ()},
        ],
    )
    def test_invalid_values(self, changes):
        kwargs = dict(
            lambda_b=1.0,
            lambda_T=0.1,
            lambda_refine=0.1,
            prompt_len=4,
            batch_size=2,
            lr_phaseA=1e-3,
            lr_phaseB=1e-3,
            lr_phaseC=1e-3,
            epochs=1,
        )
        kwargs.update(changes)
        with pytest.raises(ConfigError):
            RunConfig(**kwargs)

    def test_unknown_loss_flag(self):
        with pytest.raises(ConfigError):
            apply_overrides(default_config("toy"), {"enabled_losses": "match,contrastive"})

    def test_phase_epochs_fallback(self):
        config = apply_overrides(default_config("toy"), {"epochs_phaseB": "3"})
        assert config.phase_epochs("A") == config.epochs
        assert config.phase_epochs("B") == 3

    def test_to_lines_round_trip(self):
        config = apply_overrides(
            default_config("voc"),
            {"enabled_losses": "match,refine", "epochs_phaseA": "2", "generator_widths": "8,8,16"},
        )
        again = apply_overrides(default_config("toy"), parse_assignments(config.to_lines()))
        assert again == config

    def test_enabled_losses_accepts_strings(self):
        config = RunConfig(
            lambda_b=1.0,
            lambda_T=0.1,
            lambda_refine=0.1,
            prompt_len=4,
            batch_size=2,
            lr_phaseA=1e-3,
            lr_phaseB=1e-3,
            lr_phaseC=1e-3,
            epochs=1,
            enabled_losses={"match", "prompt_I"},
        )
        assert config.enabled_losses == frozenset({LossFlag.MATCH, LossFlag.PROMPT_I})


class TestAssignments:
    def test_comments_and_blank_lines(self):
        assert parse_assignments(["# comment", "", " seed = 7 "]) == {"seed": "7"}

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_assignments(["learning_rate=1"])

    def test_missing_equal(self):
        with pytest.raises(ConfigError):
            parse_assignments(["seed"])

    def test_unparsable_value(self):
        with pytest.raises(ConfigError):
            apply_overrides(default_config("toy"), {"batch_size": "eight"})

    def test_read_config_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("lambda_b=0.5\nprompt_len=12\n")
        assert read_config_file(path) == {"lambda_b": "0.5", "prompt_len": "12"}

    def test_read_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError):
            read_config_file(tmp_path / "missing.cfg")


class TestResolveConfig:
    def test_layers(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("lambda_b=0.5\nprompt_len=12\n")
        config = resolve_config("voc", path, ["prompt_len=3"], environ={})
        assert config.lambda_b == 0.5
        assert config.prompt_len == 3
        assert config.lambda_T == 0.02

    def test_seed_from_environment(self):
        config = resolve_config("toy", environ={"SEMPLES_SEED": "42"})
        assert config.seed == 42

    def test_explicit_seed_wins_over_environment(self):
        config = resolve_config("toy", overrides=["seed=3"], environ={"SEMPLES_SEED": "42"})
        assert config.seed == 3
