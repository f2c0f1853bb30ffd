# MIT License
# Copyright (c) 2024 The semples authors

import math

import pytest
import torch

from semples.objectives import LossReport, clamped_cos, loss_match, loss_prompt, loss_refine, loss_total

EPS = 1e-4


def _axis(i, dim=4):
    vector = torch.zeros(dim, dtype=torch.float64)
    vector[i] = 1.0
    return vector


def _at_cos(cos, dim=4):
    """Unit vector with cosine `cos` to the first axis."""
    return cos * _axis(0, dim) + math.sqrt(1 - cos**2) * _axis(1, dim)


def _positive(seed, *shape):
    return torch.rand(*shape, dtype=torch.float64, generator=torch.Generator().manual_seed(seed)) + 0.1


class TestClampedCos:
    def test_identical(self):
        assert float(clamped_cos(_axis(0), _axis(0), EPS)) == 1.0

    def test_orthogonal(self):
        assert float(clamped_cos(_axis(0), _axis(1), EPS)) == EPS

    def test_opposite(self):
        assert float(clamped_cos(_axis(0), -_axis(0), EPS)) == EPS

    def test_pass_through(self):
        assert float(clamped_cos(_axis(0), _at_cos(0.7), EPS)) == pytest.approx(0.7)

    def test_scale_invariant(self):
        assert float(clamped_cos(3 * _axis(0), 0.5 * _at_cos(0.3), EPS)) == pytest.approx(0.3)

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            clamped_cos(torch.zeros(4), _axis(0), EPS)

    def test_batched(self):
        a = torch.stack([_axis(0), _axis(0)])
        b = torch.stack([_axis(0), _axis(1)])
        assert clamped_cos(a, b, EPS).tolist() == [1.0, EPS]

    def test_clamped_branch_has_no_gradient(self):
        a = _axis(0).requires_grad_(True)
        clamped_cos(a, -_axis(0), EPS).backward()
        assert torch.count_nonzero(a.grad) == 0


class TestLossMatch:
    def test_aligned_foreground(self):
        loss = loss_match(_axis(0), _axis(1), _axis(0), lambda_b=2.4, eps=EPS)
        assert float(loss) == pytest.approx(2.4e-4, rel=1e-3)

    def test_orthogonal_foreground(self):
        loss = loss_match(_axis(1), _axis(1), _axis(0), lambda_b=0.0, eps=EPS)
        assert float(loss) == pytest.approx(9.2103, abs=1e-4)

    def test_zero_weight_is_exact(self):
        v_f, v_b, u_f = _positive(0, 8), _positive(1, 8), _positive(2, 8)
        assert torch.equal(loss_match(v_f, v_b, u_f, 0.0, EPS), -torch.log(clamped_cos(v_f, u_f, EPS)))

    def test_background_equal_to_text_is_finite(self):
        loss = loss_match(_axis(0), _axis(0), _axis(0), lambda_b=1.0, eps=EPS)
        assert float(loss) == pytest.approx(-math.log(EPS))

    def test_non_finite(self):
        with pytest.raises(ValueError):
            loss_match(torch.full((4,), float("nan")), _axis(1), _axis(0), 1.0, EPS)

    def test_class_averaging(self):
        u_f = torch.stack([_axis(0)] * 3)
        v_f = torch.stack([_at_cos(0.9), _at_cos(0.5), _at_cos(0.3)])
        v_b = torch.stack([_axis(2)] * 3)
        loss = loss_match(v_f, v_b, u_f, 1.0, EPS, sample_index=torch.tensor([0, 0, 1]))
        first = (-math.log(0.9) - math.log(0.5)) / 2
        second = -math.log(0.3)
        background = -math.log(1 - EPS)
        assert float(loss) == pytest.approx((first + second) / 2 + background)

    def test_without_sample_index_averages_pairs(self):
        u_f = torch.stack([_axis(0)] * 3)
        v_f = torch.stack([_at_cos(0.9), _at_cos(0.5), _at_cos(0.3)])
        loss = loss_match(v_f, v_f, u_f, 0.0, EPS)
        assert float(loss) == pytest.approx(-(math.log(0.9) + math.log(0.5) + math.log(0.3)) / 3)

    def test_gradient(self):
        inputs = tuple(_positive(seed, 3, 8).requires_grad_(True) for seed in (3, 4, 5))
        sample_index = torch.tensor([0, 0, 1])
        assert torch.autograd.gradcheck(
            lambda v_f, v_b, u_f: loss_match(v_f, v_b, u_f, 2.4, EPS, sample_index),
            inputs,
            eps=1e-5,
            atol=1e-7,
            rtol=1e-4,
        )


class TestLossPrompt:
    def test_ideal_prompt(self):
        prompt_I, prompt_T, total = loss_prompt(_axis(0), _axis(0), _axis(1), lambda_T=0.02, eps=EPS)
        assert float(prompt_I) == pytest.approx(0.0, abs=1e-12)
        assert float(total) == pytest.approx(2e-6, rel=1e-3)

    def test_prompt_equal_to_text(self):
        _, prompt_T, _ = loss_prompt(_axis(0), _axis(1), _axis(0), lambda_T=0.02, eps=EPS)
        assert float(prompt_T) == pytest.approx(9.2103, abs=1e-4)

    def test_zero_weight_is_exact(self):
        prompt_I, _, total = loss_prompt(_positive(6, 8), _positive(7, 8), _positive(8, 8), 0.0, EPS)
        assert torch.equal(total, prompt_I)

    def test_gradient(self):
        inputs = tuple(_positive(seed, 2, 8).requires_grad_(True) for seed in (9, 10, 11))
        assert torch.autograd.gradcheck(
            lambda u_b, v_b, u_f: loss_prompt(u_b, v_b, u_f, 0.02, EPS)[2], inputs, eps=1e-5, atol=1e-7, rtol=1e-4
        )


class TestLossRefine:
    def test_orthogonal(self):
        assert float(loss_refine(_axis(1), _axis(0), EPS)) == pytest.approx(1e-4, rel=1e-3)

    def test_equal(self):
        assert float(loss_refine(_axis(0), _axis(0), EPS)) == pytest.approx(9.2103, abs=1e-4)

    def test_monotone(self):
        values = [float(loss_refine(_at_cos(cos), _axis(0), EPS)) for cos in (0.2, 0.4, 0.6, 0.8)]
        assert values == sorted(values)
        assert len(set(values)) == len(values)

    def test_gradient(self):
        inputs = tuple(_positive(seed, 2, 8).requires_grad_(True) for seed in (12, 13))
        assert torch.autograd.gradcheck(
            lambda v_f, u_b: loss_refine(v_f, u_b, EPS), inputs, eps=1e-5, atol=1e-7, rtol=1e-4
        )


class TestLossTotal:
    def test_weighted_sum(self):
        assert float(loss_total(torch.tensor(1.0), torch.tensor(2.0), 0.05)) == pytest.approx(1.1)

    def test_zero_weight(self):
        match = torch.tensor(1.5)
        assert loss_total(match, torch.tensor(2.0), 0.0) is match

    def test_coco_weight(self):
        assert float(loss_total(torch.tensor(0.0), torch.tensor(2.0), 0.2)) == pytest.approx(0.4)


class TestLossReport:
    def test_record(self):
        report = LossReport(1.0, 0.5, 0.25, 0.5, 2.0, 1.1, (2.4, 0.02, 0.05))
        record = report.to_record(step=3, phase="C_refine")
        assert record["step"] == 3
        assert record["phase"] == "C_refine"
        assert record["total"] == 1.1
        assert record["weights"] == {"lambda_b": 2.4, "lambda_T": 0.02, "lambda_refine": 0.05}
        assert "time" in record

    @pytest.mark.parametrize("value", [-1.0, float("inf"), float("nan")])
    def test_invalid(self, value):
        with pytest.raises(ValueError):
            LossReport(value, 0.0, 0.0, 0.0, 0.0, 0.0, (1.0, 1.0, 1.0))
