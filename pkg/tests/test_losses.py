import math

import numpy as np
import pytest
import torch

from f3net.errors import InvalidLabelError, ShapeError
from f3net.losses import (
    DICE_EPS,
    LossWeights,
    ce_loss,
    combined_loss,
    dice_loss,
    foreground_probability,
)


class TestDiceLoss:
    def test_perfect_overlap_near_zero(self):
        t = torch.tensor([[[1.0, 0.0], [1.0, 1.0]]])
        loss = float(dice_loss(t, t))
        assert abs(loss) < 1e-5

    def test_hand_value_two_voxels(self):
        p = torch.tensor([0.8, 0.2])
        t = torch.tensor([1.0, 0.0])
        # (2*0.8 + eps) / (1.0 + 1.0 + eps)
        expected = 1.0 - (1.6 + DICE_EPS) / (2.0 + DICE_EPS)
        assert abs(float(dice_loss(p, t)) - expected) < 1e-7
        assert abs(float(dice_loss(p, t)) - 0.2) < 1e-4

    def test_both_empty_scores_zero(self):
        z = torch.zeros(3, 3, 3)
        assert float(dice_loss(z, z)) == 0.0

    def test_bounds(self):
        rng = torch.Generator().manual_seed(0)
        for _ in range(20):
            p = torch.rand(4, 4, 4, generator=rng)
            t = (torch.rand(4, 4, 4, generator=rng) > 0.5).float()
            loss = float(dice_loss(p, t))
            assert 0.0 <= loss <= 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dice_loss(torch.zeros(2, 2, 2), torch.zeros(2, 2, 3))


class TestCeLoss:
    def test_single_voxel_prob_08(self):
        # two-class logits assigning probability 0.8 to the true class
        logits = torch.tensor([[math.log(0.2)], [math.log(0.8)]]).reshape(2, 1, 1, 1)
        target = torch.ones(1, 1, 1, dtype=torch.long)
        assert abs(float(ce_loss(logits, target)) - 0.22314355) < 1e-6

    def test_uniform_logits_ln2(self):
        logits = torch.zeros(2, 3, 3, 3)
        target = torch.randint(0, 2, (3, 3, 3))
        assert abs(float(ce_loss(logits, target)) - math.log(2.0)) < 1e-6

    def test_confident_correct_goes_to_zero(self):
        logits = torch.zeros(2, 2, 2, 2)
        target = torch.ones(2, 2, 2, dtype=torch.long)
        logits[1] = 50.0
        assert float(ce_loss(logits, target)) < 1e-6

    def test_invalid_label(self):
        with pytest.raises(InvalidLabelError):
            ce_loss(torch.zeros(2, 2, 2, 2), torch.full((2, 2, 2), 5, dtype=torch.long))

    def test_batched_matches_flat(self):
        rng = torch.Generator().manual_seed(1)
        logits = torch.randn(3, 2, 4, 4, 4, generator=rng)
        target = torch.randint(0, 2, (3, 4, 4, 4), generator=rng)
        batched = float(ce_loss(logits, target))
        manual = float(
            torch.nn.functional.cross_entropy(logits, target)
        )
        assert abs(batched - manual) < 1e-7


class TestCombinedLoss:
    def _random_instance(self, seed):
        rng = torch.Generator().manual_seed(seed)
        logits = torch.randn(2, 4, 4, 4, generator=rng, dtype=torch.float64)
        target = torch.randint(0, 2, (4, 4, 4), generator=rng)
        return logits, target

    def test_weight_selection(self):
        logits, target = self._random_instance(0)
        d = float(combined_loss(logits, target, LossWeights(1.0, 0.0)))
        c = float(combined_loss(logits, target, LossWeights(0.0, 1.0)))
        fg = foreground_probability(logits, batched=False)
        assert abs(d - float(dice_loss(fg, (target > 0).double()))) < 1e-12
        assert abs(c - float(ce_loss(logits, target))) < 1e-12

    def test_linearity_in_weights(self):
        for seed in range(10):
            logits, target = self._random_instance(seed)
            fg = foreground_probability(logits, batched=False)
            d = float(dice_loss(fg, (target > 0).double()))
            c = float(ce_loss(logits, target))
            combo = float(combined_loss(logits, target, LossWeights(2.0, 3.0)))
            assert abs(combo - (2.0 * d + 3.0 * c)) < 1e-7

    def test_gradient_matches_central_differences(self):
        # 20 random 4x4x4 instances, float64, relative tolerance 1e-4
        w = LossWeights(1.0, 1.0)
        h = 1e-6
        for seed in range(20):
            logits, target = self._random_instance(seed + 100)
            logits = logits.clone().requires_grad_(True)
            loss = combined_loss(logits, target, w)
            loss.backward()
            analytic = logits.grad.detach().clone()
            flat = logits.detach().clone().reshape(-1)
            idx = torch.randperm(flat.numel(), generator=torch.Generator().manual_seed(seed))[:10]
            for i in idx.tolist():
                base = flat[i].item()
                flat[i] = base + h
                up = float(combined_loss(flat.reshape(logits.shape), target, w))
                flat[i] = base - h
                down = float(combined_loss(flat.reshape(logits.shape), target, w))
                flat[i] = base
                numeric = (up - down) / (2 * h)
                ref = analytic.reshape(-1)[i].item()
                scale = max(abs(ref), abs(numeric), 1e-8)
                assert abs(numeric - ref) / scale < 1e-4

    def test_weights_validation(self):
        with pytest.raises(ShapeError):
            LossWeights(0.0, 0.0)
        with pytest.raises(ShapeError):
            LossWeights(-1.0, 2.0)

    def test_nonnegative(self):
        for seed in range(5):
            logits, target = self._random_instance(seed + 50)
            assert float(combined_loss(logits, target, LossWeights(1.0, 1.0))) >= 0.0
