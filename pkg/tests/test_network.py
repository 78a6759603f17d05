import numpy as np
import pytest
import torch

from f3net.errors import ShapeError
from f3net.losses import LossWeights, combined_loss
from f3net.network import (
    F3NetModel,
    NetworkSpec,
    fuse,
    load_checkpoint,
    mask_features,
    save_checkpoint,
)
from f3net.volumes import Modality, ModalityPresence

TINY = NetworkSpec(num_stages=3, base_channels=4)


def tiny_model(seed=0, spec=TINY):
    torch.manual_seed(seed)
    return F3NetModel(spec)


def random_input(seed, shape=(16, 16, 16), batch=None):
    g = torch.Generator().manual_seed(seed)
    if batch is None:
        return torch.randn((6,) + shape, generator=g)
    return torch.randn((batch, 6) + shape, generator=g)


class TestSpec:
    def test_default_channels_double(self):
        spec = NetworkSpec(num_stages=4, base_channels=16)
        assert spec.channels_per_stage == (16, 32, 64, 128)

    def test_channel_cap(self):
        spec = NetworkSpec(num_stages=6, base_channels=32, max_channels=320)
        assert spec.channels_per_stage == (32, 64, 128, 256, 320, 320)

    def test_invalid_specs(self):
        with pytest.raises(ShapeError):
            NetworkSpec(num_stages=1)
        with pytest.raises(ShapeError):
            NetworkSpec(mask_scope="sometimes")

    def test_roundtrip_dict(self):
        spec = NetworkSpec(num_stages=3, base_channels=8, num_classes=3)
        assert NetworkSpec.from_dict(spec.to_dict()) == spec


class TestEncode:
    def test_stage_shapes_and_channels(self):
        spec = NetworkSpec(num_stages=4, base_channels=16)
        torch.manual_seed(0)
        model = F3NetModel(spec)
        x = torch.randn(1, 1, 80, 112, 80)
        features = model.encode(x, Modality.T1)
        shapes = [tuple(f.shape) for f in features]
        assert shapes == [
            (1, 16, 80, 112, 80),
            (1, 32, 40, 56, 40),
            (1, 64, 20, 28, 20),
            (1, 128, 10, 14, 10),
        ]

    def test_indivisible_patch_rejected(self):
        model = tiny_model()
        with pytest.raises(ShapeError):
            model.encode(torch.zeros(1, 1, 30, 30, 30), Modality.T1)

    def test_zero_input_features_deterministic(self):
        model = tiny_model()
        a = model.encode(torch.zeros(1, 1, 8, 8, 8), Modality.T2)
        b = model.encode(torch.zeros(1, 1, 8, 8, 8), Modality.T2)
        for fa, fb in zip(a, b):
            assert torch.equal(fa, fb)


class TestMaskFeatures:
    def test_present_is_identity(self):
        model = tiny_model()
        feats = model.encode(random_input(1)[:1].unsqueeze(0), Modality.T1)
        gated = mask_features(feats, torch.ones(1))
        for f, g in zip(feats, gated):
            assert torch.equal(f, g)

    def test_absent_is_exact_zero_all_stages(self):
        model = tiny_model()
        feats = model.encode(random_input(2)[:1].unsqueeze(0), Modality.T1)
        gated = mask_features(feats, torch.zeros(1))
        for g in gated:
            assert not g.abs().any()

    def test_deepest_only_scope(self):
        model = tiny_model()
        feats = model.encode(random_input(3)[:1].unsqueeze(0), Modality.T1)
        gated = mask_features(feats, torch.zeros(1), scope="deepest_only")
        for f, g in zip(feats[:-1], gated[:-1]):
            assert torch.equal(f, g)
        assert not gated[-1].abs().any()


class TestFuse:
    def test_additive_identity(self):
        model = tiny_model()
        x = random_input(4)
        feats = model.encode(x[:1].unsqueeze(0), Modality.T1)
        zeros = [torch.zeros_like(f) for f in feats]
        fused = fuse([feats] + [zeros] * 5)
        for f, out in zip(feats, fused):
            assert torch.equal(f, out)

    def test_linearity(self):
        model = tiny_model()
        x = random_input(5)
        feats = model.encode(x[:1].unsqueeze(0), Modality.T1)
        zeros = [torch.zeros_like(f) for f in feats]
        fused = fuse([feats, feats] + [zeros] * 4)
        for f, out in zip(feats, fused):
            assert torch.allclose(out, 2 * f)

    def test_shape_disagreement(self):
        a = [torch.zeros(1, 4, 8, 8, 8)]
        b = [torch.zeros(1, 4, 4, 4, 4)]
        with pytest.raises(ShapeError):
            fuse([a, b])


class TestForward:
    def test_output_shape_contract(self):
        model = tiny_model()
        x = random_input(6, shape=(16, 16, 16))
        logits = model(x, ModalityPresence((True,) * 6))
        assert tuple(logits.shape) == (2, 16, 16, 16)
        xb = random_input(7, shape=(8, 8, 8), batch=3)
        logits = model(xb, torch.ones(3, 6, dtype=torch.bool))
        assert tuple(logits.shape) == (3, 2, 8, 8, 8)

    def test_deterministic_repeat(self):
        model = tiny_model()
        model.eval()
        x = random_input(8)
        pres = ModalityPresence((True, False, True, False, False, False))
        with torch.no_grad():
            a = model(x, pres)
            b = model(x, pres)
        assert torch.equal(a, b)

    def test_masked_content_invariance_exact(self):
        # replacing masked channels with arbitrary noise changes nothing
        model = tiny_model()
        model.eval()
        for seed in range(10):
            g = torch.Generator().manual_seed(seed)
            flags = torch.rand(6, generator=g) > 0.5
            if not flags.any():
                flags[0] = True
            x = random_input(seed + 100)
            noisy = x.clone()
            for m in range(6):
                if not flags[m]:
                    noisy[m] = 1e3 * torch.randn(x.shape[1:], generator=g)
            with torch.no_grad():
                a = model(x, flags)
                b = model(noisy, flags)
            assert torch.equal(a, b)

    def test_masked_content_invariance_mixed_batch(self):
        # modality present in one item, absent in another: the gated (not
        # skipped) path must still be exactly content-invariant
        model = tiny_model()
        model.eval()
        x = random_input(20, batch=2)
        flags = torch.tensor([[1, 1, 1, 1, 1, 1], [1, 0, 1, 1, 1, 1]], dtype=torch.bool)
        noisy = x.clone()
        noisy[1, 1] = torch.randn_like(noisy[1, 1]) * 100
        with torch.no_grad():
            a = model(x, flags)
            b = model(noisy, flags)
        assert torch.equal(a, b)

    def test_masked_input_gradient_zero(self):
        model = tiny_model()
        x = random_input(9).requires_grad_(True)
        flags = torch.tensor([True, True, False, True, False, True])
        logits = model(x, flags)
        target = torch.randint(0, 2, (16, 16, 16))
        loss = combined_loss(logits, target, LossWeights())
        loss.backward()
        grad = x.grad
        assert not grad[2].abs().any()
        assert not grad[4].abs().any()
        assert grad[0].abs().sum() > 0

    def test_masked_encoder_parameter_gradients_none_or_zero(self):
        model = tiny_model()
        x = random_input(10, batch=2)
        flags = torch.tensor([[1, 1, 0, 1, 0, 1], [1, 1, 0, 1, 1, 1]], dtype=torch.bool)
        logits = model(x, flags)
        target = torch.randint(0, 2, (2, 16, 16, 16))
        combined_loss(logits, target, LossWeights()).backward()
        # T2 absent batch-wide: encoder never entered the graph
        for p in model.encoder_parameters(Modality.T2):
            assert p.grad is None
        # DWI present in one item: real gradients
        dwi_grads = [p.grad for p in model.encoder_parameters(Modality.DWI)]
        assert any(g is not None and g.abs().sum() > 0 for g in dwi_grads)

    def test_parameter_independence(self):
        # perturbing a masked encoder's parameters leaves output unchanged
        model = tiny_model()
        model.eval()
        x = random_input(11)
        flags = torch.tensor([True, False, True, True, True, True])
        with torch.no_grad():
            before = model(x, flags)
            for p in model.encoder_parameters(Modality.T1GD):
                p.add_(torch.randn_like(p))
            after = model(x, flags)
            assert torch.equal(before, after)
            # and perturbing a present encoder changes it
            for p in model.encoder_parameters(Modality.T1):
                p.add_(torch.randn_like(p))
            changed = model(x, flags)
        assert not torch.equal(before, changed)

    def test_deepest_only_scope_leaks_skips(self):
        # the literal single-stage gate lets shallow skips through
        spec = NetworkSpec(num_stages=3, base_channels=4, mask_scope="deepest_only")
        torch.manual_seed(3)
        model = F3NetModel(spec)
        model.eval()
        x = random_input(12)
        noisy = x.clone()
        noisy[1] = torch.randn_like(noisy[1]) * 10
        flags = torch.tensor([True, False, True, True, True, True])
        with torch.no_grad():
            a = model(x, flags)
            b = model(noisy, flags)
        assert not torch.equal(a, b)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        model = tiny_model(seed=5)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, meta={"epoch": 3})
        restored, extra, meta = load_checkpoint(path)
        assert meta["epoch"] == 3
        assert extra == {}
        assert restored.spec == model.spec
        for (ka, va), (kb, vb) in zip(
            model.state_dict().items(), restored.state_dict().items()
        ):
            assert ka == kb
            assert torch.equal(va, vb)
        x = random_input(13)
        model.eval()
        restored.eval()
        with torch.no_grad():
            assert torch.equal(model(x, torch.ones(6, dtype=torch.bool)),
                               restored(x, torch.ones(6, dtype=torch.bool)))

    def test_key_naming_convention(self, tmp_path):
        model = tiny_model()
        keys = list(model.state_dict().keys())
        assert any(k.startswith("encoder.t1.0.") for k in keys)
        assert any(k.startswith("encoder.flair.2.") for k in keys)
        assert any(k.startswith("decoder.") for k in keys)

    def test_format_tag_checked(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        np.savez(path.with_suffix(".npz"), __format__=np.array("other"))
        import shutil

        shutil.move(path.with_suffix(".npz"), path)
        from f3net.errors import CorruptFileError

        with pytest.raises(CorruptFileError):
            load_checkpoint(path)
