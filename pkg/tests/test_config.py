import pytest

from f3net.config import apply_overrides, build_run_config, preset, read_config_file
from f3net.errors import LayoutError, ShapeError


class TestPresets:
    def test_desk_preset(self):
        run = preset("desk")
        assert run.train.patch_shape == (32, 32, 32)
        assert run.network.num_stages == 3
        assert run.network.base_channels == 8
        assert run.train.max_epochs == 2
        assert run.predict.patch_shape == (32, 32, 32)

    def test_paper_preset(self):
        run = preset("paper")
        assert run.train.patch_shape == (80, 112, 80)
        assert run.train.max_epochs == 1000
        assert run.train.steps_per_epoch == 250
        assert run.train.momentum == 0.95
        assert run.train.weight_decay == 3e-5
        assert run.train.initial_lr == 0.01
        assert run.train.poly_power == 0.9
        assert run.train.batch_size == 2
        assert run.network.base_channels == 32

    def test_paper_patch_divisible(self):
        run = preset("paper")
        d = run.network.divisor
        assert all(n % d == 0 for n in run.train.patch_shape)

    def test_unknown_preset(self):
        with pytest.raises(ShapeError):
            preset("huge")


class TestConfigFile:
    def test_file_overrides_preset(self, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text(
            """
[network]
num_stages = 2
base_channels = 4

[train]
patch_shape = 16,16,16
initial_lr = 0.02
lambda1 = 2.0
lambda2 = 0.5
augment = false

[predict]
patch_shape = 16
window_overlap = 0.25
"""
        )
        run = build_run_config("desk", cfg)
        assert run.network.num_stages == 2
        assert run.train.patch_shape == (16, 16, 16)
        assert run.train.initial_lr == 0.02
        assert run.train.loss_weights.lambda1 == 2.0
        assert run.train.loss_weights.lambda2 == 0.5
        assert run.train.augment is False
        assert run.predict.patch_shape == (16, 16, 16)
        assert run.predict.window_overlap == 0.25
        # untouched fields keep preset values
        assert run.train.max_epochs == 2

    def test_cli_overrides_beat_file(self, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[train]\ninitial_lr = 0.02\n")
        run = build_run_config("desk", cfg, {"train": {"initial_lr": "0.5"}})
        assert run.train.initial_lr == 0.5

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[train]\nlearning_rate_typo = 1\n")
        with pytest.raises(ShapeError):
            build_run_config("desk", cfg)

    def test_unknown_section_rejected(self):
        with pytest.raises(ShapeError):
            build_run_config("desk", None, {"optimizer": {"lr": "1"}})

    def test_missing_file(self, tmp_path):
        with pytest.raises(LayoutError):
            read_config_file(tmp_path / "absent.ini")

    def test_mask_scope_propagates_to_network(self):
        run = build_run_config("desk", None, {"train": {"mask_scope": "deepest_only"}})
        assert run.network.mask_scope == "deepest_only"
