import pytest

from config.config import TrainConfig, build_config, load_config, parse_config_text
from src.errors import ConfigError

from .conftest import tiny_config


class TestDefaults:
    def test_learning_rates_follow_batch_size(self):
        cfg = load_config()
        assert cfg.lr == pytest.approx(1e-3)
        assert cfg.pretrain_lr == pytest.approx(1e-4 * 16 / 256)
        assert build_config({"batch_size": 32}).lr == pytest.approx(2e-3)

    def test_explicit_lr_wins(self):
        assert build_config({"batch_size": 32, "lr": 5e-4}).lr == 5e-4

    def test_derived_properties(self):
        cfg = load_config()
        assert cfg.stride_list == [2, 2, 2]
        assert cfg.blocks == 3
        assert cfg.model_frames == 12
        assert cfg.tokens == 16 * 12
        assert build_config({"input_frames": 6}).tokens == 16 * 6

    def test_task_spec(self):
        spec = tiny_config().task_spec()
        assert (spec.classes, spec.frames, spec.patch, spec.tokens) == (2, 4, 4, 16)


class TestValidation:
    @pytest.mark.parametrize("changes", [
        {"eta": 1.0},
        {"tau_short": 3, "tau_long": 2},
        {"d_emb": 12},
        {"patch": 5},
        {"selection": "greedy"},
        {"strides": "2,x"},
        {"input_frames": 13},
        {"clip_frames": 5},
        {"plateau_factor": 1.5},
        {"ablate_tau_pairs": "3-1"},
    ])
    def test_rejected(self, changes):
        with pytest.raises(ConfigError):
            build_config(changes)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            build_config({"learning_rate": 0.1})

    def test_bad_type(self):
        with pytest.raises(ConfigError, match="epochs"):
            build_config({"epochs": "many"})

    def test_errors_gathered(self):
        with pytest.raises(ConfigError) as info:
            build_config({"eta": 1.0, "batch_size": 0})
        assert "eta" in str(info.value)
        assert "batch_size" in str(info.value)

    def test_exit_code(self):
        assert ConfigError.exit_code == 2


class TestConfigFiles:
    def test_comments_and_spacing(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("# tiny run\nseed = 7\n\neta=0.25  # fewer tokens dropped\nSTRIDES = 2,2\n")
        cfg = load_config(path)
        assert cfg.seed == 7
        assert cfg.eta == 0.25
        assert cfg.stride_list == [2, 2]

    def test_overrides_after_file(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("seed = 7\n")
        assert load_config(path, seed=9).seed == 9

    def test_key_without_value(self):
        with pytest.raises(ConfigError, match="seed"):
            parse_config_text("seed\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.conf")

    def test_echo_round_trip(self):
        cfg = tiny_config(eta=0.3, input_frames=3, deterministic_topk=True)
        again = parse_config_text(cfg.to_text())
        assert again.model_dump() == cfg.model_dump()
        assert "pretrained_checkpoint" not in cfg.to_text()

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("S5_EPOCHS", "7")
        assert load_config().epochs == 7


class TestReplace:
    def test_derived_lr_follows_new_batch(self):
        cfg = load_config()
        assert cfg.replace(batch_size=32).lr == pytest.approx(2e-3)

    def test_explicit_lr_kept(self):
        cfg = build_config({"lr": 5e-4})
        assert cfg.replace(batch_size=32).lr == 5e-4

    def test_revalidates(self):
        with pytest.raises(ConfigError):
            load_config().replace(eta=1.0)

    def test_returns_new_object(self):
        cfg = load_config()
        other = cfg.replace(seed=3)
        assert isinstance(other, TrainConfig)
        assert cfg.seed == 0 and other.seed == 3
