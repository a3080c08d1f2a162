from dataclasses import asdict

import numpy as np
import pandas as pd
import pytest

from config.config import build_config
from src.data import BinaryReader, generate_task
from src.errors import ArgumentError, CheckpointError, ConfigError, DataError, FormatError, ShapeError
from src.s4 import SsmLayerParams, kernel_rows
from src.tensor import ParameterTable, constants
from src.training import (LR_FLOOR, AdamW, Checkpoint, MetricsLog, MetricsRow, PlateauScheduler,
                          Pretrainer, Trainer, WarmupSchedule, ablation_cells, adamw_step,
                          decode_checkpoint, encode_checkpoint, inspect_kernel, inspect_mask,
                          load_checkpoint, plateau_scheduler, read_metrics, run_ablation,
                          run_bench, save_checkpoint)
from src.training.metrics import load_metrics_log
from src.training.pretrainer import PRETRAIN_CHECKPOINT
from src.training.trainer import CHECKPOINT_NAME, METRICS_NAME


class TestAdamW:
    def test_single_step(self):
        theta, m, v = adamw_step(np.array([1.0]), np.array([1.0]), np.zeros(1), np.zeros(1),
                                 1, 0.1, weight_decay=0.01)
        assert theta[0] == pytest.approx(0.899, abs=1e-7)
        assert m[0] == pytest.approx(0.1)
        assert v[0] == pytest.approx(0.001)

    def test_zero_gradient_without_decay(self):
        theta, _, _ = adamw_step(np.array([2.5]), np.zeros(1), np.zeros(1), np.zeros(1), 1, 0.1)
        assert theta[0] == 2.5

    def test_pure_decay(self):
        theta, _, _ = adamw_step(np.array([2.0]), np.zeros(1), np.zeros(1), np.zeros(1), 1, 0.1,
                                 weight_decay=0.5)
        assert theta[0] == pytest.approx(2.0 * (1 - 0.1 * 0.5))

    def test_no_decay_matches_adam(self, rng):
        theta = rng.normal((5,))
        ref, m_ref, v_ref = theta.copy(), np.zeros(5), np.zeros(5)
        m, v = np.zeros(5), np.zeros(5)
        for step in range(1, 101):
            grad = 2.0 * theta - 1.0
            theta, m, v = adamw_step(theta, grad, m, v, step, 0.01)
            g = 2.0 * ref - 1.0
            m_ref = 0.9 * m_ref + (1 - 0.9) * g
            v_ref = 0.999 * v_ref + (1 - 0.999) * g * g
            ref = ref - 0.01 * (m_ref / (1 - 0.9 ** step)) / (np.sqrt(v_ref / (1 - 0.999 ** step)) + 1e-8)
        np.testing.assert_allclose(theta, ref, rtol=1e-12, atol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adamw_step(np.ones(2), np.ones(3), np.zeros(2), np.zeros(2), 1, 0.1)

    def test_step_starts_at_one(self):
        with pytest.raises(ArgumentError):
            adamw_step(np.ones(2), np.ones(2), np.zeros(2), np.zeros(2), 0, 0.1)

    def test_state_round_trip(self):
        table = ParameterTable({"b": np.ones(2), "a": np.ones(3)})
        optimizer = AdamW(0.1)
        optimizer.step(table, {"a": np.ones(3), "b": np.ones(2)})
        state = optimizer.state_table()
        assert list(state) == ["m.a", "v.a", "m.b", "v.b"]

        restored = AdamW(0.1)
        restored.load_state(state, optimizer.step_count, table)
        assert restored.step_count == 1
        np.testing.assert_array_equal(restored.v["b"], optimizer.v["b"])

    def test_state_for_unknown_parameter(self):
        state = ParameterTable({"m.missing": np.zeros(1)})
        with pytest.raises(CheckpointError):
            AdamW(0.1).load_state(state, 1, ParameterTable({"a": np.zeros(1)}))


class TestSchedules:
    def test_plateau_reduces(self):
        assert plateau_scheduler([1.0, 1.0], 1e-3) == pytest.approx(2e-4)
        assert plateau_scheduler([1.0, 1.2], 1e-3) == pytest.approx(2e-4)

    def test_improvement_keeps_lr(self):
        assert plateau_scheduler([1.0, 0.9], 1e-3) == 1e-3
        assert plateau_scheduler([1.0], 1e-3) == 1e-3

    def test_patience_window(self):
        assert plateau_scheduler([1.0, 0.8, 0.9], 1e-3, patience=2) == pytest.approx(2e-4)
        assert plateau_scheduler([1.0, 0.9, 0.85], 1e-3, patience=2) == 1e-3

    def test_floor(self):
        scheduler = PlateauScheduler(1e-3)
        for _ in range(20):
            scheduler.step(1.0)
        assert scheduler.lr == LR_FLOOR

    @pytest.mark.parametrize("factor,patience", [(1.0, 1), (0.0, 1), (0.2, 0)])
    def test_invalid(self, factor, patience):
        with pytest.raises(ArgumentError):
            plateau_scheduler([1.0, 1.0], 1e-3, factor, patience)

    def test_warmup(self):
        schedule = WarmupSchedule(1e-3, 300)
        assert schedule.warmup_epochs == 39
        assert schedule.lr_at(0) == pytest.approx(1e-3 / 39)
        assert schedule.lr_at(19) == pytest.approx(20e-3 / 39)
        assert schedule.lr_at(39) == 1e-3
        assert WarmupSchedule(1e-3, 3).lr_at(0) == 1e-3


class TestCheckpoint:
    def _checkpoint(self):
        params = ParameterTable({"blocks.0.s4.A": np.arange(4.0).reshape(2, 2),
                                 "head.bias": np.array([0.5])})
        optimizer = ParameterTable({"m.head.bias": np.array([0.1]), "v.head.bias": np.array([0.2])})
        return Checkpoint("classifier", "seed = 3\n", params, optimizer, 7, 2, 2e-4, [1.5, 1.25])

    def test_bytes_round_trip(self):
        ckpt = self._checkpoint()
        data = encode_checkpoint(ckpt)
        decoded = decode_checkpoint(BinaryReader(data))
        assert decoded.params.equals(ckpt.params)
        assert decoded.optimizer.equals(ckpt.optimizer)
        assert (decoded.optimizer_step, decoded.epoch, decoded.lr) == (7, 2, 2e-4)
        assert decoded.history == [1.5, 1.25]
        assert decoded.config_text == "seed = 3\n"
        assert encode_checkpoint(decoded) == data

    def test_wrong_kind(self, tmp_path):
        path = tmp_path / "c.s5ck"
        save_checkpoint(self._checkpoint(), path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, kind="pretrain")

    def test_bad_magic(self):
        data = encode_checkpoint(self._checkpoint())
        with pytest.raises(FormatError):
            decode_checkpoint(BinaryReader(b"S5DS" + data[4:]))

    def test_truncated(self):
        data = encode_checkpoint(self._checkpoint())
        with pytest.raises(FormatError):
            decode_checkpoint(BinaryReader(data[:-3]))

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.s5ck")

    def test_unknown_kind(self):
        with pytest.raises(CheckpointError):
            Checkpoint("decoder", "", ParameterTable())


class TestMetrics:
    def test_duplicate_row(self):
        log = MetricsLog()
        log.append(MetricsRow(1, "train", 0.5, 0.5, 0.5, 8))
        with pytest.raises(DataError):
            log.append(MetricsRow(1, "train", 0.4, 0.5, 0.5, 8))

    def test_file_round_trip(self, tmp_path):
        log = MetricsLog(tmp_path / "m.csv")
        log.append(MetricsRow(1, "train", 1 / 3, 0.25, 0.75, 8, 0.0, 1024))
        log.append(MetricsRow(1, "val", 0.1, 0.5, 0.5, 8))
        log.flush()
        loaded = load_metrics_log(tmp_path / "m.csv")
        assert [asdict(r) for r in loaded.rows] == [asdict(r) for r in log.rows]

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("epoch,split\n1,train\n")
        with pytest.raises(DataError):
            read_metrics(path)


class TestTrainer:
    def test_fit_writes_metrics_and_checkpoint(self, config, dataset, tmp_path):
        out = tmp_path / "run"
        metrics = Trainer(config, dataset, out).fit().frame()
        assert list(metrics["split"]) == ["train", "val", "train", "val", "test"]
        assert (metrics["kept_tokens"] == 8).all()
        assert np.isfinite(metrics["loss"]).all()
        assert ((metrics["recall"] >= 0) & (metrics["recall"] <= 1)).all()
        assert (out / CHECKPOINT_NAME).is_file()
        ckpt = load_checkpoint(out / CHECKPOINT_NAME, kind="classifier")
        assert ckpt.epoch == 2
        assert len(ckpt.history) == 2

    def test_same_seed_same_metrics_file(self, config, dataset, tmp_path):
        Trainer(config, dataset, tmp_path / "a").fit()
        Trainer(config, dataset, tmp_path / "b").fit()
        assert (tmp_path / "a" / METRICS_NAME).read_bytes() == (tmp_path / "b" / METRICS_NAME).read_bytes()

    def test_resume_matches_uninterrupted_run(self, make_config, dataset, tmp_path):
        Trainer(make_config(epochs=2), dataset, tmp_path / "full").fit()
        Trainer(make_config(epochs=1), dataset, tmp_path / "split").fit()
        Trainer(make_config(epochs=2), dataset, tmp_path / "split").fit(resume=True)
        full = (tmp_path / "full" / METRICS_NAME).read_bytes()
        assert (tmp_path / "split" / METRICS_NAME).read_bytes() == full
        a = load_checkpoint(tmp_path / "full" / CHECKPOINT_NAME)
        b = load_checkpoint(tmp_path / "split" / CHECKPOINT_NAME)
        assert a.params.equals(b.params)

    def test_threaded_eval_matches_serial(self, make_config, dataset):
        serial = Trainer(make_config(workers=0), dataset).evaluate("val")
        threaded = Trainer(make_config(workers=2), dataset).evaluate("val")
        assert asdict(serial) == asdict(threaded)

    def test_from_checkpoint_restores_state(self, config, dataset, tmp_path):
        trainer = Trainer(config, dataset, tmp_path / "run")
        trainer.fit()
        restored = Trainer.from_checkpoint(tmp_path / "run" / CHECKPOINT_NAME, dataset)
        assert restored.table.equals(trainer.table)
        assert restored.epoch == 2
        assert asdict(restored.evaluate("test")) == asdict(trainer.evaluate("test"))

    def test_from_checkpoint_applies_overrides(self, config, dataset, tmp_path):
        trainer = Trainer(config, dataset, tmp_path / "run")
        trainer.fit()
        path = tmp_path / "run" / CHECKPOINT_NAME
        restored = Trainer.from_checkpoint(path, dataset, seed=5, deterministic_topk=True)
        assert restored.config.seed == 5
        assert restored.eval_options().deterministic_topk
        assert restored.table.equals(trainer.table)
        assert not Trainer.from_checkpoint(path, dataset).eval_options().deterministic_topk

    def test_restore_rejects_other_model(self, config, make_config, dataset):
        ckpt = Trainer(config, dataset).checkpoint()
        other = Trainer(make_config(d_emb=16), dataset)
        with pytest.raises(CheckpointError):
            other.restore(ckpt)

    def test_short_clips(self, make_config, dataset):
        trainer = Trainer(make_config(input_frames=2, clip_frames=1, tau_long=1), dataset)
        row = trainer.train_epoch(1)
        assert row.kept_tokens == 4


class TestPretraining:
    def test_pretrain_then_fine_tune(self, config, dataset, tmp_path):
        out = tmp_path / "pre"
        frame = Pretrainer(config, dataset, out).fit()
        assert list(frame["epoch"]) == [1]
        assert np.isfinite(frame["loss"]).all()
        ckpt = load_checkpoint(out / PRETRAIN_CHECKPOINT, kind="pretrain")

        trainer = Trainer(config.replace(pretrained_checkpoint=str(out / PRETRAIN_CHECKPOINT)),
                          dataset)
        np.testing.assert_array_equal(trainer.table["embed.weight"], ckpt.params["query.embed.weight"])
        np.testing.assert_array_equal(trainer.table["shadow.s4.B"], trainer.table["blocks.0.s4.B"])

    def test_classifier_checkpoint_is_not_pretrained_weights(self, config, dataset, tmp_path):
        Trainer(config, dataset, tmp_path / "run").fit()
        with pytest.raises(CheckpointError):
            Trainer(config.replace(pretrained_checkpoint=str(tmp_path / "run" / CHECKPOINT_NAME)),
                    dataset)


class TestBenchAndAblation:
    def test_bench_halves_s5_activations(self, config, dataset, tmp_path):
        frame = run_bench(config, dataset, tmp_path)
        assert list(frame["kept_tokens"]) == [16, 8]
        assert frame["s5_bytes_ratio"].iloc[0] == 1.0
        assert frame["s5_bytes_ratio"].iloc[1] < 1.0
        assert (tmp_path / "bench.csv").is_file()

    def test_cells(self, make_config):
        cfg = make_config(ablate_axes="eta,frames,lsmcl,selection", ablate_frames="4,2",
                          ablate_seeds="0,1")
        cells = ablation_cells(cfg)
        assert len(cells) == 2 * (5 + 2 + 2 + 3)
        frames_cell = next(c for c in cells if c.axis == "frames" and c.value == "2")
        assert frames_cell.changes == {"input_frames": 2, "clip_frames": 2}
        assert [c.pretrain for c in cells if c.axis == "lsmcl"][:2] == [False, True]

    def test_unknown_axis(self, make_config):
        with pytest.raises(ConfigError):
            ablation_cells(make_config(ablate_axes="eta,depth"))

    def test_eta_grid(self, make_config, dataset, tmp_path):
        cfg = make_config(epochs=1, ablate_axes="eta")
        frame = run_ablation(cfg, dataset, tmp_path)
        assert len(frame) == 5
        assert list(frame["kept_tokens"]) == [16, 13, 8, 3, 2]
        written = pd.read_csv(tmp_path / "ablation.csv")
        assert len(written) == 5


class TestInspection:
    def test_kernel_rows(self, config, dataset, tmp_path):
        trainer = Trainer(config, dataset)
        frame = inspect_kernel(trainer.table, config.blocks, 1, 5, tmp_path / "kernel.csv")
        assert len(frame) == 4
        assert list(frame.columns) == ["channel", "k0", "k1", "k2", "k3", "k4"]
        params = SsmLayerParams.from_bound(constants(trainer.table), "blocks.1.s4.")
        np.testing.assert_array_equal(frame.iloc[:, 1:].to_numpy(), kernel_rows(params, 5))
        written = pd.read_csv(tmp_path / "kernel.csv")
        assert written.shape == (4, 6)

    def test_first_layer_has_full_width(self, config, dataset):
        frame = inspect_kernel(Trainer(config, dataset).table, config.blocks, 0, 3)
        assert frame["channel"].tolist() == list(range(config.d_emb))

    @pytest.mark.parametrize("layer,length", [(0, 0), (2, 4), (-1, 4)])
    def test_kernel_arguments(self, config, dataset, layer, length):
        with pytest.raises(ArgumentError):
            inspect_kernel(Trainer(config, dataset).table, config.blocks, layer, length)

    def test_mask_rows(self, config, dataset, tmp_path):
        trainer = Trainer(config, dataset)
        frame = inspect_mask(trainer, "test", 2, tmp_path / "mask.csv")
        assert len(frame) == 2 * 16
        assert frame.groupby("sample")["kept"].sum().tolist() == [8, 8]
        np.testing.assert_allclose(frame.groupby("sample")["prob"].sum(), [1.0, 1.0])
        assert (tmp_path / "mask.csv").is_file()


DESK = {
    "frames": 12,
    "frame_height": 32,
    "frame_width": 32,
    "patch": 8,
    "planted_count": 16,
    "classes": 4,
    "train_size": 320,
    "val_size": 80,
    "test_size": 160,
    "epochs": 8,
    "pretrain_epochs": 6,
    "workers": 0,
}


@pytest.fixture
def desk(tmp_path):
    """Sparse task at full token count (192 tokens, 16 planted) with a short schedule."""
    cfg = build_config(dict(DESK, out_dir=str(tmp_path / "runs"),
                            log_file=str(tmp_path / "s5.log")), "<desk>")
    return cfg, generate_task(cfg.task_spec(), 0)


def _cells(frame: pd.DataFrame, axis: str) -> pd.DataFrame:
    return frame[frame["axis"] == axis].groupby("value")[["test_accuracy", "test_recall"]].mean()


@pytest.mark.slow
class TestDeskScale:
    def test_selection_shrinks_block_activations(self, desk, tmp_path):
        cfg, dataset = desk
        frame = run_bench(cfg.replace(bench_steps=3), dataset, tmp_path)
        assert list(frame["kept_tokens"]) == [192, 96]
        assert frame["s5_bytes_ratio"].iloc[1] <= 0.6
        # wall-clock, so allow a little jitter around "not slower"
        assert frame["tokens_per_sec"].iloc[1] >= 0.95 * frame["tokens_per_sec"].iloc[0]

    def test_learned_selection_beats_random(self, desk, tmp_path):
        cfg, dataset = desk
        frame = run_ablation(cfg.replace(ablate_axes="selection",
                                         ablate_selections="learned,random"), dataset, tmp_path)
        cells = _cells(frame, "selection")
        assert cells.loc["random", "test_recall"] == pytest.approx(0.5, abs=0.05)
        assert cells.loc["learned", "test_recall"] >= 1.5 * cells.loc["random", "test_recall"]
        assert cells.loc["learned", "test_accuracy"] >= cells.loc["random", "test_accuracy"] + 0.05

    def test_half_masking_keeps_accuracy(self, desk, tmp_path):
        cfg, dataset = desk
        frame = run_ablation(cfg.replace(ablate_axes="eta", ablate_etas="0,0.5,0.9"),
                             dataset, tmp_path)
        cells = _cells(frame, "eta")
        assert cells.loc["0.5", "test_accuracy"] >= cells.loc["0.9", "test_accuracy"]
        assert abs(cells.loc["0.5", "test_accuracy"] - cells.loc["0", "test_accuracy"]) <= 0.03

    def test_pretraining_helps_fine_tuning(self, desk, tmp_path):
        cfg, dataset = desk
        frame = run_ablation(cfg.replace(ablate_axes="lsmcl", ablate_seeds="0,1,2",
                                         tau_long=3, tau_short=2), dataset, tmp_path)
        cells = _cells(frame, "lsmcl")
        assert cells.loc["lsmcl", "test_accuracy"] >= cells.loc["scratch", "test_accuracy"]

        def epochs_to(value: str, seed: int, target: float) -> int:
            metrics = read_metrics(tmp_path / f"lsmcl_{value}_s{seed}" / METRICS_NAME)
            val = metrics[metrics["split"] == "val"]
            reached = val[val["accuracy"] >= target]
            return int(reached["epoch"].iloc[0]) if len(reached) else cfg.epochs + 1

        for seed in (0, 1, 2):
            scratch = read_metrics(tmp_path / f"lsmcl_scratch_s{seed}" / METRICS_NAME)
            target = scratch[scratch["split"] == "val"]["accuracy"].iloc[-1]
            assert epochs_to("lsmcl", seed, target) <= epochs_to("scratch", seed, target)
