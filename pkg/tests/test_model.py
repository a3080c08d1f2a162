import numpy as np
import pytest

from src.errors import ArgumentError, ShapeError
from src.model import (DecoderBlockParams, PositionalEncodings, decoder_block, patchify, pool,
                       pool_matrix, s4_branch, tokenize)
from src.model.network import Backbone, ModelDims, S5Classifier
from src.selection import SelectionOptions
from src.tensor import Rng, Tensor, constants, finite_diff_check
from src.tensor import ops

DIMS = ModelDims(width=8, state_dim=4, strides=(2, 2), patch=4, frame_height=8, frame_width=8,
                 frames=4, classes=2)


def _frames(batch: int = 2, seed: int = 0) -> np.ndarray:
    return Rng(seed).normal((batch, DIMS.frames, DIMS.frame_height, DIMS.frame_width, 3))


class TestTokenizer:
    def test_patch_order(self):
        frames = np.arange(16.0).reshape(1, 4, 4, 1)
        patches = patchify(frames, 2)
        assert patches.shape == (4, 4)
        np.testing.assert_array_equal(patches[0], [0, 1, 4, 5])
        np.testing.assert_array_equal(patches[1], [2, 3, 6, 7])
        np.testing.assert_array_equal(patches[2], [8, 9, 12, 13])

    def test_patch_must_divide(self):
        with pytest.raises(ShapeError):
            patchify(np.zeros((1, 5, 4, 3)), 2)

    def test_token_grid_layout(self):
        table = Backbone(DIMS).init_arrays(Rng(0))
        bound = constants(table)
        grid = tokenize(_frames(), DIMS.patch, bound, PositionalEncodings.from_bound(bound))
        assert grid.tokens.dims == (2, DIMS.tokens, DIMS.width)
        assert (grid.S, grid.T) == (DIMS.patches, DIMS.frames)
        assert grid.coords(grid.index(3, 1)) == (3, 1)

    def test_short_clip_uses_leading_temporal_rows(self):
        enc = PositionalEncodings(Tensor(np.zeros((2, 3))), Tensor(np.arange(12.0).reshape(4, 3)))
        table = enc.table(2, 2)
        np.testing.assert_array_equal(table.data[2], [3.0, 4.0, 5.0])
        with pytest.raises(ShapeError):
            enc.table(2, 5)


class TestPooling:
    def test_tail_group_averages_its_size(self):
        np.testing.assert_allclose(pool_matrix(5, 2), [
            [0.5, 0.5, 0, 0, 0],
            [0, 0, 0.5, 0.5, 0],
            [0, 0, 0, 0, 1.0],
        ])

    def test_stride_one_is_identity(self):
        x = Tensor(np.ones((3, 2)))
        assert pool(x, 1) is x

    def test_invalid_stride(self):
        with pytest.raises(ArgumentError):
            pool_matrix(4, 0)


class TestDecoderBlock:
    def test_halves_length_and_width(self):
        arrays = DecoderBlockParams.init(Rng(0), 8, 4)
        block = DecoderBlockParams.from_bound(constants(arrays), "")
        out = decoder_block(block, Tensor(Rng(1).normal((2, 6, 8))))
        assert out.dims == (2, 3, 4)

    def test_odd_width_rejected(self):
        with pytest.raises(ShapeError):
            DecoderBlockParams.init(Rng(0), 7, 4)

    def test_width_mismatch(self):
        block = DecoderBlockParams.from_bound(constants(DecoderBlockParams.init(Rng(0), 8, 4)), "")
        with pytest.raises(ShapeError):
            decoder_block(block, Tensor(np.ones((4, 6))))

    def test_dropout_only_in_training(self):
        block = DecoderBlockParams.from_bound(constants(DecoderBlockParams.init(Rng(0), 8, 4)), "")
        x = Tensor(Rng(1).normal((6, 8)))
        a = decoder_block(block, x, Rng(2), train=False).data
        b = decoder_block(block, x, Rng(3), train=False).data
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, decoder_block(block, x, Rng(2), train=True).data)


class TestModelDims:
    def test_width_must_halve_through_blocks(self):
        with pytest.raises(ShapeError):
            ModelDims(width=12, strides=(2, 2, 2))

    def test_derived_extents(self):
        assert DIMS.patches == 4
        assert DIMS.tokens == 16
        assert DIMS.patch_dim == 48
        assert DIMS.feature_width == 2


class TestClassifier:
    def test_forward_keeps_k_tokens(self):
        model = S5Classifier(DIMS, SelectionOptions(eta=0.5))
        table = model.init_params(Rng(0))
        result = model.forward(constants(table), _frames(), Rng(1))
        assert result.logits.dims == (2, DIMS.classes)
        assert result.selection.K == 8
        assert result.selection.indices.shape == (2, 8)
        assert result.features.dims == (2, DIMS.feature_width)

    def test_shadow_starts_as_block_zero(self):
        model = S5Classifier(DIMS)
        table = model.init_params(Rng(0))
        for main, shadow in model.shadow.pairs():
            np.testing.assert_array_equal(table[main], table[shadow])

    def test_trainable_names(self):
        learned = S5Classifier(DIMS)
        table = learned.init_params(Rng(0))
        names = learned.trainable(table)
        assert "mask_gen.weight" in names
        assert not any(n.startswith("shadow.") for n in names)
        random = S5Classifier(DIMS, SelectionOptions(selection="random"))
        assert "mask_gen.weight" not in random.trainable(table)

    def test_full_model_gradient_without_masking(self):
        model = S5Classifier(DIMS, SelectionOptions(eta=0.0, selection="none"))
        table = model.init_params(Rng(0))
        frames = _frames(seed=5)
        labels = np.array([0, 1])
        bound = constants(table)

        def loss_for(name):
            def f(x):
                logits = model.forward({**bound, name: x}, frames).logits
                return ops.cross_entropy(logits, labels)
            return f

        coords = [(i, j) for i in range(0, 48, 7) for j in range(0, 8, 3)]
        assert finite_diff_check(loss_for("embed.weight"), Tensor(table["embed.weight"]),
                                 coords=coords) < 1e-4
        for name in ("blocks.0.s4.log_delta", "blocks.1.s4.C", "blocks.1.mlp.bias", "head.weight"):
            assert finite_diff_check(loss_for(name), Tensor(table[name])) < 1e-4, name


class TestBlockDataflow:
    def _block(self, *zeroed):
        arrays = DecoderBlockParams.init(Rng(0), 8, 4)
        for name in zeroed:
            arrays[name] = np.zeros_like(arrays[name])
        return DecoderBlockParams.from_bound(constants(arrays), ""), arrays

    def test_zero_mlp_leaves_pooled_skip(self):
        block, arrays = self._block("mlp.weight", "mlp.bias")
        x = Rng(1).normal((2, 6, 8))
        out = decoder_block(block, Tensor(x)).data
        pooled = pool_matrix(6, 2) @ x
        np.testing.assert_allclose(out, pooled @ arrays["skip.weight"] + arrays["skip.bias"],
                                   rtol=1e-12, atol=1e-14)

    def test_zero_skip_leaves_s4_branch(self):
        block, arrays = self._block("skip.weight", "skip.bias")
        x = Tensor(Rng(2).normal((6, 8)))
        out = decoder_block(block, x).data
        x_s4 = s4_branch(block.ln_gamma, block.ln_beta, block.s4, x)
        hidden = ops.gelu(ops.matmul(pool(x_s4, 2), ops.constant(arrays["mlp.weight"])))
        np.testing.assert_allclose(out, hidden.data, rtol=1e-12, atol=1e-14)


class TestBackbone:
    def test_eval_is_deterministic(self):
        backbone = Backbone(DIMS)
        bound = constants(backbone.init_arrays(Rng(0)))
        grid = backbone.tokens(bound, _frames())
        a = backbone.forward(bound, grid, Rng(1), train=False).data
        b = backbone.forward(bound, grid, Rng(2), train=False).data
        np.testing.assert_array_equal(a, b)
        assert a.shape == (2, DIMS.feature_width)

    def test_token_order_matters(self):
        backbone = Backbone(DIMS)
        bound = constants(backbone.init_arrays(Rng(0)))
        tokens = backbone.tokens(bound, _frames()).tokens.data
        forward = backbone.forward(bound, Tensor(tokens)).data
        reversed_order = backbone.forward(bound, Tensor(tokens[:, ::-1].copy())).data
        assert np.max(np.abs(forward - reversed_order)) > 1e-8
