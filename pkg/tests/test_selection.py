import numpy as np
import pytest
from scipy.special import logsumexp, softmax

from src.errors import ArgumentError, CheckpointError, ShapeError
from src.model import TokenGrid, decoder_block
from src.selection import (SelectionOptions, ema_update, full_selection, gumbel_topk, kept_count,
                           random_selection, recall, momentum_update, relaxed_selector,
                           s5_block_forward, select, select_tokens, st_gradient,
                           straight_through)
from src.tensor import GradTape, ParameterTable, Rng, Tensor, constants, finite_diff_check
from src.tensor import ops
from src.training.trainer import build_classifier


class TestKeptCount:
    @pytest.mark.parametrize("eta,tokens,expected", [
        (0.5, 192, 96),
        (0.0, 192, 192),
        (0.75, 16, 4),
        (0.99, 16, 1),
        (0.5, 5, 3),
    ])
    def test_values(self, eta, tokens, expected):
        assert kept_count(eta, tokens) == expected

    @pytest.mark.parametrize("eta", [1.0, -0.1])
    def test_out_of_range(self, eta):
        with pytest.raises(ArgumentError):
            kept_count(eta, 16)


class TestGumbelTopK:
    def test_indices_sorted_and_exact_k(self, rng):
        probs = np.full((3, 10), 0.1)
        sel = gumbel_topk(probs, 4, rng)
        assert sel.indices.shape == (3, 4)
        assert np.all(np.diff(sel.indices, axis=-1) > 0)
        np.testing.assert_array_equal(sel.onehots.sum(axis=-1), np.ones((3, 4)))
        np.testing.assert_array_equal(sel.onehots.sum(axis=(-2, -1)), [4, 4, 4])

    def test_deterministic_keeps_most_probable(self):
        probs = np.array([0.05, 0.4, 0.1, 0.3, 0.15])
        sel = gumbel_topk(probs, 2, None, deterministic=True)
        np.testing.assert_array_equal(sel.indices, [1, 3])
        np.testing.assert_array_equal(sel.noise, np.zeros(5))

    def test_k_bounds(self, rng):
        with pytest.raises(ArgumentError):
            gumbel_topk(np.full(4, 0.25), 0, rng)
        with pytest.raises(ArgumentError):
            gumbel_topk(np.full(4, 0.25), 5, rng)

    def test_sampling_needs_rng(self):
        with pytest.raises(ArgumentError):
            gumbel_topk(np.full(4, 0.25), 2, None)

    def test_single_pick_follows_probabilities(self):
        p = np.array([0.1, 0.2, 0.3, 0.4])
        draws = 200_000
        sel = gumbel_topk(np.broadcast_to(p, (draws, 4)), 1, Rng(7))
        freq = np.bincount(sel.indices[:, 0], minlength=4) / draws
        np.testing.assert_allclose(freq, p, atol=0.005)

    def test_uniform_half_keeps_each_token_half_the_time(self):
        draws, tokens = 20_000, 16
        sel = gumbel_topk(np.full((draws, tokens), 1.0 / tokens), tokens // 2, Rng(8))
        freq = sel.onehots.sum(axis=-2).mean(axis=0)
        np.testing.assert_allclose(freq, 0.5, atol=0.02)
        np.testing.assert_array_equal(sel.onehots.sum(axis=(-2, -1)), np.full(draws, tokens // 2))


class TestStraightThrough:
    def test_closed_form_matches_relaxed_selector(self):
        logits = np.array([0.3, -1.2, 0.8, 0.1])
        noise = np.array([0.5, 0.1, -0.7, 1.1])
        rho, c = 0.7, 2
        with GradTape() as tape:
            z = tape.watch(Tensor(logits), "z")
            soft = relaxed_selector(z, noise, rho)
            grads = tape.backward(ops.sum(ops.mul(soft, ops.constant(np.eye(4)[c]))))
        perturbed = logits - logsumexp(logits) + noise
        np.testing.assert_allclose(grads["z"], st_gradient(perturbed, c, rho), atol=1e-12)

        f = lambda x: ops.sum(ops.mul(relaxed_selector(x, noise, rho), ops.constant(np.eye(4)[c])))
        assert finite_diff_check(f, Tensor(logits)) < 1e-4

    def test_hard_selectors_carry_relaxed_gradient(self):
        logits = np.array([0.2, 1.0, -0.3, 0.6, 0.0])
        sel = gumbel_topk(softmax(logits), 2, Rng(3))
        upstream = Rng(4).normal((2, 5))
        with GradTape() as tape:
            z = tape.watch(Tensor(logits), "z")
            soft = relaxed_selector(z, sel.noise, 0.5)
            hard = straight_through(soft, sel.indices)
            grads = tape.backward(ops.sum(ops.mul(hard, ops.constant(upstream))))
        with GradTape() as tape:
            z = tape.watch(Tensor(logits), "z")
            soft = relaxed_selector(z, sel.noise, 0.5)
            expected = tape.backward(ops.sum(ops.mul(soft, ops.constant(upstream.sum(axis=0)))))
        np.testing.assert_allclose(grads["z"], expected["z"], rtol=1e-12)

    def test_low_temperature_approaches_hard_choice(self):
        logits = np.array([0.1, 0.9, -0.4, 0.5])
        noise = np.array([0.0, 0.3, -0.2, -0.1])
        winner = int(np.argmax(logits - logsumexp(logits) + noise))
        for rho, tol in ((0.1, 1e-3), (0.01, 1e-12)):
            soft = relaxed_selector(Tensor(logits), noise, rho).data
            np.testing.assert_allclose(soft, np.eye(4)[winner], atol=tol)

    def test_temperature_must_be_positive(self):
        with pytest.raises(ArgumentError):
            relaxed_selector(Tensor(np.zeros(3)), np.zeros(3), 0.0)

    def test_backward_sums_over_selectors(self):
        soft = Tensor(np.array([[0.1, 0.2, 0.3, 0.4]]))
        upstream = np.arange(8.0).reshape(1, 2, 4)
        with GradTape() as tape:
            watched = tape.watch(soft, "soft")
            hard = straight_through(watched, np.array([[0, 2]]))
            np.testing.assert_array_equal(hard.data, [[[1, 0, 0, 0], [0, 0, 1, 0]]])
            loss = ops.sum(ops.mul(hard, ops.constant(upstream)))
            grads = tape.backward(loss)
        np.testing.assert_array_equal(grads["soft"], upstream.sum(axis=-2))

    def test_index_shape_mismatch(self):
        with pytest.raises(ShapeError):
            straight_through(Tensor(np.ones((2, 4))), np.array([[0, 1]]))


class TestSelectTokens:
    def test_forward_copies_rows_and_routes_gradients(self):
        X = Tensor(np.arange(12.0).reshape(4, 3))
        sel = gumbel_topk(np.array([0.1, 0.4, 0.2, 0.3]), 2, None, deterministic=True)
        with GradTape() as tape:
            x = tape.watch(X, "x")
            soft = tape.watch(Tensor(np.full(4, 0.25)), "soft")
            sel.selectors = straight_through(soft, sel.indices)
            kept = select_tokens(x, sel)
            np.testing.assert_array_equal(kept.data, X.data[[1, 3]])
            G = np.array([[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]])
            grads = tape.backward(ops.sum(ops.mul(kept, ops.constant(G))))
        np.testing.assert_array_equal(grads["x"], sel.onehots.T @ G)
        np.testing.assert_array_equal(grads["soft"], (G @ X.data.T).sum(axis=0))

    def test_out_of_range_index(self):
        sel = full_selection((), 5)
        with pytest.raises(ShapeError):
            select_tokens(Tensor(np.ones((4, 2))), sel)


class TestMomentum:
    def test_ema_step(self):
        table = ParameterTable({"main": np.array([1.0]), "shadow": np.array([0.0])})
        ema_update(table, 0.1, [("main", "shadow")])
        np.testing.assert_allclose(table["shadow"], [0.9])

    def test_m_out_of_range(self):
        table = ParameterTable({"main": np.ones(1), "shadow": np.zeros(1)})
        with pytest.raises(ArgumentError):
            ema_update(table, 1.5, [("main", "shadow")])

    def test_missing_pair(self):
        table = ParameterTable({"main": np.ones(1)})
        with pytest.raises(CheckpointError):
            ema_update(table, 0.5, [("main", "shadow")])


class TestSelectionModes:
    @pytest.mark.parametrize("changes", [
        {"selection": "greedy"},
        {"mask_input": "pixels"},
        {"eta": 1.0},
    ])
    def test_invalid_options(self, changes):
        with pytest.raises(ArgumentError):
            SelectionOptions(**changes)

    def test_recall(self):
        indices = np.array([[0, 2, 5], [1, 3, 4]])
        assert recall(indices, [[2, 5], [0, 1]]) == pytest.approx(0.75)
        assert recall(indices, [[], []]) == 0.0

    def test_random_selection_ignores_data(self, rng):
        sel = random_selection((3,), 10, 4, rng)
        assert sel.indices.shape == (3, 4)
        assert sel.selectors is None
        assert all(len(set(row)) == 4 for row in sel.indices.tolist())

    def test_none_keeps_everything(self):
        grid = TokenGrid(Tensor(np.ones((2, 6, 4))), 3, 2)
        sel = select(grid, SelectionOptions(eta=0.5, selection="none"), None)
        assert sel.K == 6
        np.testing.assert_array_equal(sel.indices[1], np.arange(6))

    def test_learned_needs_mask_generator(self):
        grid = TokenGrid(Tensor(np.ones((6, 4))), 3, 2)
        with pytest.raises(ArgumentError):
            select(grid, SelectionOptions(), Rng(0))


class TestLearnedSelectionTraining:
    def test_mask_generator_receives_gradient(self, config, dataset):
        classifier = build_classifier(config)
        table = classifier.init_params(Rng(0))
        frames, labels, _ = dataset.split("train").batch(np.arange(4))
        with GradTape() as tape:
            bound = tape.bind(table, classifier.trainable(table))
            result = classifier.forward(bound, frames, Rng(1), train=True)
            grads = tape.backward(ops.cross_entropy(result.logits, labels))
        assert result.selection.K == 8
        assert np.any(grads["mask_gen.weight"] != 0.0)
        assert "shadow.s4.A" not in grads

    def test_shadow_follows_main_block(self, config):
        classifier = build_classifier(config)
        table = classifier.init_params(Rng(0))
        table["blocks.0.ln.gamma"] = table["blocks.0.ln.gamma"] + 1.0
        before = table["shadow.ln.gamma"].copy()
        momentum_update(classifier.shadow, table)
        expected = config.m_s4 * before + (1 - config.m_s4) * table["blocks.0.ln.gamma"]
        np.testing.assert_allclose(table["shadow.ln.gamma"], expected)

    def test_no_masking_matches_plain_decoder_block(self, config, dataset):
        classifier = build_classifier(config)
        bound = constants(classifier.init_params(Rng(0)))
        frames, _, _ = dataset.split("train").batch(np.arange(2))
        grid = classifier.backbone.tokens(bound, frames)
        block = classifier.backbone.block_params(bound)[0]
        out = s5_block_forward(block, classifier.shadow, classifier.mask_generator(bound), grid,
                               SelectionOptions(eta=0.0), Rng(1))
        assert out.kept == grid.length
        np.testing.assert_array_equal(out.selection.indices[0], np.arange(grid.length))
        np.testing.assert_allclose(out.out.data, decoder_block(block, grid.tokens).data,
                                   rtol=1e-12, atol=1e-14)
