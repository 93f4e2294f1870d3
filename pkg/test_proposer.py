"""
Tests for the learnt sample proposers and importance pruning
"""

import numpy as np
import pytest

import gradcore as gc
from field import FieldNetwork, FieldOutput
from proposer import (ARCHITECTURES, BlindProposer, MLPMixProposer, PoolProposer, ProposerConfig, ProposerInput,
                      TransformerProposer, build_proposer, depth_encoding, importance_filter, logit_spread,
                      propose_blind, propose_mlpmix, propose_pool, propose_transformer)
from render import SamplePositions, merge_and_sort, render_ray, stratified_sample
from run_config import load_run_config
from trainer import PROPOSER_BUDGET, NerfIdModel

SMALL = dict(n_coarse=6, n_fine=5, feature_dim=8, concat_encoding_dim=4, mixer_token_hidden=4,
             mixer_channel_hidden=8, transformer_dim=4, transformer_ff=8)


def small_config(architecture: str, **overrides) -> ProposerConfig:
    return ProposerConfig(architecture=architecture, **{**SMALL, **overrides})


def small_input(rng, rays: int = 3) -> ProposerInput:
    features = gc.constant(rng.normal(size=(rays, 6, 8)))
    positions = np.sort(rng.random((rays, 6)), axis=-1)
    return ProposerInput(features, positions)


def zero_all(proposer):
    for p in proposer.parameters().values():
        p.data[...] = 0.0


class TestEncodings:

    def test_depth_encoding_layout(self):
        encoded = depth_encoding(np.array([[0.0, 0.5]]), 8)
        assert encoded.shape == (1, 2, 8)
        np.testing.assert_allclose(encoded[0, 0], [0, 0, 0, 0, 1, 1, 1, 1])

    def test_depth_encoding_needs_even_dimension(self):
        with pytest.raises(ValueError):
            depth_encoding(np.zeros(3), 7)

    def test_logit_spread_hits_bin_centers(self):
        np.testing.assert_allclose(1 / (1 + np.exp(-logit_spread(4))), [0.125, 0.375, 0.625, 0.875])


class TestArchitectures:

    @pytest.mark.parametrize('architecture', ARCHITECTURES)
    def test_output_contract(self, architecture, rng):
        proposer = build_proposer(small_config(architecture), np.random.default_rng(0))
        proposals = proposer.propose(small_input(rng))
        assert proposals.t_fine.shape == (3, 5)
        assert np.all((proposals.t_fine.data > 0) & (proposals.t_fine.data < 1))
        assert proposals.importance_logits.shape == (3, 11)
        assert proposals.sorted().is_sorted()

    @pytest.mark.parametrize('architecture', ARCHITECTURES)
    def test_importance_head_optional(self, architecture, rng):
        proposer = build_proposer(small_config(architecture, with_importance=False))
        assert proposer.propose(small_input(rng)).importance_logits is None

    @pytest.mark.parametrize('architecture', ['pool', 'mlpmix', 'transformer'])
    def test_rejects_wrong_feature_shape(self, architecture):
        proposer = build_proposer(small_config(architecture))
        bad = ProposerInput(gc.constant(np.zeros((2, 6, 7))), np.tile(np.linspace(0, 1, 6), (2, 1)))
        with pytest.raises(gc.ShapeError):
            proposer.propose(bad)

    def test_rejects_unsorted_positions(self, rng):
        proposer = build_proposer(small_config('pool'))
        inputs = small_input(rng)
        inputs.positions[:, 0] = 2.0
        with pytest.raises(ValueError, match='sorted'):
            proposer.propose(inputs)

    def test_unknown_architecture(self):
        with pytest.raises(ValueError):
            ProposerConfig(architecture='lstm')

    def test_zero_pool_gives_half(self, rng):
        proposer = PoolProposer(small_config('pool'))
        zero_all(proposer)
        np.testing.assert_allclose(propose_pool(small_input(rng), proposer).t_fine.data, 0.5)

    def test_initial_proposals_spread_over_the_ray(self, rng):
        proposer = PoolProposer(small_config('pool'))
        proposer.parameters()['decode.weight'].data[...] = 0.0
        np.testing.assert_allclose(proposer.propose(small_input(rng)).t_fine.data[0],
                                   (np.arange(5) + 0.5) / 5, rtol=1e-5)

    def test_raw_proposals_keep_their_slot_order(self, rng):
        proposer = PoolProposer(small_config('pool'))
        proposer.parameters()['decode.weight'].data[...] = 0.0
        proposer.parameters()['decode.bias'].data[...] = np.linspace(2.0, -2.0, 5)
        proposals = proposer.propose(small_input(rng))
        assert np.all(np.diff(proposals.t_fine.data, axis=-1) < 0)
        np.testing.assert_allclose(proposals.sorted().values, proposals.t_fine.data[:, ::-1])

    def test_pool_matches_layer_by_layer_evaluation(self, float64, rng):
        proposer = PoolProposer(small_config('pool'), np.random.default_rng(4))
        p = {k: v.data for k, v in proposer.parameters().items()}
        inputs = small_input(rng)
        x = inputs.features.data + depth_encoding(inputs.positions, 8)
        pooled = np.maximum(x @ p['embed.weight'] + p['embed.bias'], 0).mean(axis=1)
        t = 1 / (1 + np.exp(-(pooled @ p['decode.weight'] + p['decode.bias'])))
        logits = pooled @ p['importance.weight'] + p['importance.bias']

        proposals = proposer.propose(inputs)
        np.testing.assert_allclose(proposals.t_fine.data, t, rtol=1e-12)
        np.testing.assert_allclose(proposals.importance_logits.data, logits, rtol=1e-12, atol=1e-14)

    def test_pool_position_variants(self, rng):
        inputs = small_input(rng)
        blind_to_depth = build_proposer(small_config('pool_no_position'), np.random.default_rng(1))
        moved = ProposerInput(inputs.features, np.sort(rng.random((3, 6)), axis=-1))
        np.testing.assert_array_equal(blind_to_depth.propose(inputs).t_fine.data,
                                      blind_to_depth.propose(moved).t_fine.data)

        concat = build_proposer(small_config('pool_concat'))
        assert concat.parameters()['embed.weight'].shape == (8 + 4, 8)

        learnt = build_proposer(small_config('pool_learnt_position'))
        assert learnt.parameters()['position_embedding'].shape == (6, 8)
        np.testing.assert_array_equal(learnt.propose(inputs).t_fine.data, learnt.propose(moved).t_fine.data)

    def test_mixer_without_token_mixing_is_per_point(self, float64, rng):
        proposer = MLPMixProposer(small_config('mlpmix'), np.random.default_rng(2))
        params = proposer.parameters()
        for name in ('token_mix.1.weight', 'token_mix.1.bias'):
            params[name].data[...] = 0.0
        p = {k: v.data for k, v in params.items()}
        inputs = small_input(rng)

        def norm(x, name):
            centered = x - x.mean(axis=-1, keepdims=True)
            xhat = centered / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + 1e-5)
            return xhat * p[f"{name}.scale"] + p[f"{name}.shift"]

        x = inputs.features.data + depth_encoding(inputs.positions, 8)
        hidden = np.maximum(norm(x, 'channel_norm') @ p['channel_mix.0.weight'] + p['channel_mix.0.bias'], 0)
        x = x + hidden @ p['channel_mix.1.weight'] + p['channel_mix.1.bias']
        expected = 1 / (1 + np.exp(-(x.mean(axis=1) @ p['decode.weight'] + p['decode.bias'])))
        np.testing.assert_allclose(propose_mlpmix(inputs, proposer).t_fine.data, expected, rtol=1e-10)

    def test_transformer_uniform_attention(self, float64, rng):
        proposer = TransformerProposer(small_config('transformer'), np.random.default_rng(3))
        for name in ('query', 'key'):
            proposer.parameters()[f"decoder.attn.{name}.weight"].data[...] = 0.0
            proposer.parameters()[f"decoder.attn.{name}.bias"].data[...] = 0.0
        inputs = small_input(rng)
        memory = proposer.encode(inputs)
        query = gc.constant(rng.normal(size=(3, 5, 4)))
        attended = proposer.attend('decoder.attn', query, memory).data
        p = {k: v.data for k, v in proposer.parameters().items()}
        values = memory.data @ p['decoder.attn.value.weight'] + p['decoder.attn.value.bias']
        expected = values.mean(axis=1, keepdims=True) @ p['decoder.attn.output.weight'] \
            + p['decoder.attn.output.bias']
        np.testing.assert_allclose(attended, np.broadcast_to(expected, attended.shape), rtol=1e-10)
        assert propose_transformer(inputs, proposer).importance_layout == 'source'

    def test_blind_ignores_its_input(self, rng):
        proposer = BlindProposer(small_config('blind'))
        a = proposer.propose(small_input(rng, rays=2))
        np.testing.assert_array_equal(a.t_fine.data[0], a.t_fine.data[1])
        zero_all(proposer)
        np.testing.assert_allclose(propose_blind(proposer, rays=4).t_fine.data, 0.5)

    def test_importance_head_sees_stopped_input(self, float64, rng):
        proposer = MLPMixProposer(small_config('mlpmix'))
        inputs = small_input(rng)
        with gc.Tape() as tape:
            loss = gc.sum(proposer.propose(inputs).importance_logits)
        params = proposer.parameters()
        grads = gc.backward(tape, loss, list(params.values()))
        assert np.any(grads[params['importance.weight']] != 0)
        assert np.all(grads[params['channel_mix.1.weight']] == 0)


class TestGradients:

    @pytest.mark.parametrize('architecture', ['pool', 'mlpmix', 'transformer', 'blind', 'pool_concat',
                                              'pool_learnt_position'])
    def test_propose_then_render_matches_finite_differences(self, float64, architecture):
        rng = np.random.default_rng(21)
        proposer = build_proposer(small_config(architecture), np.random.default_rng(8))
        features = gc.parameter(rng.normal(size=(1, 6, 8)))
        coarse = stratified_sample(6, batch_shape=(1,))
        sigma_of = rng.uniform(0.5, 3.0, 11)
        color = gc.constant(rng.random((1, 11, 3)))
        logit_weights = gc.constant(rng.normal(size=(1, 11)))

        def loss_fn():
            proposals = proposer.propose(ProposerInput(features, coarse.values))
            merged = merge_and_sort(coarse, proposals.sorted())
            sigma = gc.mul(gc.add(gc.sin(gc.mul(merged.t, 3.0)), 1.5), gc.constant(sigma_of[None, :]))
            result = render_ray(merged, FieldOutput(sigma, color, features), (1.0, 1.0, 1.0))
            loss = gc.sum(gc.square(result.color))
            if proposals.importance_logits is not None:
                loss = gc.add(loss, gc.sum(gc.mul(proposals.importance_logits, logit_weights)))
            return loss

        params = list(proposer.parameters().values())
        if architecture != 'blind':
            params.append(features)
        report = gc.check_gradients(loss_fn, params, np.random.default_rng(0))
        assert report.passed, report.failures


class TestImportanceFilter:

    def merged(self, n: int) -> SamplePositions:
        return stratified_sample(n, batch_shape=(1,))

    def test_threshold_zero_keeps_everything(self):
        selection = importance_filter(self.merged(4), np.array([[-9.0, 0.0, 3.0, -1.0]]), 0.0)
        assert selection.keep_mask.all() and selection.kept_fraction == 1.0

    def test_threshold_one_keeps_the_argmax(self):
        selection = importance_filter(self.merged(4), np.array([[-9.0, 0.0, 3.0, -1.0]]), 1.0)
        np.testing.assert_array_equal(selection.kept_indices(), [2])

    def test_threshold_half(self):
        merged = self.merged(3)
        selection = importance_filter(merged, np.array([[-5.0, 5.0, -5.0]]), 0.5)
        np.testing.assert_array_equal(selection.kept_indices(), [1])
        np.testing.assert_allclose(selection.subset(merged).values, merged.values[0, [1]])

    def test_shape_mismatch(self):
        with pytest.raises(gc.ShapeError):
            importance_filter(self.merged(3), np.zeros((1, 4)), 0.5)


class TestParameterBudget:

    @pytest.mark.parametrize('architecture', ['pool', 'mlpmix', 'transformer'])
    def test_full_size_proposers_stay_small(self, architecture):
        config = load_run_config(preset='full', overrides=[f'proposer.architecture={architecture}'])
        model = NerfIdModel.from_config(config)
        assert model.proposer_budget_ratio() < PROPOSER_BUDGET
        assert model.proposer.parameter_count() < FieldNetwork(config.field).parameter_count()
