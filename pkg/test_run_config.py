"""
Tests for presets, config files and overrides
"""

import pytest
from pydantic import ValidationError

from run_config import (PRESETS, RunConfig, apply_overrides, deep_merge, dump_key_value, load_run_config,
                        parse_key_value_file, parse_value)


class TestPresets:

    @pytest.mark.parametrize('name', sorted(PRESETS))
    def test_every_preset_validates(self, name):
        config = load_run_config(preset=name)
        assert config.proposer.feature_dim == config.field.width

    def test_desk_preset_is_small(self):
        config = load_run_config(preset='desk-spheres')
        assert config.field.width == 64
        assert (config.proposer.n_coarse, config.proposer.n_fine) == (32, 64)

    def test_full_size_preset(self):
        config = load_run_config(preset='full')
        assert config.field.depth == 8 and config.field.width == 256
        assert (config.proposer.n_coarse, config.proposer.n_fine) == (64, 128)

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match='Unknown preset'):
            load_run_config(preset='huge')


class TestParsing:

    @pytest.mark.parametrize('raw, expected', [
        ('3', 3), ('0.5', 0.5), ('true', True), ('False', False), ('none', None),
        ('[64, 64]', [64, 64]), ('mlpmix', 'mlpmix'), (' white ', 'white')
    ])
    def test_parse_value(self, raw, expected):
        assert parse_value(raw) == expected

    def test_deep_merge_keeps_siblings(self):
        merged = deep_merge({'train': {'seed': 1, 'batch_rays': 8}}, {'train': {'seed': 2}})
        assert merged == {'train': {'seed': 2, 'batch_rays': 8}}

    def test_overrides(self):
        data = apply_overrides({}, ['train.seed=4', 'proposer.architecture=pool'])
        assert data == {'train': {'seed': 4}, 'proposer': {'architecture': 'pool'}}

    def test_malformed_override(self):
        with pytest.raises(ValueError):
            apply_overrides({}, ['train.seed'])

    def test_config_file(self, tmp_path):
        path = tmp_path / 'run.txt'
        path.write_text("# desk run\ntrain.seed = 7\n\nscene.resolution = [16, 16]  # small\n")
        assert parse_key_value_file(path) == {'train': {'seed': 7}, 'scene': {'resolution': [16, 16]}}

    def test_config_file_line_number(self, tmp_path):
        path = tmp_path / 'run.txt'
        path.write_text("train.seed = 7\ntrain.batch_rays 16\n")
        with pytest.raises(ValueError, match=r'run.txt:2:'):
            parse_key_value_file(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            parse_key_value_file(tmp_path / 'absent.txt')


class TestLoading:

    def test_precedence(self, tmp_path):
        path = tmp_path / 'run.txt'
        path.write_text("train.seed = 7\ntrain.batch_rays = 32\n")
        config = load_run_config(path, 'micro', ['train.seed=9'])
        assert config.train.seed == 9
        assert config.train.batch_rays == 32
        assert config.scene.resolution == (8, 8)

    def test_unknown_key_is_named(self):
        with pytest.raises(ValidationError, match='batch_rayz'):
            load_run_config(preset='micro', overrides=['train.batch_rayz=3'])

    def test_invalid_value_is_named(self):
        with pytest.raises(ValidationError, match='stage_split'):
            load_run_config(preset='micro', overrides=['train.stage_split=1.5'])

    def test_feature_width_must_match(self):
        with pytest.raises(ValidationError, match='feature_dim'):
            RunConfig.model_validate({'field': {'width': 32}, 'proposer': {'feature_dim': 16}})

    def test_dump_round_trip(self, tmp_path):
        config = load_run_config(preset='micro', overrides=['proposer.architecture=transformer'])
        path = tmp_path / 'config.txt'
        path.write_text(dump_key_value(config))
        assert load_run_config(path) == config
