"""
End-to-end tests of the command-line interface on the micro preset
"""

import json

import numpy as np
import pandas as pd
import pytest

from cli import EXIT_OK, EXIT_USER_ERROR, UserError, main, parse_thresholds, svg_line_chart
from scenes import read_ppm, save_posed_images


@pytest.fixture(scope='module')
def trained_run(tmp_path_factory):
    out = tmp_path_factory.mktemp('runs') / 'micro'
    assert main(['train', '--preset', 'micro', '--out', str(out), '--workers', '1']) == EXIT_OK
    return out


@pytest.fixture(scope='module')
def heuristic_run(tmp_path_factory):
    out = tmp_path_factory.mktemp('runs') / 'heuristic'
    assert main(['train', '--preset', 'micro', '--proposer', 'heuristic', '--out', str(out)]) == EXIT_OK
    return out


class TestTrain:

    def test_outputs(self, trained_run):
        for name in ('config.txt', 'metrics.csv', 'eval_test.csv', 'run_manifest.json', 'best', 'final'):
            assert (trained_run / name).exists(), name
        table = pd.read_csv(trained_run / 'eval_test.csv')
        assert list(table.columns) == ['image', 'psnr', 'ssim']
        assert table['image'].tolist()[-1] == 'mean'

    def test_manifest(self, trained_run):
        manifest = json.loads((trained_run / 'run_manifest.json').read_text())
        assert manifest['command'] == 'train'
        assert manifest['seed'] == 0
        assert manifest['config']['train']['mode'] == 'nerf_id'
        assert manifest['source_version'].startswith('1.0.0+')
        assert np.isfinite(manifest['test_psnr'])

    def test_existing_run_needs_force(self, trained_run):
        assert main(['train', '--preset', 'micro', '--out', str(trained_run)]) == EXIT_USER_ERROR

    def test_force_rerun_starts_fresh(self, tmp_path):
        out = tmp_path / 'run'
        args = ['train', '--preset', 'micro', '--out', str(out), '--set', 'train.total_steps=4']
        assert main(args) == EXIT_OK
        assert main(args + ['--force']) == EXIT_OK
        metrics = pd.read_csv(out / 'metrics.csv')
        assert metrics['step'].tolist() == [1, 2, 3, 4]

    def test_non_empty_directory_needs_force(self, tmp_path):
        (tmp_path / 'notes.txt').write_text('keep me')
        assert main(['train', '--preset', 'micro', '--out', str(tmp_path)]) == EXIT_USER_ERROR
        assert [p.name for p in tmp_path.iterdir()] == ['notes.txt']

    def test_unknown_config_key(self, tmp_path):
        code = main(['train', '--preset', 'micro', '--out', str(tmp_path / 'run'), '--set', 'train.batch_rayz=4'])
        assert code == EXIT_USER_ERROR

    def test_scratch_needs_a_learnt_proposer(self, tmp_path):
        code = main(['train', '--preset', 'micro', '--proposer', 'heuristic', '--scratch',
                     '--out', str(tmp_path / 'run')])
        assert code == EXIT_USER_ERROR

    def test_needs_a_preset_or_config(self, tmp_path):
        assert main(['train', '--out', str(tmp_path / 'run')]) == EXIT_USER_ERROR

    def test_argument_errors(self):
        assert main(['render']) == EXIT_USER_ERROR
        assert main(['train', '--proposer', 'lstm']) == EXIT_USER_ERROR


class TestCheckpointCommands:

    def test_render(self, trained_run, tmp_path):
        out = tmp_path / 'render'
        code = main(['render', '--checkpoint', str(trained_run / 'best'), '--out', str(out), '--threshold', '0.1'])
        assert code == EXIT_OK
        assert read_ppm(out / 'test_000.ppm').shape == (8, 8, 3)
        stats = pd.read_csv(out / 'render_stats.csv')
        assert 0 < stats['kept_fraction'].iloc[0] <= 1

    def test_render_view_out_of_range(self, trained_run, tmp_path):
        code = main(['render', '--checkpoint', str(trained_run / 'best'), '--out', str(tmp_path), '--view', '5'])
        assert code == EXIT_USER_ERROR

    def test_eval(self, trained_run, tmp_path):
        code = main(['eval', '--checkpoint', str(trained_run / 'best'), '--split', 'val', '--out', str(tmp_path)])
        assert code == EXIT_OK
        assert pd.read_csv(tmp_path / 'eval_val.csv')['image'].tolist() == ['val/000.ppm', 'mean']

    def test_eval_against_posed_images(self, trained_run, tmp_path, micro_dataset):
        save_posed_images(micro_dataset, tmp_path / 'data')
        code = main(['eval', '--checkpoint', str(trained_run / 'best'), '--data', str(tmp_path / 'data'),
                     '--out', str(tmp_path / 'eval')])
        assert code == EXIT_OK

    def test_sweep(self, trained_run, tmp_path):
        code = main(['sweep', '--checkpoint', str(trained_run / 'best'), '--thresholds', '0,0.5,1',
                     '--out', str(tmp_path)])
        assert code == EXIT_OK
        table = pd.read_csv(tmp_path / 'sweep.csv')
        assert table['threshold'].tolist() == [0.0, 0.5, 1.0]
        assert table['relative_time'].iloc[0] == pytest.approx(1.0)
        assert table['relative_time'].is_monotonic_decreasing
        assert (tmp_path / 'sweep.svg').read_text().startswith('<svg')

    def test_sweep_without_importance_head(self, heuristic_run, tmp_path):
        code = main(['sweep', '--checkpoint', str(heuristic_run / 'best'), '--out', str(tmp_path)])
        assert code == EXIT_USER_ERROR

    def test_profile(self, trained_run, tmp_path):
        code = main(['profile', '--checkpoint', str(trained_run / 'best'), '--row', '4', '--out', str(tmp_path)])
        assert code == EXIT_OK
        table = pd.read_csv(tmp_path / 'profile.csv')
        assert list(table.columns) == ['pixel', 't', 'provenance', 'weight', 'importance']
        assert len(table) == 8 * 16
        fine_tags = set(table['provenance']) - {'coarse'}
        assert len(fine_tags) == 1 and fine_tags <= {'heuristic', 'learned'}

    def test_missing_checkpoint(self, tmp_path):
        assert main(['eval', '--checkpoint', str(tmp_path / 'none'), '--out', str(tmp_path / 'o')]) == EXIT_USER_ERROR
        assert not (tmp_path / 'o').exists()


class TestHelpers:

    def test_parse_thresholds(self):
        assert parse_thresholds('0.5, 0,0.1,0.5') == [0.0, 0.1, 0.5]
        with pytest.raises(UserError):
            parse_thresholds('0.2,1.5')

    def test_line_chart_is_svg(self):
        svg = svg_line_chart([1.0, 0.5, 0.2], [30.0, 29.5, 25.0], 'x', 'y', 'title')
        assert svg.startswith('<svg') and svg.rstrip().endswith('</svg>')
        assert '<polyline' in svg
