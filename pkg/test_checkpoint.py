"""
Tests for the checkpoint container
"""

import json
import struct

import numpy as np
import pytest

from checkpoint import (FORMAT_VERSION, MAGIC, CheckpointError, decode_tensors, encode_tensors, load_checkpoint,
                        read_checkpoint, save_checkpoint, write_checkpoint)
from optim import AdamState
from run_config import load_run_config
from trainer import NerfIdModel, TrainState


class TestContainer:

    def test_header_layout(self):
        payload = encode_tensors({'w': np.ones((2, 3))})
        assert payload[:4] == MAGIC
        assert struct.unpack_from('<II', payload, 4) == (FORMAT_VERSION, 1)
        assert len(payload) == 12 + 2 + 1 + 1 + 8 + 4 * 6

    def test_scalar_and_names(self):
        tensors = decode_tensors(encode_tensors({'fine.trunk.0.bias': np.arange(4.0), 'scale': np.array(2.5)}))
        assert list(tensors) == ['fine.trunk.0.bias', 'scale']
        assert tensors['scale'].shape == ()
        np.testing.assert_array_equal(tensors['fine.trunk.0.bias'], [0, 1, 2, 3])

    def test_bad_magic(self):
        with pytest.raises(CheckpointError, match='magic'):
            decode_tensors(b'XXXX' + encode_tensors({})[4:])

    def test_unsupported_version(self):
        payload = bytearray(encode_tensors({'w': np.ones(2)}))
        payload[4:8] = struct.pack('<I', FORMAT_VERSION + 1)
        with pytest.raises(CheckpointError, match='version'):
            decode_tensors(bytes(payload))

    def test_truncated(self):
        payload = encode_tensors({'w': np.ones((4, 4))})
        with pytest.raises(CheckpointError):
            decode_tensors(payload[:-5])
        with pytest.raises(CheckpointError):
            decode_tensors(payload[:10])

    def test_trailing_bytes(self):
        with pytest.raises(CheckpointError, match='trailing'):
            decode_tensors(encode_tensors({'w': np.ones(2)}) + b'\x00')

    def test_missing_directory(self, tmp_path):
        with pytest.raises(CheckpointError):
            read_checkpoint(tmp_path / 'nothing')

    def test_overwrite_replaces_contents(self, tmp_path):
        write_checkpoint(tmp_path / 'ckpt', {'a': np.ones(1)}, {'note': 'first'})
        write_checkpoint(tmp_path / 'ckpt', {'b': np.zeros(2)}, {'note': 'second'})
        tensors, manifest = read_checkpoint(tmp_path / 'ckpt')
        assert list(tensors) == ['b']
        assert manifest['note'] == 'second'
        assert [p.name for p in tmp_path.iterdir()] == ['ckpt']

    def test_manifest_must_list_every_tensor(self, tmp_path):
        write_checkpoint(tmp_path / 'ckpt', {'a': np.ones(1)}, {})
        manifest = json.loads((tmp_path / 'ckpt' / 'manifest.json').read_text())
        manifest['tensors'] = []
        (tmp_path / 'ckpt' / 'manifest.json').write_text(json.dumps(manifest))
        with pytest.raises(CheckpointError):
            read_checkpoint(tmp_path / 'ckpt')


class TestModelCheckpoint:

    def test_round_trip(self, tmp_path, micro_config):
        model = NerfIdModel.from_config(micro_config)
        named = model.named_parameters()
        optimizer = AdamState(m={'fine.density.bias': np.full(1, 0.25)},
                              v={'fine.density.bias': np.full(1, 0.5)}, step=7)
        state = TrainState(step=12, stage=2, phase_start=10, best_psnr=21.5, best_step=10, optimizer=optimizer)
        save_checkpoint(tmp_path / 'ckpt', model, state, micro_config)

        restored, restored_state, restored_config = load_checkpoint(tmp_path / 'ckpt')
        assert restored_config == micro_config
        assert restored.architecture == 'mlpmix'
        for name, param in restored.named_parameters().items():
            np.testing.assert_array_equal(param.data, named[name].data.astype(np.float32))
        assert (restored_state.step, restored_state.stage, restored_state.phase_start) == (12, 2, 10)
        assert restored_state.best_psnr == 21.5
        assert restored_state.optimizer.step == 7
        np.testing.assert_allclose(restored_state.optimizer.v['fine.density.bias'], [0.5])

    def test_untrained_state_keeps_infinite_best(self, tmp_path, micro_config):
        model = NerfIdModel.from_config(micro_config)
        save_checkpoint(tmp_path / 'ckpt', model, TrainState(), micro_config)
        _, state, _ = load_checkpoint(tmp_path / 'ckpt')
        assert state.best_psnr == float('-inf')

    def test_heuristic_checkpoint_has_no_proposer(self, tmp_path):
        config = load_run_config(preset='micro', overrides=['train.mode=heuristic'])
        save_checkpoint(tmp_path / 'ckpt', NerfIdModel.from_config(config), TrainState(), config)
        model, _, _ = load_checkpoint(tmp_path / 'ckpt')
        assert model.proposer is None
        assert model.architecture == 'heuristic'

    def test_shape_mismatch_is_reported(self, tmp_path, micro_config):
        model = NerfIdModel.from_config(micro_config)
        save_checkpoint(tmp_path / 'ckpt', model, TrainState(), micro_config)
        tensors, manifest = read_checkpoint(tmp_path / 'ckpt')
        tensors['coarse.density.bias'] = np.zeros(2)
        write_checkpoint(tmp_path / 'ckpt', tensors, manifest)
        with pytest.raises(CheckpointError, match='coarse.density.bias'):
            load_checkpoint(tmp_path / 'ckpt')
