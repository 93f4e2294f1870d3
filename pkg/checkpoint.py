"""
Checkpoint container for the NeRF-ID toolkit

Directory layout:
    params.bin     magic 'NRID', u32 version, u32 tensor count, then per tensor
                   u16 name length, UTF-8 name, u8 ndim, u32 dims, float32 data
                   (all little-endian)
    manifest.json  format version, config snapshot, training state, tensor list

Optimizer moments are stored in params.bin as 'adam.m.<name>' / 'adam.v.<name>'.
"""

import json
import logging
import os
import shutil
import struct
import tempfile
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from config import CONFIG

logger = logging.getLogger(__name__)

MAGIC = b'NRID'
FORMAT_VERSION = 1
PARAMS_FILE = 'params.bin'
MANIFEST_FILE = 'manifest.json'


class CheckpointError(ValueError):
    """Checkpoint missing, truncated, or written by an incompatible version"""


def encode_tensors(tensors: Dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack('<II', FORMAT_VERSION, len(tensors))]
    for name, array in tensors.items():
        encoded = name.encode('utf-8')
        array = np.asarray(array)
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack('<B', array.ndim))
        chunks.append(struct.pack(f'<{array.ndim}I', *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype='<f4').tobytes())
    return b''.join(chunks)


def decode_tensors(payload: bytes) -> Dict[str, np.ndarray]:
    if payload[:4] != MAGIC:
        raise CheckpointError(f"Bad magic {payload[:4]!r}, expected {MAGIC!r}")
    try:
        version, count = struct.unpack_from('<II', payload, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"Unsupported checkpoint version {version} (this build reads {FORMAT_VERSION})")
        offset = 12
        tensors = {}
        for _ in range(count):
            (name_length,) = struct.unpack_from('<H', payload, offset)
            offset += 2
            name = payload[offset:offset + name_length].decode('utf-8')
            offset += name_length
            (ndim,) = struct.unpack_from('<B', payload, offset)
            offset += 1
            shape = struct.unpack_from(f'<{ndim}I', payload, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if offset + 4 * size > len(payload):
                raise CheckpointError(f"Truncated data for tensor '{name}'")
            tensors[name] = np.frombuffer(payload, dtype='<f4', count=size, offset=offset).reshape(shape).copy()
            offset += 4 * size
    except struct.error as e:
        raise CheckpointError(f"Truncated checkpoint: {e}") from e
    if offset != len(payload):
        raise CheckpointError(f"{len(payload) - offset} trailing bytes after {count} tensors")
    return tensors


def write_checkpoint(path: Union[str, Path], tensors: Dict[str, np.ndarray], manifest: Dict[str, Any]):
    """Write params.bin + manifest.json atomically (temp directory, then rename)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        (staging / PARAMS_FILE).write_bytes(encode_tensors(tensors))
        manifest = dict(manifest)
        manifest.setdefault('format_version', FORMAT_VERSION)
        manifest.setdefault('toolkit_version', CONFIG['app']['version'])
        manifest.setdefault('written_at', datetime.now().isoformat())
        manifest['tensors'] = [{'name': name, 'shape': list(np.shape(array))} for name, array in tensors.items()]
        (staging / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2))

        if path.exists():
            retired = path.with_name(f".{path.name}.old")
            shutil.rmtree(retired, ignore_errors=True)
            os.replace(path, retired)
            os.replace(staging, path)
            shutil.rmtree(retired, ignore_errors=True)
        else:
            os.replace(staging, path)
    except Exception:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    logger.info(f"Checkpoint written to {path} ({len(tensors)} tensors)")


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    params_file = path / PARAMS_FILE
    manifest_file = path / MANIFEST_FILE
    if not params_file.exists() or not manifest_file.exists():
        raise CheckpointError(f"No checkpoint at {path} (expected {PARAMS_FILE} and {MANIFEST_FILE})")
    tensors = decode_tensors(params_file.read_bytes())
    try:
        manifest = json.loads(manifest_file.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"Malformed {manifest_file}: {e}") from e
    listed = [entry['name'] for entry in manifest.get('tensors', [])]
    if listed != list(tensors):
        raise CheckpointError(f"{manifest_file} lists {len(listed)} tensors, {params_file} holds {len(tensors)}")
    return tensors, manifest


def save_checkpoint(path: Union[str, Path], model, state, run_config):
    """
    Persist model parameters, optimizer moments and training state

    Args:
        path: Checkpoint directory
        model: NerfIdModel
        state: TrainState
        run_config: RunConfig the run was built from
    """
    tensors = {name: p.data for name, p in model.named_parameters().items()}
    for name, moment in state.optimizer.m.items():
        tensors[f"adam.m.{name}"] = moment
    for name, moment in state.optimizer.v.items():
        tensors[f"adam.v.{name}"] = moment
    manifest = {
        'config': run_config.model_dump(mode='json'),
        'state': state.to_manifest(),
        'architecture': model.architecture
    }
    write_checkpoint(path, tensors, manifest)


def load_checkpoint(path: Union[str, Path]):
    """
    Rebuild (model, state, run_config) from a checkpoint directory

    Raises:
        CheckpointError: missing files, bad format, or tensors not matching the config
    """
    from run_config import RunConfig
    from trainer import NerfIdModel, TrainState

    tensors, manifest = read_checkpoint(path)
    run_config = RunConfig.model_validate(manifest['config'])
    state = TrainState.from_manifest(manifest['state'])
    model = NerfIdModel.from_config(run_config)

    params = model.named_parameters()
    missing = sorted(set(params) - set(tensors))
    if missing:
        raise CheckpointError(f"Checkpoint {path} lacks parameters: {missing[:5]}")
    for name, param in params.items():
        if tensors[name].shape != param.shape:
            raise CheckpointError(f"Parameter '{name}' has shape {tensors[name].shape}, model expects {param.shape}")
        param.data = tensors[name].astype(param.data.dtype)

    for name, array in tensors.items():
        if name.startswith('adam.m.'):
            state.optimizer.m[name[len('adam.m.'):]] = array.astype(params[name[len('adam.m.'):]].data.dtype)
        elif name.startswith('adam.v.'):
            state.optimizer.v[name[len('adam.v.'):]] = array.astype(params[name[len('adam.v.'):]].data.dtype)
    logger.info(f"Loaded checkpoint {path}: step {state.step}, stage {state.stage}")
    return model, state, run_config
