"""
Run configuration: presets, key/value config files and command-line overrides

Config files hold one ``section.key = value`` per line; ``#`` starts a comment.
Values are read as JSON when possible (numbers, booleans, lists) and as plain
strings otherwise.
"""

import copy
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from field import FieldConfig
from proposer import ProposerConfig
from render import RenderConfig
from scenes import SceneConfig
from trainer import TrainConfig

logger = logging.getLogger(__name__)


class RunConfig(BaseModel):
    """Complete description of a run"""
    model_config = ConfigDict(extra='forbid')

    scene: SceneConfig = Field(default_factory=SceneConfig)
    field: FieldConfig = Field(default_factory=FieldConfig)
    proposer: ProposerConfig = Field(default_factory=ProposerConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    render: RenderConfig = Field(default_factory=RenderConfig)

    @model_validator(mode='before')
    @classmethod
    def feature_width_follows_field(cls, data: Any) -> Any:
        if isinstance(data, dict):
            field_data = data.get('field') or {}
            width = field_data.get('width', 256) if isinstance(field_data, dict) else field_data.width
            proposer = data.get('proposer')
            if proposer is None:
                data = {**data, 'proposer': {'feature_dim': width}}
            elif isinstance(proposer, dict) and 'feature_dim' not in proposer:
                data = {**data, 'proposer': {**proposer, 'feature_dim': width}}
        return data

    @model_validator(mode='after')
    def check_consistency(self):
        if self.proposer.feature_dim != self.field.width:
            raise ValueError(f"proposer.feature_dim ({self.proposer.feature_dim}) must equal "
                             f"field.width ({self.field.width})")
        return self


_DESK_FIELD = {
    'depth': 4,
    'width': 64,
    'skip_layer': 2,
    'color_width': 32,
    'encoding': {'num_frequencies_position': 6, 'num_frequencies_direction': 4}
}

_DESK_TRAIN = {
    'total_steps': 20000,
    'batch_rays': 128,
    'warmup_steps': 500,
    'validate_every': 500,
    'checkpoint_every': 5000
}

PRESETS: Dict[str, Dict[str, Any]] = {
    'desk-spheres': {
        'scene': {'kind': 'analytic_spheres', 'resolution': [64, 64], 'n_train': 20, 'n_val': 4, 'n_test': 8},
        'field': _DESK_FIELD,
        'proposer': {'architecture': 'mlpmix', 'n_coarse': 32, 'n_fine': 64, 'mixer_token_hidden': 32,
                     'mixer_channel_hidden': 64},
        'train': _DESK_TRAIN
    },
    'desk-boxes': {
        'scene': {'kind': 'analytic_boxes', 'resolution': [64, 64], 'n_train': 20, 'n_val': 4, 'n_test': 8},
        'field': _DESK_FIELD,
        'proposer': {'architecture': 'mlpmix', 'n_coarse': 32, 'n_fine': 64, 'mixer_token_hidden': 32,
                     'mixer_channel_hidden': 64},
        'train': _DESK_TRAIN
    },
    'desk-shells': {
        'scene': {'kind': 'analytic_shells', 'resolution': [64, 64], 'n_train': 20, 'n_val': 4, 'n_test': 8},
        'field': _DESK_FIELD,
        'proposer': {'architecture': 'mlpmix', 'n_coarse': 32, 'n_fine': 64, 'mixer_token_hidden': 32,
                     'mixer_channel_hidden': 64},
        'train': _DESK_TRAIN
    },
    'micro': {
        'scene': {'kind': 'analytic_spheres', 'resolution': [8, 8], 'n_train': 2, 'n_val': 1, 'n_test': 1,
                  'n_primitives': 1},
        'field': {'depth': 2, 'width': 16, 'skip_layer': 1, 'color_width': 8,
                  'encoding': {'num_frequencies_position': 2, 'num_frequencies_direction': 1}},
        'proposer': {'architecture': 'mlpmix', 'n_coarse': 8, 'n_fine': 8, 'mixer_token_hidden': 8,
                     'mixer_channel_hidden': 16, 'transformer_dim': 8, 'transformer_ff': 16,
                     'concat_encoding_dim': 8},
        'train': {'total_steps': 20, 'batch_rays': 16, 'warmup_steps': 2, 'chunk_rays': 8,
                  'validate_every': 10, 'validation_images': 1, 'checkpoint_every': 10},
        'render': {'chunk_rays': 64}
    },
    'full': {
        'scene': {'kind': 'analytic_spheres', 'resolution': [64, 64], 'n_train': 100, 'n_val': 100, 'n_test': 200},
        'proposer': {'architecture': 'mlpmix', 'n_coarse': 64, 'n_fine': 128},
        'train': {'total_steps': 150000, 'batch_rays': 1024, 'warmup_steps': 1000, 'validate_every': 2500,
                  'checkpoint_every': 10000}
    }
}


def deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_value(raw: str) -> Any:
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        lowered = raw.lower()
        if lowered in ('true', 'false'):
            return lowered == 'true'
        if lowered in ('none', 'null'):
            return None
        return raw


def set_dotted(data: Dict[str, Any], dotted_key: str, value: Any):
    parts = dotted_key.strip().split('.')
    if not all(parts):
        raise ValueError(f"Malformed config key '{dotted_key}'")
    node = data
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ValueError(f"Config key '{dotted_key}' descends into a non-section value")
        node = child
    node[parts[-1]] = value


def parse_key_value_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a ``key = value`` config file into a nested dictionary"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    data: Dict[str, Any] = {}
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ValueError(f"{path}:{number}: expected 'key = value', got '{line}'")
        key, value = line.split('=', 1)
        set_dotted(data, key, parse_value(value))
    return data


def apply_overrides(data: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply ``key=value`` strings on top of ``data``"""
    result = copy.deepcopy(data)
    for item in overrides:
        if '=' not in item:
            raise ValueError(f"Override '{item}' is not of the form key=value")
        key, value = item.split('=', 1)
        set_dotted(result, key, parse_value(value))
    return result


def load_run_config(config_path: Optional[Union[str, Path]] = None, preset: Optional[str] = None,
                    overrides: Iterable[str] = ()) -> RunConfig:
    """
    Build a RunConfig: preset, then config file, then overrides

    Raises:
        ValueError: unknown preset or malformed file/override
        pydantic.ValidationError: unknown key or invalid value (the key is named)
    """
    data: Dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"Unknown preset '{preset}', expected one of {sorted(PRESETS)}")
        data = copy.deepcopy(PRESETS[preset])
    if config_path is not None:
        data = deep_merge(data, parse_key_value_file(config_path))
    data = apply_overrides(data, overrides)
    config = RunConfig.model_validate(data)
    logger.debug(f"Run config resolved (preset={preset}, file={config_path})")
    return config


def dump_key_value(config: RunConfig) -> str:
    """Render a RunConfig back into the key/value file format"""
    lines = []

    def walk(prefix: str, node: Any):
        if isinstance(node, dict):
            for key, value in node.items():
                walk(f"{prefix}.{key}" if prefix else key, value)
        else:
            lines.append(f"{prefix} = {json.dumps(node)}")

    walk('', config.model_dump(mode='json'))
    return '\n'.join(lines) + '\n'
