"""
Radiance-field networks for the NeRF-ID toolkit
Positional encoding and the coarse/fine MLPs mapping (position, view direction)
to (density, color), exposing the pre-density feature vector to the proposer
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

import gradcore as gc
from gradcore import Tensor

logger = logging.getLogger(__name__)

DIRECTION_TOLERANCE = 1e-6


class EncodingConfig(BaseModel):
    """Sinusoidal encoding frequencies for positions and view directions"""
    model_config = ConfigDict(extra='forbid')

    num_frequencies_position: int = Field(10, ge=1)
    num_frequencies_direction: int = Field(4, ge=1)
    include_input: bool = True


class FieldConfig(BaseModel):
    """
    Backbone dimensions. The defaults reproduce the 8 x 256 NeRF trunk with the
    encoded position re-injected at the input of layer index 5.
    """
    model_config = ConfigDict(extra='forbid')

    depth: int = Field(8, ge=2)
    width: int = Field(256, ge=1)
    skip_layer: int = Field(5, ge=1)
    color_width: int = Field(128, ge=1)
    encoding: EncodingConfig = Field(default_factory=EncodingConfig)


@dataclass
class FieldOutput:
    """Per-sample density, color and the feature vector before the density projection"""
    sigma: Tensor
    color: Tensor
    feature: Tensor


def encoded_dimension(input_dim: int, num_frequencies: int, include_input: bool = True) -> int:
    return input_dim * ((1 if include_input else 0) + 2 * num_frequencies)


def positional_encode(x: Union[Tensor, np.ndarray], num_frequencies: int,
                      include_input: bool = True) -> Tensor:
    """
    Encode the last axis as [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]

    Args:
        x: Values to encode, shape (..., d)
        num_frequencies: L, number of octaves
        include_input: Prepend the raw input

    Returns:
        Tensor of shape (..., d * (include_input + 2L))
    """
    if num_frequencies < 1:
        raise ValueError(f"num_frequencies must be >= 1, got {num_frequencies}")
    x = x if isinstance(x, Tensor) else gc.constant(x)
    parts = [x] if include_input else []
    for k in range(num_frequencies):
        scaled = gc.mul(x, (2.0 ** k) * np.pi)
        parts.append(gc.sin(scaled))
        parts.append(gc.cos(scaled))
    return gc.concat(parts, axis=-1)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return gc.add(gc.matmul(x, weight), bias)


def uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    bound = gain * np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class FieldNetwork:
    """Radiance-field MLP (coarse and fine networks are two independent instances)"""

    def __init__(self, config: Optional[FieldConfig] = None,
                 rng: Optional[np.random.Generator] = None):
        """
        Initialize field parameters

        Args:
            config: FieldConfig (defaults to the NeRF backbone)
            rng: Generator for the He-style uniform initialization
        """
        self.config = config or FieldConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        cfg = self.config
        if cfg.skip_layer >= cfg.depth:
            raise ValueError(f"skip_layer {cfg.skip_layer} must be < depth {cfg.depth}")

        self.position_dim = encoded_dimension(3, cfg.encoding.num_frequencies_position,
                                              cfg.encoding.include_input)
        self.direction_dim = encoded_dimension(3, cfg.encoding.num_frequencies_direction,
                                               cfg.encoding.include_input)
        self._params: Dict[str, Tensor] = {}

        for i in range(cfg.depth):
            fan_in = self.position_dim if i == 0 else cfg.width
            if i == cfg.skip_layer:
                fan_in += self.position_dim
            self._add(f"trunk.{i}", rng, fan_in, cfg.width, gain=np.sqrt(6.0))
        self._add('density', rng, cfg.width, 1, gain=1.0)
        self._add('color_hidden', rng, cfg.width + self.direction_dim, cfg.color_width, gain=np.sqrt(6.0))
        self._add('color_out', rng, cfg.color_width, 3, gain=1.0)

    def _add(self, name: str, rng: np.random.Generator, fan_in: int, fan_out: int, gain: float):
        self._params[f"{name}.weight"] = gc.parameter(uniform_init(rng, fan_in, fan_out, gain),
                                                      name=f"{name}.weight")
        self._params[f"{name}.bias"] = gc.parameter(np.zeros(fan_out), name=f"{name}.bias")

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self._params)

    def parameter_count(self) -> int:
        return int(np.sum([p.size for p in self._params.values()]))

    def _layer(self, name: str, x: Tensor) -> Tensor:
        return dense(x, self._params[f"{name}.weight"], self._params[f"{name}.bias"])

    def features(self, positions: Union[Tensor, np.ndarray]) -> Tensor:
        """Trunk activations (the 256-D feature), independent of view direction"""
        cfg = self.config
        encoded = positional_encode(positions, cfg.encoding.num_frequencies_position,
                                    cfg.encoding.include_input)
        h = encoded
        for i in range(cfg.depth):
            if i == cfg.skip_layer:
                h = gc.concat([encoded, h], axis=-1)
            h = gc.relu(self._layer(f"trunk.{i}", h))
        return h

    def query(self, positions: Union[Tensor, np.ndarray], directions: np.ndarray,
              density_noise_std: float = 0.0,
              rng: Optional[np.random.Generator] = None) -> FieldOutput:
        """
        Evaluate the field at a batch of points

        Args:
            positions: World points, shape (..., 3); a Tensor when gradients must reach them
            directions: Unit view directions, same shape as positions
            density_noise_std: Std of Normal noise added before the density ReLU (training only)
            rng: Generator for the density noise

        Returns:
            FieldOutput with sigma (...), color (..., 3), feature (..., width)
        """
        directions = np.asarray(directions)
        if directions.shape != tuple(positions.shape):
            raise gc.ShapeError(f"query_field: directions {directions.shape} do not match positions {positions.shape}")
        norms = np.linalg.norm(directions, axis=-1)
        if np.any(np.abs(norms - 1.0) > DIRECTION_TOLERANCE):
            worst = float(np.max(np.abs(norms - 1.0)))
            raise ValueError(f"query_field: view directions must be unit vectors (max |norm - 1| = {worst:.3e})")

        feature = self.features(positions)
        pre_density = self._layer('density', feature)
        if density_noise_std > 0:
            rng = rng if rng is not None else np.random.default_rng()
            pre_density = gc.add(pre_density, gc.constant(rng.normal(0.0, density_noise_std, pre_density.shape)))
        sigma = gc.reshape(gc.relu(pre_density), pre_density.shape[:-1])

        cfg = self.config
        encoded_dirs = positional_encode(directions, cfg.encoding.num_frequencies_direction,
                                         cfg.encoding.include_input)
        hidden = gc.relu(self._layer('color_hidden', gc.concat([feature, encoded_dirs], axis=-1)))
        color = gc.sigmoid(self._layer('color_out', hidden))
        return FieldOutput(sigma=sigma, color=color, feature=feature)


def query_field(net: FieldNetwork, positions: Union[Tensor, np.ndarray], directions: np.ndarray,
                density_noise_std: float = 0.0,
                rng: Optional[np.random.Generator] = None) -> FieldOutput:
    return net.query(positions, directions, density_noise_std, rng)
