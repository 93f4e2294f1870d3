"""
Trainable sample proposers for the NeRF-ID toolkit
Consume coarse-network features and their depths along the ray and emit N_f
fine sample locations, optionally with N_c + N_f importance logits
"""

import logging
from dataclasses import dataclass
from typing import Dict, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

import gradcore as gc
from gradcore import Tensor
from field import dense, uniform_init
from render import SamplePositions, sort_samples

logger = logging.getLogger(__name__)

ARCHITECTURES = (
    'transformer',
    'pool',
    'mlpmix',
    'blind',
    'pool_no_position',
    'pool_concat',
    'pool_learnt_position'
)

Architecture = Literal['transformer', 'pool', 'mlpmix', 'blind',
                       'pool_no_position', 'pool_concat', 'pool_learnt_position']


class ProposerConfig(BaseModel):
    """Proposer architecture and the internal widths of each variant"""
    model_config = ConfigDict(extra='forbid')

    architecture: Architecture = 'mlpmix'
    n_coarse: int = Field(64, ge=1)
    n_fine: int = Field(128, ge=1)
    with_importance: bool = True
    feature_dim: int = Field(256, ge=2)
    pre_pool_activation: Literal['relu', 'identity'] = 'relu'
    concat_encoding_dim: int = Field(32, ge=2)
    depth_encoding_octaves: int = Field(7, ge=1)
    mixer_token_hidden: int = Field(64, ge=1)
    mixer_channel_hidden: int = Field(256, ge=1)
    mixer_positional_encoding: bool = True
    transformer_dim: int = Field(16, ge=2)
    transformer_ff: int = Field(64, ge=1)
    transformer_positional_encoding: bool = True
    norm_epsilon: float = 1e-5


@dataclass
class ProposerInput:
    """Coarse features (R, N_c, F) and their sorted normalized depths (R, N_c)"""
    features: Tensor
    positions: np.ndarray


@dataclass
class ProposalSet:
    """
    Raw (unsorted) proposals in (0, 1), one stable slot per output, plus
    optional importance logits. ``importance_layout`` is 'merged' when logit k
    scores the k-th sample of the merged, sorted set, and 'source' when the
    first N_c logits score coarse samples and the rest score proposal slots.
    """
    t_fine: Tensor
    importance_logits: Optional[Tensor] = None
    importance_layout: str = 'merged'

    def sorted(self) -> SamplePositions:
        return sort_samples(self.t_fine, 'learned')


@dataclass
class ImportanceSelection:
    """Samples kept by importance pruning"""
    keep_mask: np.ndarray
    kept_fraction: float

    def kept_indices(self, ray: int = 0) -> np.ndarray:
        return np.flatnonzero(self.keep_mask[ray])

    def subset(self, merged: SamplePositions, ray: int = 0) -> SamplePositions:
        values = merged.values.reshape(-1, merged.values.shape[-1])[ray]
        return SamplePositions(gc.constant(values[self.kept_indices(ray)]), merged.provenance)


def depth_encoding(t: np.ndarray, dim: int, octaves: int = 7) -> np.ndarray:
    """Sinusoidal encoding of scalar depths: (..., N) -> (..., N, dim)"""
    if dim % 2:
        raise ValueError(f"depth encoding dimension must be even, got {dim}")
    freqs = np.pi * 2.0 ** np.linspace(0.0, octaves, dim // 2)
    angles = np.asarray(t)[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def logit_spread(n: int) -> np.ndarray:
    """Logits whose sigmoids are the bin centers (i + 0.5) / n"""
    p = (np.arange(n) + 0.5) / n
    return np.log(p / (1.0 - p))


class Proposer:
    """Base class: parameter bookkeeping, input validation and the importance head"""

    architecture = ''

    def __init__(self, config: ProposerConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._params: Dict[str, Tensor] = {}

    def _linear(self, name: str, fan_in: int, fan_out: int, gain: float = 1.0,
                bias: Optional[np.ndarray] = None):
        self._params[f"{name}.weight"] = gc.parameter(uniform_init(self.rng, fan_in, fan_out, gain),
                                                      name=f"{name}.weight")
        self._params[f"{name}.bias"] = gc.parameter(np.zeros(fan_out) if bias is None else bias,
                                                    name=f"{name}.bias")

    def _norm(self, name: str, dim: int):
        self._params[f"{name}.scale"] = gc.parameter(np.ones(dim), name=f"{name}.scale")
        self._params[f"{name}.shift"] = gc.parameter(np.zeros(dim), name=f"{name}.shift")

    def _apply(self, name: str, x: Tensor) -> Tensor:
        return dense(x, self._params[f"{name}.weight"], self._params[f"{name}.bias"])

    def _normalize(self, name: str, x: Tensor) -> Tensor:
        y = gc.standardize(x, self.config.norm_epsilon)
        return gc.add(gc.mul(y, self._params[f"{name}.scale"]), self._params[f"{name}.shift"])

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self._params)

    def parameter_count(self) -> int:
        return int(np.sum([p.size for p in self._params.values()]))

    @property
    def n_slots(self) -> int:
        return self.config.n_coarse + self.config.n_fine

    def _validate(self, inputs: ProposerInput):
        cfg = self.config
        shape = inputs.features.shape
        if len(shape) != 3 or shape[1:] != (cfg.n_coarse, cfg.feature_dim):
            raise gc.ShapeError(f"{self.architecture} proposer expects features (R, {cfg.n_coarse}, "
                                f"{cfg.feature_dim}), got {shape}")
        if inputs.positions.shape != shape[:2]:
            raise gc.ShapeError(f"{self.architecture} proposer: positions {inputs.positions.shape} "
                                f"do not match features {shape}")
        if np.any(np.diff(inputs.positions, axis=-1) < 0):
            raise ValueError(f"{self.architecture} proposer: positions must be sorted ascending")

    def propose(self, inputs: ProposerInput) -> ProposalSet:
        self._validate(inputs)
        return self._propose(inputs)

    def _propose(self, inputs: ProposerInput) -> ProposalSet:
        raise NotImplementedError

    def _decode(self, pooled: Tensor) -> ProposalSet:
        t_fine = gc.sigmoid(self._apply('decode', pooled))
        logits = None
        if self.config.with_importance:
            logits = self._apply('importance', gc.stop_gradient(pooled))
        return ProposalSet(t_fine=t_fine, importance_logits=logits, importance_layout='merged')

    def _add_decoders(self, width: int):
        self._linear('decode', width, self.config.n_fine, bias=logit_spread(self.config.n_fine))
        if self.config.with_importance:
            self._linear('importance', width, self.n_slots)


class PoolProposer(Proposer):
    """
    Per-point (feature + depth encoding) -> FC -> ReLU, averaged into one ray
    vector, decoded by an FC. The ablations vary how depth enters:
    'sum' (default), 'none', 'concat' (32-D encoding concatenated) and
    'learnt' (one learnt embedding per coarse slot).
    """

    POSITION_MODES = {
        'pool': 'sum',
        'pool_no_position': 'none',
        'pool_concat': 'concat',
        'pool_learnt_position': 'learnt'
    }

    def __init__(self, config: ProposerConfig, rng: Optional[np.random.Generator] = None):
        super().__init__(config, rng)
        self.architecture = config.architecture
        self.position_mode = self.POSITION_MODES[config.architecture]
        width = config.feature_dim
        fan_in = width + (config.concat_encoding_dim if self.position_mode == 'concat' else 0)
        if self.position_mode == 'learnt':
            embedding = depth_encoding((np.arange(config.n_coarse) + 0.5) / config.n_coarse, width,
                                       config.depth_encoding_octaves)
            self._params['position_embedding'] = gc.parameter(embedding, name='position_embedding')
        self._linear('embed', fan_in, width, gain=np.sqrt(6.0))
        self._add_decoders(width)

    def _propose(self, inputs: ProposerInput) -> ProposalSet:
        cfg = self.config
        x = inputs.features
        if self.position_mode == 'sum':
            x = gc.add(x, gc.constant(depth_encoding(inputs.positions, cfg.feature_dim,
                                                     cfg.depth_encoding_octaves)))
        elif self.position_mode == 'concat':
            x = gc.concat([x, gc.constant(depth_encoding(inputs.positions, cfg.concat_encoding_dim,
                                                         cfg.depth_encoding_octaves))], axis=-1)
        elif self.position_mode == 'learnt':
            x = gc.add(x, gc.expand(self._params['position_embedding'], (x.shape[0],)))

        h = self._apply('embed', x)
        if cfg.pre_pool_activation == 'relu':
            h = gc.relu(h)
        return self._decode(gc.mean(h, axis=1))


class MLPMixProposer(Proposer):
    """One pre-norm mixer block (token mixing over N_c, channel mixing over F) + average pooling"""

    architecture = 'mlpmix'

    def __init__(self, config: ProposerConfig, rng: Optional[np.random.Generator] = None):
        super().__init__(config, rng)
        n, width = config.n_coarse, config.feature_dim
        self._norm('token_norm', width)
        self._linear('token_mix.0', n, config.mixer_token_hidden, gain=np.sqrt(6.0))
        self._linear('token_mix.1', config.mixer_token_hidden, n)
        self._norm('channel_norm', width)
        self._linear('channel_mix.0', width, config.mixer_channel_hidden, gain=np.sqrt(6.0))
        self._linear('channel_mix.1', config.mixer_channel_hidden, width)
        self._add_decoders(width)

    def _propose(self, inputs: ProposerInput) -> ProposalSet:
        cfg = self.config
        x = inputs.features
        if cfg.mixer_positional_encoding:
            x = gc.add(x, gc.constant(depth_encoding(inputs.positions, cfg.feature_dim,
                                                     cfg.depth_encoding_octaves)))

        tokens = gc.transpose(self._normalize('token_norm', x))
        tokens = self._apply('token_mix.1', gc.relu(self._apply('token_mix.0', tokens)))
        x = gc.add(x, gc.transpose(tokens))

        channels = self._normalize('channel_norm', x)
        channels = self._apply('channel_mix.1', gc.relu(self._apply('channel_mix.0', channels)))
        x = gc.add(x, channels)
        return self._decode(gc.mean(x, axis=1))


class TransformerProposer(Proposer):
    """
    Features projected to 16-D, one single-head encoder block, then N_f learnt
    queries cross-attending to the encoder output in one decoder block
    """

    architecture = 'transformer'

    def __init__(self, config: ProposerConfig, rng: Optional[np.random.Generator] = None):
        super().__init__(config, rng)
        d = config.transformer_dim
        self._linear('project', config.feature_dim, d)
        self._norm('encoder.attn_norm', d)
        self._attention_params('encoder.attn', d)
        self._norm('encoder.ff_norm', d)
        self._linear('encoder.ff.0', d, config.transformer_ff, gain=np.sqrt(6.0))
        self._linear('encoder.ff.1', config.transformer_ff, d)

        self._params['queries'] = gc.parameter(self.rng.normal(0.0, 1.0, (config.n_fine, d)), name='queries')
        self._norm('decoder.query_norm', d)
        self._norm('decoder.memory_norm', d)
        self._attention_params('decoder.attn', d)
        self._norm('decoder.ff_norm', d)
        self._linear('decoder.ff.0', d, config.transformer_ff, gain=np.sqrt(6.0))
        self._linear('decoder.ff.1', config.transformer_ff, d)

        self._linear('decode', d, 1)
        if config.with_importance:
            self._linear('importance_coarse', d, 1)
            self._linear('importance_fine', d, 1)

    def _attention_params(self, prefix: str, d: int):
        for name in ('query', 'key', 'value', 'output'):
            self._linear(f"{prefix}.{name}", d, d)

    def attend(self, prefix: str, query: Tensor, memory: Tensor) -> Tensor:
        """Single-head scaled dot-product attention of ``query`` over ``memory``"""
        d = self.config.transformer_dim
        q = self._apply(f"{prefix}.query", query)
        k = self._apply(f"{prefix}.key", memory)
        v = self._apply(f"{prefix}.value", memory)
        scores = gc.mul(gc.matmul(q, gc.transpose(k)), 1.0 / np.sqrt(d))
        return self._apply(f"{prefix}.output", gc.matmul(gc.softmax(scores), v))

    def _feed_forward(self, prefix: str, x: Tensor) -> Tensor:
        return self._apply(f"{prefix}.1", gc.relu(self._apply(f"{prefix}.0", x)))

    def encode(self, inputs: ProposerInput) -> Tensor:
        cfg = self.config
        x = self._apply('project', inputs.features)
        if cfg.transformer_positional_encoding:
            x = gc.add(x, gc.constant(depth_encoding(inputs.positions, cfg.transformer_dim,
                                                     cfg.depth_encoding_octaves)))
        normed = self._normalize('encoder.attn_norm', x)
        x = gc.add(x, self.attend('encoder.attn', normed, normed))
        return gc.add(x, self._feed_forward('encoder.ff', self._normalize('encoder.ff_norm', x)))

    def _propose(self, inputs: ProposerInput) -> ProposalSet:
        cfg = self.config
        rays = inputs.features.shape[0]
        memory = self.encode(inputs)

        q = gc.expand(self._params['queries'], (rays,))
        q = gc.add(q, self.attend('decoder.attn', self._normalize('decoder.query_norm', q),
                                  self._normalize('decoder.memory_norm', memory)))
        q = gc.add(q, self._feed_forward('decoder.ff', self._normalize('decoder.ff_norm', q)))

        t_fine = gc.sigmoid(gc.reshape(self._apply('decode', q), (rays, cfg.n_fine)))
        logits = None
        if cfg.with_importance:
            coarse = gc.reshape(self._apply('importance_coarse', gc.stop_gradient(memory)), (rays, cfg.n_coarse))
            fine = gc.reshape(self._apply('importance_fine', gc.stop_gradient(q)), (rays, cfg.n_fine))
            logits = gc.concat([coarse, fine], axis=-1)
        return ProposalSet(t_fine=t_fine, importance_logits=logits, importance_layout='source')


class BlindProposer(Proposer):
    """Ignores its input: N_f free logits shared by every ray"""

    architecture = 'blind'

    def __init__(self, config: ProposerConfig, rng: Optional[np.random.Generator] = None):
        super().__init__(config, rng)
        self._params['logits'] = gc.parameter(logit_spread(config.n_fine), name='logits')
        if config.with_importance:
            self._params['importance'] = gc.parameter(np.zeros(self.n_slots), name='importance')

    def _validate(self, inputs: ProposerInput):
        if inputs.features.ndim != 3:
            raise gc.ShapeError(f"blind proposer expects features (R, N_c, F), got {inputs.features.shape}")

    def _propose(self, inputs: ProposerInput) -> ProposalSet:
        rays = inputs.features.shape[0]
        t_fine = gc.sigmoid(gc.expand(self._params['logits'], (rays,)))
        logits = None
        if self.config.with_importance:
            logits = gc.expand(self._params['importance'], (rays,))
        return ProposalSet(t_fine=t_fine, importance_logits=logits, importance_layout='merged')


_REGISTRY = {
    'transformer': TransformerProposer,
    'pool': PoolProposer,
    'mlpmix': MLPMixProposer,
    'blind': BlindProposer,
    'pool_no_position': PoolProposer,
    'pool_concat': PoolProposer,
    'pool_learnt_position': PoolProposer
}


def build_proposer(config: ProposerConfig, rng: Optional[np.random.Generator] = None) -> Proposer:
    proposer = _REGISTRY[config.architecture](config, rng)
    logger.info(f"Built {config.architecture} proposer with {proposer.parameter_count():,} parameters")
    return proposer


def propose_pool(inputs: ProposerInput, proposer: PoolProposer) -> ProposalSet:
    return proposer.propose(inputs)


def propose_mlpmix(inputs: ProposerInput, proposer: MLPMixProposer) -> ProposalSet:
    return proposer.propose(inputs)


def propose_transformer(inputs: ProposerInput, proposer: TransformerProposer) -> ProposalSet:
    return proposer.propose(inputs)


def propose_blind(proposer: BlindProposer, rays: int = 1) -> ProposalSet:
    features = gc.constant(np.zeros((rays, proposer.config.n_coarse, proposer.config.feature_dim)))
    positions = np.broadcast_to((np.arange(proposer.config.n_coarse) + 0.5) / proposer.config.n_coarse,
                                (rays, proposer.config.n_coarse))
    return proposer.propose(ProposerInput(features, positions))


def _threshold_logit(threshold: float) -> float:
    if threshold <= 0:
        return -np.inf
    if threshold >= 1:
        return np.inf
    return float(np.log(threshold / (1.0 - threshold)))


def importance_filter(merged: SamplePositions, logits: Union[Tensor, np.ndarray],
                      threshold: float) -> ImportanceSelection:
    """
    Keep samples whose predicted importance sigmoid(logit) >= threshold

    Args:
        merged: Merged, sorted samples (..., N)
        logits: Importance logits aligned with ``merged``
        threshold: Probability threshold in [0, 1]

    Returns:
        ImportanceSelection; a ray with no survivor keeps its highest-scoring sample
    """
    values = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if values.shape != merged.values.shape:
        raise gc.ShapeError(f"importance_filter: {values.shape} logits for {merged.values.shape} samples")
    scores = values.reshape(-1, values.shape[-1])
    keep = scores >= _threshold_logit(threshold)
    empty = ~keep.any(axis=-1)
    if np.any(empty):
        keep[np.flatnonzero(empty), np.argmax(scores[empty], axis=-1)] = True
    return ImportanceSelection(keep_mask=keep, kept_fraction=float(keep.mean()))
