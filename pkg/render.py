"""
Volume rendering for the NeRF-ID toolkit
Rendering equation, stratified coarse sampling and the heuristic inverse-CDF
fine sampler (the non-learned half of coarse-to-fine sampling)
"""

import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

import gradcore as gc
from gradcore import Tensor
from config import CONFIG
from field import FieldOutput

logger = logging.getLogger(__name__)

PDF_EPSILON = 1e-5
UNIT_TOLERANCE = 1e-6

BACKGROUNDS = {
    'white': (1.0, 1.0, 1.0),
    'black': (0.0, 0.0, 0.0)
}


class RenderConfig(BaseModel):
    """Sampler and inference settings shared by training and rendering"""
    model_config = ConfigDict(extra='forbid')

    heuristic_stratified: bool = True
    chunk_rays: int = Field(CONFIG['runtime']['render_chunk_rays'], ge=1)
    importance_threshold: Optional[float] = Field(None, ge=0.0, le=1.0)


# ============================================================================
# RAYS
# ============================================================================

@dataclass
class Ray:
    """Single ray with world-space depth bounds"""
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=np.float64)
        if not self.t_near < self.t_far:
            raise ValueError(f"Ray needs t_near < t_far, got {self.t_near} >= {self.t_far}")
        if abs(np.linalg.norm(self.direction) - 1.0) > UNIT_TOLERANCE:
            raise ValueError(f"Ray direction must be a unit vector, got norm {np.linalg.norm(self.direction):.8f}")


@dataclass
class RayBatch:
    """Vectorized rays: origins/directions (R, 3), near/far (R,)"""
    origins: np.ndarray
    directions: np.ndarray
    near: np.ndarray
    far: np.ndarray

    def __post_init__(self):
        self.origins = np.asarray(self.origins, dtype=np.float64).reshape(-1, 3)
        self.directions = np.asarray(self.directions, dtype=np.float64).reshape(-1, 3)
        count = len(self.origins)
        self.near = np.broadcast_to(np.asarray(self.near, dtype=np.float64), (count,)).copy()
        self.far = np.broadcast_to(np.asarray(self.far, dtype=np.float64), (count,)).copy()
        if np.any(self.near >= self.far):
            raise ValueError("RayBatch needs near < far on every ray")

    @classmethod
    def from_rays(cls, rays: Sequence[Ray]) -> 'RayBatch':
        return cls(origins=np.stack([r.origin for r in rays]),
                   directions=np.stack([r.direction for r in rays]),
                   near=np.array([r.t_near for r in rays]),
                   far=np.array([r.t_far for r in rays]))

    def __len__(self):
        return len(self.origins)

    def subset(self, index) -> 'RayBatch':
        return RayBatch(self.origins[index], self.directions[index], self.near[index], self.far[index])

    def chunks(self, size: int) -> Iterator[Tuple[slice, 'RayBatch']]:
        for start in range(0, len(self), size):
            window = slice(start, min(start + size, len(self)))
            yield window, self.subset(window)

    def points(self, t: Union[Tensor, np.ndarray]) -> Tensor:
        """World points at normalized depths ``t`` (R, N) -> (R, N, 3)"""
        span = (self.far - self.near)[:, None]
        if not isinstance(t, Tensor) or not t.requires_grad:
            values = t.data if isinstance(t, Tensor) else np.asarray(t)
            z = self.near[:, None] + values * span
            return gc.constant(self.origins[:, None, :] + z[..., None] * self.directions[:, None, :])
        n = t.shape[-1]
        z = gc.add(gc.mul(t, gc.constant(np.broadcast_to(span, t.shape))),
                   gc.constant(np.broadcast_to(self.near[:, None], t.shape)))
        offsets = gc.matmul(gc.reshape(z, (len(self), n, 1)), gc.constant(self.directions[:, None, :]))
        return gc.add(offsets, gc.constant(np.broadcast_to(self.origins[:, None, :], (len(self), n, 3))))

    def view_directions(self, n: int) -> np.ndarray:
        return np.broadcast_to(self.directions[:, None, :], (len(self), n, 3))


# ============================================================================
# SAMPLE POSITIONS
# ============================================================================

@dataclass
class SamplePositions:
    """
    Normalized depths along rays (0 = near plane, 1 = far plane)

    Merged sets also carry, per output slot, which operand it came from
    (``source``: 0 first, 1 second), its index inside that operand, and the
    permutation ``order`` into the concatenation of both operands.
    """
    t: Tensor
    provenance: str
    source: Optional[np.ndarray] = None
    source_index: Optional[np.ndarray] = None
    order: Optional[np.ndarray] = None

    def __post_init__(self):
        if not isinstance(self.t, Tensor):
            self.t = gc.constant(self.t)

    @property
    def values(self) -> np.ndarray:
        return self.t.data

    def __len__(self):
        return self.t.shape[-1]

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.values, axis=-1) >= 0))

    def in_unit_interval(self) -> bool:
        return bool(np.all((self.values >= 0) & (self.values <= 1)))


@dataclass
class RenderResult:
    """Composited color plus per-sample weights and transmittance"""
    color: Tensor
    weights: Tensor
    transmittance: Tensor
    accumulated_alpha: Tensor
    depth: Tensor


@dataclass
class PiecewisePdf:
    """Piecewise-constant density over [0, 1]: bin edges (..., B+1), bin masses (..., B)"""
    edges: np.ndarray
    masses: np.ndarray

    def cdf(self) -> np.ndarray:
        zeros = np.zeros(self.masses.shape[:-1] + (1,))
        return np.concatenate([zeros, np.cumsum(self.masses, axis=-1)], axis=-1)


def stratified_sample(n: int, rng: Optional[np.random.Generator] = None, jitter: bool = False,
                      batch_shape: Tuple[int, ...] = ()) -> SamplePositions:
    """
    Equally spaced coarse samples

    Args:
        n: Samples per ray (>= 2)
        rng: Generator for the jitter
        jitter: One uniform draw per bin [i/n, (i+1)/n) instead of bin centers
        batch_shape: Leading shape (e.g. (num_rays,))

    Returns:
        SamplePositions with provenance 'stratified'
    """
    if n < 2:
        raise ValueError(f"stratified_sample needs n >= 2, got {n}")
    shape = tuple(batch_shape) + (n,)
    if jitter:
        rng = rng if rng is not None else np.random.default_rng()
        offsets = rng.random(shape)
    else:
        offsets = np.full(shape, 0.5)
    t = (np.arange(n) + offsets) / n
    return SamplePositions(gc.constant(t), 'stratified')


# ============================================================================
# RENDERING EQUATION
# ============================================================================

def interval_lengths(t: Tensor) -> Tensor:
    """delta_i = t_{i+1} - t_i, with the last interval running to the far plane"""
    far = gc.constant(np.ones(t.shape[:-1] + (1,)))
    return gc.sub(gc.concat([gc.slice_axis(t, 1, None, axis=-1), far], axis=-1), t)


def kept_interval_lengths(t: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Intervals between consecutive kept samples; dropped samples get 0"""
    masked = np.where(keep, t, np.inf)
    suffix_min = np.minimum.accumulate(masked[..., ::-1], axis=-1)[..., ::-1]
    following = np.concatenate([suffix_min[..., 1:], np.full(t.shape[:-1] + (1,), np.inf)], axis=-1)
    following = np.where(np.isinf(following), 1.0, following)
    return np.where(keep, following - t, 0.0)


def composite(sigma: Tensor, color: Tensor, delta: Tensor,
              background: Sequence[float], t: Optional[Tensor] = None) -> RenderResult:
    """
    Alpha-composite samples front to back

    Args:
        sigma: Densities (..., N)
        color: Colors (..., N, 3)
        delta: Interval lengths (..., N)
        background: RGB composited with weight 1 - sum(w)
        t: Sample depths, used for the expected depth

    Returns:
        RenderResult shaped like the leading axes
    """
    lead = sigma.shape[:-1]
    n = sigma.shape[-1]
    if color.shape != sigma.shape + (3,) or delta.shape != sigma.shape:
        raise gc.ShapeError(f"composite: sigma {sigma.shape}, color {color.shape}, delta {delta.shape} disagree")
    m = int(np.prod(lead)) if lead else 1

    sigma = gc.reshape(sigma, (m, n))
    delta = gc.reshape(delta, (m, n))
    color = gc.reshape(color, (m, n, 3))

    optical = gc.mul(sigma, delta)
    alpha = gc.sub(1.0, gc.exp(gc.neg(optical)))
    preceding = np.triu(np.ones((n, n)), k=1)  # [j, i] = 1 where j < i
    transmittance = gc.exp(gc.neg(gc.matmul(optical, gc.constant(preceding))))
    weights = gc.mul(transmittance, alpha)
    accumulated = gc.sum(weights, axis=-1)

    rgb = gc.reshape(gc.matmul(gc.reshape(weights, (m, 1, n)), color), (m, 3))
    leftover = gc.reshape(gc.sub(1.0, accumulated), (m, 1))
    rgb = gc.add(rgb, gc.matmul(leftover, gc.constant(np.asarray(background, dtype=np.float64).reshape(1, 3))))

    if t is not None:
        depth = gc.sum(gc.mul(weights, gc.reshape(t, (m, n))), axis=-1)
    else:
        depth = gc.constant(np.zeros(m))

    return RenderResult(
        color=gc.reshape(rgb, lead + (3,)),
        weights=gc.reshape(weights, lead + (n,)),
        transmittance=gc.reshape(transmittance, lead + (n,)),
        accumulated_alpha=gc.reshape(accumulated, lead),
        depth=gc.reshape(depth, lead)
    )


def render_ray(t: SamplePositions, outputs: FieldOutput, background: Sequence[float],
               keep_mask: Optional[np.ndarray] = None) -> RenderResult:
    """
    Evaluate the rendering equation on sorted samples

    Args:
        t: Sorted normalized depths (..., N)
        outputs: Field outputs at those depths
        background: RGB color of infinity
        keep_mask: Optional boolean mask of samples that survived importance
            pruning; dropped samples contribute nothing and their interval is
            absorbed by the preceding kept sample

    Returns:
        RenderResult
    """
    if outputs.sigma.shape != t.t.shape:
        raise gc.ShapeError(f"render_ray: {outputs.sigma.shape} densities for {t.t.shape} samples")
    if not t.is_sorted():
        raise ValueError("render_ray: sample positions must be sorted ascending")

    if keep_mask is None:
        delta = interval_lengths(t.t)
        sigma = outputs.sigma
    else:
        keep_mask = np.asarray(keep_mask, dtype=bool)
        delta = gc.constant(kept_interval_lengths(t.values, keep_mask))
        sigma = gc.mul(outputs.sigma, gc.constant(keep_mask.astype(np.float64)))
    return composite(sigma, outputs.color, delta, background, t.t)


# ============================================================================
# HEURISTIC FINE SAMPLING
# ============================================================================

def heuristic_pdf(weights: Union[Tensor, np.ndarray], t_coarse: SamplePositions,
                  epsilon: float = PDF_EPSILON) -> PiecewisePdf:
    """
    Piecewise-constant pdf from coarse rendering weights

    Bin edges sit at midpoints between consecutive coarse samples, with 0 and 1
    as the outer edges; bin mass is proportional to w_i + epsilon.
    """
    w = weights.data if isinstance(weights, Tensor) else np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("heuristic_pdf: weights must be non-negative")
    t = t_coarse.values
    if w.shape != t.shape:
        raise gc.ShapeError(f"heuristic_pdf: weights {w.shape} vs samples {t.shape}")
    lead = t.shape[:-1]
    mids = 0.5 * (t[..., 1:] + t[..., :-1])
    edges = np.concatenate([np.zeros(lead + (1,)), mids, np.ones(lead + (1,))], axis=-1)
    padded = w + epsilon
    masses = padded / padded.sum(axis=-1, keepdims=True)
    return PiecewisePdf(edges=edges, masses=masses)


def inverse_cdf_sample(pdf: PiecewisePdf, n: int, rng: Optional[np.random.Generator] = None,
                       deterministic: bool = False, stratified: bool = True) -> SamplePositions:
    """
    Draw samples through the inverse CDF with linear interpolation inside bins

    Args:
        pdf: Normalized piecewise-constant pdf
        n: Samples per ray
        rng: Generator for the uniforms
        deterministic: Use u = (i + 0.5) / n
        stratified: When stochastic, draw one uniform per stratum (otherwise i.i.d., sorted)

    Returns:
        Sorted SamplePositions with provenance 'heuristic'
    """
    lead = pdf.masses.shape[:-1]
    if deterministic:
        u = np.broadcast_to((np.arange(n) + 0.5) / n, lead + (n,))
    else:
        rng = rng if rng is not None else np.random.default_rng()
        if stratified:
            u = (np.arange(n) + rng.random(lead + (n,))) / n
        else:
            u = np.sort(rng.random(lead + (n,)), axis=-1)

    cdf = pdf.cdf()
    bins = pdf.masses.shape[-1]
    index = (cdf[..., None, :] <= u[..., :, None]).sum(axis=-1) - 1
    index = np.clip(index, 0, bins - 1)

    cdf_lo = np.take_along_axis(cdf, index, axis=-1)
    mass = np.take_along_axis(pdf.masses, index, axis=-1)
    edge_lo = np.take_along_axis(pdf.edges, index, axis=-1)
    edge_hi = np.take_along_axis(pdf.edges, index + 1, axis=-1)
    with np.errstate(divide='ignore', invalid='ignore'):
        frac = np.where(mass > 0, (u - cdf_lo) / mass, 0.0)
    frac = np.clip(frac, 0.0, 1.0)
    t = edge_lo + frac * (edge_hi - edge_lo)
    return SamplePositions(gc.constant(t), 'heuristic')


def sort_samples(t: Tensor, provenance: str) -> SamplePositions:
    """Differentiable sort along the last axis (ties keep their original order)"""
    order = np.argsort(t.data, axis=-1, kind='stable')
    return SamplePositions(gc.gather(t, order, axis=-1), provenance, order=order)


def merge_and_sort(t_coarse: SamplePositions, t_fine: SamplePositions) -> SamplePositions:
    """
    Sorted union of two sample sets, duplicates kept

    Returns:
        SamplePositions with provenance 'merged' and source/index maps back to
        each operand
    """
    if not t_coarse.is_sorted() or not t_fine.is_sorted():
        raise ValueError("merge_and_sort: both sample sets must be sorted")
    n_first = len(t_coarse)
    joined = gc.concat([t_coarse.t, t_fine.t], axis=-1)
    order = np.argsort(joined.data, axis=-1, kind='stable')
    source = (order >= n_first).astype(np.int8)
    source_index = np.where(source == 1, order - n_first, order)
    return SamplePositions(gc.gather(joined, order, axis=-1), 'merged',
                           source=source, source_index=source_index, order=order)
