"""
Two-stage NeRF-ID training

Stage 1 trains the coarse and fine networks exactly as vanilla NeRF (fine
samples from the heuristic sampler) while the proposer learns to mimic the
heuristic. Stage 2 swaps the learnt proposer in and trains everything end to
end. Inference, evaluation and early stopping live here as well.
"""

import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

import gradcore as gc
from gradcore import NumericalError, Tensor
from checkpoint import save_checkpoint
from field import FieldConfig, FieldNetwork, FieldOutput
from losses import align_importance, greedy_match, greedy_match_loss, importance_loss, mse_loss
from metrics import MetricsLog, psnr, ssim
from optim import AdamState, adam_step, learning_rate
from proposer import ProposalSet, ProposerConfig, ProposerInput, build_proposer, importance_filter
from render import (RayBatch, RenderResult, SamplePositions, heuristic_pdf, inverse_cdf_sample,
                    merge_and_sort, render_ray, stratified_sample)
from scenes import Camera, SceneDataset

logger = logging.getLogger(__name__)

STREAMS = ('coarse', 'fine', 'proposer', 'sampling', 'validation')
PROPOSER_BUDGET = 0.25


class TrainConfig(BaseModel):
    """Optimization schedule and training-loop settings"""
    model_config = ConfigDict(extra='forbid')

    mode: Literal['nerf_id', 'heuristic', 'scratch'] = 'nerf_id'
    total_steps: int = Field(20000, ge=2)
    batch_rays: int = Field(256, ge=1)
    lr_peak: float = Field(5e-4, gt=0.0)
    warmup_steps: int = Field(1000, ge=0)
    stage_split: float = Field(0.5, gt=0.0, lt=1.0)
    importance_weight_threshold: float = Field(0.03, ge=0.0, le=1.0)
    match_distance: Literal['squared', 'absolute'] = 'squared'
    stage1_feature_stop_gradient: bool = True
    seed: int = 0
    workers: int = Field(1, ge=1)
    chunk_rays: int = Field(128, ge=1)
    validate_every: int = Field(500, ge=1)
    validation_images: int = Field(4, ge=1)
    checkpoint_every: int = Field(5000, ge=1)

    @property
    def switch_step(self) -> int:
        return int(round(self.stage_split * self.total_steps))


def seed_streams(seed: int) -> Dict[str, np.random.Generator]:
    """Independent generators per consumer, so adding or removing one never shifts another"""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


class NerfIdModel:
    """Coarse field, fine field and (except in heuristic mode) the proposer"""

    def __init__(self, field_config: FieldConfig, proposer_config: ProposerConfig,
                 with_proposer: bool = True, seed: int = 0):
        streams = seed_streams(seed)
        self.field_config = field_config
        self.proposer_config = proposer_config
        self.coarse = FieldNetwork(field_config, streams['coarse'])
        self.fine = FieldNetwork(field_config, streams['fine'])
        self.proposer = build_proposer(proposer_config, streams['proposer']) if with_proposer else None
        if self.proposer is not None:
            ratio = self.proposer_budget_ratio()
            logger.info(f"Proposer holds {ratio:.1%} of the coarse + fine parameter count")

    @classmethod
    def from_config(cls, run_config) -> 'NerfIdModel':
        return cls(run_config.field, run_config.proposer,
                   with_proposer=run_config.train.mode != 'heuristic', seed=run_config.train.seed)

    @property
    def architecture(self) -> str:
        return self.proposer_config.architecture if self.proposer is not None else 'heuristic'

    @property
    def has_importance_head(self) -> bool:
        return self.proposer is not None and self.proposer_config.with_importance

    def named_parameters(self) -> Dict[str, Tensor]:
        named = {f"coarse.{k}": v for k, v in self.coarse.parameters().items()}
        named.update({f"fine.{k}": v for k, v in self.fine.parameters().items()})
        if self.proposer is not None:
            named.update({f"proposer.{k}": v for k, v in self.proposer.parameters().items()})
        return named

    def proposer_budget_ratio(self) -> float:
        if self.proposer is None:
            return 0.0
        return self.proposer.parameter_count() / (self.coarse.parameter_count() + self.fine.parameter_count())


@dataclass
class TrainState:
    """Everything besides parameters needed to resume a run"""
    step: int = 0
    stage: int = 1
    phase_start: int = 0
    best_psnr: float = float('-inf')
    best_step: int = -1
    optimizer: AdamState = field(default_factory=AdamState)
    rng_states: Dict[str, Any] = field(default_factory=dict)

    def to_manifest(self) -> Dict[str, Any]:
        return {
            'step': self.step,
            'stage': self.stage,
            'phase_start': self.phase_start,
            'best_psnr': None if np.isinf(self.best_psnr) else self.best_psnr,
            'best_step': self.best_step,
            'adam_step': self.optimizer.step,
            'rng_states': self.rng_states
        }

    @classmethod
    def from_manifest(cls, data: Dict[str, Any]) -> 'TrainState':
        best = data.get('best_psnr')
        return cls(step=data['step'], stage=data['stage'], phase_start=data.get('phase_start', 0),
                   best_psnr=float('-inf') if best is None else float(best),
                   best_step=data.get('best_step', -1),
                   optimizer=AdamState(step=data.get('adam_step', 0)),
                   rng_states=data.get('rng_states', {}))


@dataclass
class RenderStats:
    """Cost of an inference pass; fine evaluations are the compute proxy"""
    rays: int = 0
    samples: int = 0
    fine_evaluations: int = 0
    seconds: float = 0.0

    @property
    def kept_fraction(self) -> float:
        return self.fine_evaluations / self.samples if self.samples else 1.0

    def merge(self, other: 'RenderStats'):
        self.rays += other.rays
        self.samples += other.samples
        self.fine_evaluations += other.fine_evaluations
        self.seconds += other.seconds


@dataclass
class TrainSummary:
    steps: int
    best_psnr: float
    best_step: int
    final_psnr: float
    seconds: float
    history: List[Dict[str, Any]] = field(default_factory=list)


def _sum_terms(terms: Dict[str, Tensor]) -> Tensor:
    total = None
    for term in terms.values():
        total = term if total is None else gc.add(total, term)
    return total


class Trainer:
    """Single-writer training loop; ray batches fan out over worker threads, one tape per chunk"""

    def __init__(self, run_config, dataset: SceneDataset, out_dir: Optional[Path] = None,
                 model: Optional[NerfIdModel] = None, state: Optional[TrainState] = None):
        """
        Args:
            run_config: RunConfig for the run
            dataset: Posed images (train split for optimization, val for early stopping)
            out_dir: Where checkpoints and metrics.csv go; nothing is written when None
            model: Existing model (when resuming)
            state: Existing TrainState (when resuming)
        """
        self.run_config = run_config
        self.config: TrainConfig = run_config.train
        self.dataset = dataset
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.model = model or NerfIdModel.from_config(run_config)
        self.params = self.model.named_parameters()
        self._names = list(self.params)
        self.streams = seed_streams(self.config.seed)

        if state is None:
            state = TrainState()
            if self.config.mode == 'scratch':
                state.stage = 2
        self.state = state
        for name, saved in state.rng_states.items():
            self.streams[name].bit_generator.state = saved

        val_count = len(dataset.splits.get('val', []))
        picks = min(self.config.validation_images, val_count)
        self.validation_indices = sorted(self.streams['validation'].choice(val_count, picks, replace=False)) \
            if picks else []
        self.metrics = MetricsLog(self.out_dir / 'metrics.csv') if self.out_dir is not None else None
        self._executor = ThreadPoolExecutor(max_workers=self.config.workers) if self.config.workers > 1 else None

        n_c, n_f = run_config.proposer.n_coarse, run_config.proposer.n_fine
        logger.info(f"Trainer ready: mode={self.config.mode}, architecture={self.model.architecture}, "
                    f"N_c={n_c}, N_f={n_f}, {len(self.params)} parameter tensors")

    @classmethod
    def from_checkpoint(cls, path: Path, dataset: SceneDataset, out_dir: Optional[Path] = None) -> 'Trainer':
        from checkpoint import load_checkpoint
        model, state, run_config = load_checkpoint(path)
        return cls(run_config, dataset, out_dir=out_dir, model=model, state=state)

    def close(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    # ------------------------------------------------------------------------
    # Passes
    # ------------------------------------------------------------------------

    @property
    def n_coarse(self) -> int:
        return self.run_config.proposer.n_coarse

    @property
    def n_fine(self) -> int:
        return self.run_config.proposer.n_fine

    @property
    def background(self):
        return self.dataset.background

    def _noise_std(self, training: bool) -> float:
        return self.run_config.scene.density_noise_std if training else 0.0

    def coarse_pass(self, rays: RayBatch, rng: Optional[np.random.Generator],
                    training: bool) -> Tuple[SamplePositions, FieldOutput, RenderResult]:
        coarse_t = stratified_sample(self.n_coarse, rng, jitter=training, batch_shape=(len(rays),))
        outputs = self.model.coarse.query(rays.points(coarse_t.t), rays.view_directions(self.n_coarse),
                                          self._noise_std(training), rng)
        return coarse_t, outputs, render_ray(coarse_t, outputs, self.background)

    def heuristic_samples(self, weights: Tensor, coarse_t: SamplePositions,
                          rng: Optional[np.random.Generator], training: bool) -> SamplePositions:
        pdf = heuristic_pdf(weights.data, coarse_t)
        return inverse_cdf_sample(pdf, self.n_fine, rng, deterministic=not training,
                                  stratified=self.run_config.render.heuristic_stratified)

    def fine_pass(self, rays: RayBatch, merged: SamplePositions, rng: Optional[np.random.Generator],
                  training: bool) -> RenderResult:
        outputs = self.model.fine.query(rays.points(merged.t), rays.view_directions(len(merged)),
                                        self._noise_std(training), rng)
        return render_ray(merged, outputs, self.background)

    def _importance_terms(self, proposals: ProposalSet, merged: SamplePositions, fine_slot: np.ndarray,
                          fine_render: RenderResult, scale: float) -> Dict[str, Tensor]:
        if proposals.importance_logits is None:
            return {}
        logits = align_importance(proposals.importance_logits, proposals.importance_layout, merged,
                                  self.n_coarse, fine_slot)
        return {'loss_importance': importance_loss(logits, fine_render.weights.data,
                                                   self.config.importance_weight_threshold, scale)}

    def stage1_losses(self, rays: RayBatch, targets: np.ndarray, rng: np.random.Generator,
                      scale: float = 1.0) -> Dict[str, Tensor]:
        """Vanilla coarse + fine reconstruction, plus proposer mimicry of the heuristic samples"""
        coarse_t, coarse_out, coarse_render = self.coarse_pass(rays, rng, training=True)
        terms = {'loss_coarse': mse_loss(coarse_render.color, targets, scale)}

        heuristic = self.heuristic_samples(coarse_render.weights, coarse_t, rng, training=True)
        merged = merge_and_sort(coarse_t, heuristic)
        fine_render = self.fine_pass(rays, merged, rng, training=True)
        terms['loss_fine'] = mse_loss(fine_render.color, targets, scale)

        if self.model.proposer is not None:
            features = coarse_out.feature
            if self.config.stage1_feature_stop_gradient:
                features = gc.stop_gradient(features)
            proposals = self.model.proposer.propose(ProposerInput(features, coarse_t.values))
            terms['loss_match'], match = greedy_match_loss(heuristic, proposals.t_fine,
                                                           self.config.match_distance, scale)
            terms.update(self._importance_terms(proposals, merged, match, fine_render, scale))
        return terms

    def stage2_losses(self, rays: RayBatch, targets: np.ndarray, rng: np.random.Generator,
                      scale: float = 1.0, coarse_loss: bool = True) -> Dict[str, Tensor]:
        """End-to-end reconstruction through the learnt proposals, plus importance prediction"""
        if self.model.proposer is None:
            raise RuntimeError("Stage 2 needs a proposer (heuristic mode stays in stage 1)")
        coarse_t, coarse_out, coarse_render = self.coarse_pass(rays, rng, training=True)
        terms = {'loss_coarse': mse_loss(coarse_render.color, targets, scale)} if coarse_loss else {}

        proposals = self.model.proposer.propose(ProposerInput(coarse_out.feature, coarse_t.values))
        fine_t = proposals.sorted()
        merged = merge_and_sort(coarse_t, fine_t)
        fine_render = self.fine_pass(rays, merged, rng, training=True)
        terms['loss_fine'] = mse_loss(fine_render.color, targets, scale)
        terms.update(self._importance_terms(proposals, merged, fine_t.order, fine_render, scale))
        return terms

    # ------------------------------------------------------------------------
    # Optimization
    # ------------------------------------------------------------------------

    def _run_chunk(self, loss_fn: Callable, rays: RayBatch, targets: np.ndarray, seed: int,
                   scale: float, precision: str) -> Tuple[Dict[str, float], List[np.ndarray]]:
        rng = np.random.default_rng(seed)
        with gc.precision(precision):
            with gc.Tape() as tape:
                terms = loss_fn(rays, targets, rng, scale)
                total = _sum_terms(terms)
            if not np.isfinite(total.item()):
                raise NumericalError(f"Non-finite loss at step {self.state.step}")
            grads = gc.backward(tape, total, [self.params[name] for name in self._names])
        return {name: term.item() for name, term in terms.items()}, list(grads.values())

    def _apply_step(self, rays: RayBatch, targets: np.ndarray, loss_fn: Callable) -> Dict[str, float]:
        cfg = self.config
        windows = list(rays.chunks(cfg.chunk_rays))
        seeds = self.streams['sampling'].integers(0, 2 ** 63 - 1, size=len(windows))
        precision = gc.get_precision()
        jobs = [(loss_fn, chunk, targets[window], int(seed), len(chunk) / len(rays), precision)
                for (window, chunk), seed in zip(windows, seeds)]
        if self._executor is not None:
            results = list(self._executor.map(lambda job: self._run_chunk(*job), jobs))
        else:
            results = [self._run_chunk(*job) for job in jobs]

        losses: Dict[str, float] = {}
        grads = [g.copy() for g in results[0][1]]
        for chunk_losses, chunk_grads in results:
            for name, value in chunk_losses.items():
                losses[name] = losses.get(name, 0.0) + value
        for _, chunk_grads in results[1:]:
            for total, g in zip(grads, chunk_grads):
                total += g

        lr = learning_rate(self.state.step, self.state.phase_start, cfg.lr_peak, cfg.warmup_steps, cfg.total_steps)
        adam_step(self.params, dict(zip(self._names, grads)), self.state.optimizer, lr)
        self.state.step += 1
        losses['lr'] = lr
        return losses

    def train_step_stage1(self, rays: RayBatch, targets: np.ndarray) -> Dict[str, float]:
        if self.state.stage != 1:
            raise RuntimeError(f"train_step_stage1 called in stage {self.state.stage}")
        return self._apply_step(rays, targets, self.stage1_losses)

    def train_step_stage2(self, rays: RayBatch, targets: np.ndarray) -> Dict[str, float]:
        if self.state.stage != 2:
            raise RuntimeError(f"train_step_stage2 called in stage {self.state.stage}")
        return self._apply_step(rays, targets, self.stage2_losses)

    def switch_stage(self):
        """Reset the optimizer moments and restart warmup; parameters are untouched"""
        if self.state.stage != 1:
            raise RuntimeError("switch_stage called outside stage 1")
        self.state.optimizer.reset()
        self.state.phase_start = self.state.step
        self.state.stage = 2
        logger.info(f"Switched to stage 2 at step {self.state.step}")

    def step(self) -> Dict[str, float]:
        if self.config.mode == 'nerf_id' and self.state.stage == 1 and self.state.step >= self.config.switch_step:
            self.switch_stage()
        rays, targets = self.dataset.ray_batch('train', self.streams['sampling'], self.config.batch_rays)
        if self.state.stage == 1:
            return self.train_step_stage1(rays, targets)
        return self.train_step_stage2(rays, targets)

    # ------------------------------------------------------------------------
    # Inference
    # ------------------------------------------------------------------------

    def _query_fine(self, rays: RayBatch, merged: SamplePositions, keep: Optional[np.ndarray]) -> Tuple[FieldOutput, int]:
        if keep is None:
            outputs = self.model.fine.query(rays.points(merged.t), rays.view_directions(len(merged)))
            return outputs, outputs.sigma.size
        points = rays.points(merged.t).data[keep]
        directions = rays.view_directions(len(merged))[keep]
        kept = self.model.fine.query(gc.constant(points), directions)
        sigma = np.zeros(merged.values.shape)
        color = np.zeros(merged.values.shape + (3,))
        sigma[keep] = kept.sigma.data
        color[keep] = kept.color.data
        empty = gc.constant(np.zeros(merged.values.shape + (0,)))
        return FieldOutput(gc.constant(sigma), gc.constant(color), empty), int(keep.sum())

    def _inference_samples(self, rays: RayBatch, want_importance: bool):
        """Deterministic coarse samples, fine samples (learnt in stage 2, heuristic otherwise) and their merge"""
        coarse_t, coarse_out, coarse_render = self.coarse_pass(rays, None, training=False)
        proposer = self.model.proposer
        use_proposer = proposer is not None and self.state.stage == 2
        proposals = None
        if proposer is not None and (use_proposer or want_importance):
            proposals = proposer.propose(ProposerInput(coarse_out.feature, coarse_t.values))

        if use_proposer:
            fine_t = proposals.sorted()
            fine_slot = fine_t.order
        else:
            fine_t = self.heuristic_samples(coarse_render.weights, coarse_t, None, training=False)
            fine_slot = greedy_match(fine_t.values, proposals.t_fine.data) if proposals is not None else None
        merged = merge_and_sort(coarse_t, fine_t)

        logits = None
        if proposals is not None and proposals.importance_logits is not None:
            logits = align_importance(proposals.importance_logits, proposals.importance_layout, merged,
                                      self.n_coarse, fine_slot)
        return fine_t, merged, logits

    def _render_chunk(self, rays: RayBatch, threshold: Optional[float]) -> Tuple[np.ndarray, RenderStats]:
        _, merged, logits = self._inference_samples(rays, want_importance=threshold is not None)
        keep = None
        if threshold is not None:
            if logits is None:
                raise ValueError(f"Model '{self.model.architecture}' has no importance head to prune with")
            keep = importance_filter(merged, logits, threshold).keep_mask
        outputs, evaluations = self._query_fine(rays, merged, keep)
        result = render_ray(merged, outputs, self.background, keep)
        return result.color.data, RenderStats(len(rays), merged.values.size, evaluations)

    def inspect_rays(self, rays: RayBatch) -> Dict[str, np.ndarray]:
        """
        Where the samples of each ray fall, with their fine weights and predicted importance

        Returns:
            Dict of (R, N) arrays: 't', 'provenance' ('coarse' or the fine
            sampler's tag), 'weight', 'importance' (NaN without an importance head)
        """
        fine_t, merged, logits = self._inference_samples(rays, want_importance=True)
        outputs, _ = self._query_fine(rays, merged, None)
        result = render_ray(merged, outputs, self.background)
        importance = gc.sigmoid(logits).data if logits is not None else np.full(merged.values.shape, np.nan)
        provenance = np.where(merged.source == 0, 'coarse', fine_t.provenance)
        return {'t': merged.values, 'provenance': provenance, 'weight': result.weights.data,
                'importance': importance}

    def render_rays(self, rays: RayBatch, threshold: Optional[float] = None) -> Tuple[np.ndarray, RenderStats]:
        """Deterministic render (no jitter, no noise), optionally pruning fine queries by importance"""
        colors = np.empty((len(rays), 3))
        stats = RenderStats()
        start = time.perf_counter()
        for window, chunk in rays.chunks(self.run_config.render.chunk_rays):
            colors[window], chunk_stats = self._render_chunk(chunk, threshold)
            stats.merge(chunk_stats)
        stats.seconds = time.perf_counter() - start
        return colors, stats

    def render_image(self, camera: Camera, threshold: Optional[float] = None) -> Tuple[np.ndarray, RenderStats]:
        colors, stats = self.render_rays(camera.rays(), threshold)
        return np.clip(colors, 0.0, 1.0).reshape(camera.height, camera.width, 3), stats

    def evaluate(self, split: str = 'test', indices: Optional[List[int]] = None,
                 threshold: Optional[float] = None) -> pd.DataFrame:
        """
        Per-image PSNR/SSIM plus the kept fraction and timing of each render

        Returns:
            DataFrame with columns image, psnr, ssim, kept_fraction, fine_evaluations, seconds
        """
        images = self.dataset.split(split)
        if not images:
            raise ValueError(f"Split '{split}' is empty")
        indices = range(len(images)) if indices is None else indices
        rows = []
        for i in indices:
            posed = images[i]
            rendered, stats = self.render_image(posed.camera, threshold)
            if rendered.shape != posed.image.shape:
                raise ValueError(f"Rendered {rendered.shape} but '{posed.name}' is {posed.image.shape}")
            rows.append({
                'image': posed.name,
                'psnr': psnr(rendered, posed.image),
                'ssim': ssim(rendered, posed.image),
                'kept_fraction': stats.kept_fraction,
                'fine_evaluations': stats.fine_evaluations,
                'seconds': stats.seconds
            })
        return pd.DataFrame(rows)

    def validate(self) -> float:
        if not self.validation_indices:
            return float('nan')
        frame = self.evaluate('val', self.validation_indices)
        return float(frame['psnr'].mean())

    # ------------------------------------------------------------------------
    # Loop
    # ------------------------------------------------------------------------

    def save(self, path: Path):
        self.state.rng_states = {'sampling': self.streams['sampling'].bit_generator.state}
        save_checkpoint(path, self.model, self.state, self.run_config)

    def _maybe_improve(self, val_psnr: float):
        if np.isfinite(val_psnr) and val_psnr > self.state.best_psnr:
            self.state.best_psnr = val_psnr
            self.state.best_step = self.state.step
            logger.info(f"New best validation PSNR {val_psnr:.2f} dB at step {self.state.step}")
            if self.out_dir is not None:
                self.save(self.out_dir / 'best')

    def train(self, progress: bool = True) -> TrainSummary:
        """Run to ``total_steps``, validating, checkpointing and logging along the way"""
        cfg = self.config
        start = time.perf_counter()
        history = []
        final_psnr = float('nan')
        bar = tqdm(total=cfg.total_steps, initial=self.state.step, desc=f"train[{self.model.architecture}]",
                   disable=not (progress and sys.stdout.isatty()))
        try:
            while self.state.step < cfg.total_steps:
                losses = self.step()
                step = self.state.step
                val_psnr = None
                if step % cfg.validate_every == 0 or step == cfg.total_steps:
                    val_psnr = self.validate()
                    final_psnr = val_psnr
                    self._maybe_improve(val_psnr)
                    logger.info(f"step {step}: stage {self.state.stage}, val PSNR {val_psnr:.2f} dB, "
                                f"lr {losses['lr']:.2e}")
                row = {
                    'step': step,
                    'stage': self.state.stage,
                    'loss_coarse': losses.get('loss_coarse'),
                    'loss_fine': losses.get('loss_fine'),
                    'loss_match': losses.get('loss_match'),
                    'loss_importance': losses.get('loss_importance'),
                    'lr': losses['lr'],
                    'val_psnr': val_psnr
                }
                history.append(row)
                if self.metrics is not None:
                    self.metrics.append(row)
                if self.out_dir is not None and step % cfg.checkpoint_every == 0:
                    self.save(self.out_dir / 'checkpoints' / f"step_{step:06d}")
                bar.update(1)
                bar.set_postfix(fine=f"{losses.get('loss_fine', 0.0):.4f}", stage=self.state.stage)
        finally:
            bar.close()
            if self.metrics is not None:
                self.metrics.flush()

        if self.out_dir is not None:
            self.save(self.out_dir / 'final')
        seconds = time.perf_counter() - start
        logger.info(f"Training finished: {self.state.step} steps in {seconds:.1f}s, "
                    f"best val PSNR {self.state.best_psnr:.2f} dB at step {self.state.best_step}")
        return TrainSummary(self.state.step, self.state.best_psnr, self.state.best_step,
                            final_psnr, seconds, history)


def with_summary(frame: pd.DataFrame) -> pd.DataFrame:
    """Append a 'mean' row to a per-image metrics table"""
    summary = {'image': 'mean'}
    for column in frame.columns:
        if column != 'image':
            summary[column] = frame[column].mean()
    return pd.concat([frame, pd.DataFrame([summary])], ignore_index=True)
