"""
Desk-scale validation of the NeRF-ID claims
Tests: exact field under the sample budget, learnt proposer vs. heuristic baseline,
Blind ablation, importance pruning, two-stage vs. from-scratch training (medians over seeds)

Usage:
    python validation.py                       # desk-spheres, 3 seeds, full schedule
    python validation.py --steps 2000 --seeds 0 # quick smoke run
"""

import argparse
import json
import logging
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

import gradcore as gc
from config import CONFIG
from metrics import psnr
from run_config import load_run_config
from scenes import SceneDataset, build_dataset, sampled_oracle_render
from trainer import Trainer

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S'
)
logger = logging.getLogger(__name__)

ORACLE_MIN_PSNR = 35.0
PRUNING_MAX_KEPT = 0.75
PRUNING_MAX_DROP = 0.3
PRUNING_THRESHOLDS = (0.01, 0.03, 0.05, 0.1, 0.2, 0.3, 0.5)

VARIANTS = {
    'nerf_id': ['train.mode=nerf_id', 'proposer.architecture=mlpmix'],
    'heuristic': ['train.mode=heuristic'],
    'blind': ['train.mode=nerf_id', 'proposer.architecture=blind'],
    'scratch': ['train.mode=scratch', 'proposer.architecture=mlpmix']
}


class ClaimValidator:
    """Train the variants each claim needs (once per seed) and compare test PSNR"""

    def __init__(self, preset: str = 'desk-spheres', seeds: Sequence[int] = (0, 1, 2),
                 steps: Optional[int] = None, out_root: Optional[Path] = None):
        self.preset = preset
        self.seeds = list(seeds)
        self.steps = steps
        self.out_root = Path(out_root or Path(CONFIG['storage']['output_root']) / f"validation-{preset}")
        self._datasets: Dict[int, SceneDataset] = {}
        self._runs: Dict[tuple, Dict[str, Any]] = {}
        logger.info(f"Initialized ClaimValidator ({preset}, seeds {self.seeds})")

    def _overrides(self, variant: str, seed: int) -> List[str]:
        overrides = VARIANTS[variant] + [f"train.seed={seed}"]
        if self.steps is not None:
            overrides.append(f"train.total_steps={self.steps}")
        return overrides

    def _dataset(self, run_config) -> SceneDataset:
        # every variant sees the same scene for a given scene seed
        key = run_config.scene.seed
        if key not in self._datasets:
            self._datasets[key] = build_dataset(run_config.scene)
        return self._datasets[key]

    def run_variant(self, variant: str, seed: int) -> Dict[str, Any]:
        """Train one variant (cached) and evaluate its best checkpoint on the test split"""
        key = (variant, seed)
        if key in self._runs:
            return self._runs[key]
        run_config = load_run_config(preset=self.preset, overrides=self._overrides(variant, seed))
        out = self.out_root / f"{variant}-seed{seed}"
        dataset = self._dataset(run_config)

        start = time.time()
        trainer = Trainer(run_config, dataset, out_dir=out)
        try:
            summary = trainer.train(progress=False)
        finally:
            trainer.close()
        best = out / 'best'
        evaluator = Trainer.from_checkpoint(best, dataset) if best.exists() else trainer
        table = evaluator.evaluate('test')
        result = {
            'variant': variant,
            'seed': seed,
            'checkpoint': str(best if best.exists() else out / 'final'),
            'best_val_psnr': summary.best_psnr,
            'test_psnr': float(table['psnr'].mean()),
            'test_ssim': float(table['ssim'].mean()),
            'seconds': time.time() - start
        }
        logger.info(f"{variant} seed {seed}: test PSNR {result['test_psnr']:.2f} dB ({result['seconds']:.0f}s)")
        self._runs[key] = result
        return result

    def _psnrs(self, variant: str) -> List[float]:
        return [self.run_variant(variant, seed)['test_psnr'] for seed in self.seeds]

    def test_oracle_self_consistency(self) -> Dict[str, Any]:
        """The exact field rendered with the configured sample counts reaches 35 dB on every test view"""
        try:
            run_config = load_run_config(preset=self.preset)
            dataset = self._dataset(run_config)
            if dataset.scene is None:
                return {'passed': True, 'skipped': 'posed-image scene has no oracle'}
            n_coarse, n_fine = run_config.proposer.n_coarse, run_config.proposer.n_fine
            values = [psnr(sampled_oracle_render(dataset.scene, posed.camera.rays(), n_coarse, n_fine),
                           posed.image.reshape(-1, 3))
                      for posed in dataset.split('test')]
            passed = min(values) > ORACLE_MIN_PSNR
            logger.info(f"{'✓' if passed else '✗'} Oracle field with {n_coarse}+{n_fine} samples: "
                        f"worst test view {min(values):.2f} dB")
            return {'passed': passed, 'psnr': values, 'n_coarse': n_coarse, 'n_fine': n_fine}
        except Exception as e:
            logger.error(f"✗ Oracle self-consistency check failed: {str(e)}", exc_info=True)
            return {'passed': False, 'error': str(e)}

    def test_relative_quality(self) -> Dict[str, Any]:
        """Learnt proposer matches or beats the heuristic sampler at equal sample counts"""
        try:
            learnt = self._psnrs('nerf_id')
            baseline = self._psnrs('heuristic')
            wins = int(sum(a >= b for a, b in zip(learnt, baseline)))
            needed = min(2, len(self.seeds))
            passed = float(np.median(learnt)) >= float(np.median(baseline)) - 0.1 and wins >= needed
            status = '✓' if passed else '✗'
            logger.info(f"{status} NeRF-ID median {np.median(learnt):.2f} dB vs. heuristic "
                        f"{np.median(baseline):.2f} dB ({wins}/{len(self.seeds)} seeds at or above)")
            return {'passed': passed, 'nerf_id_psnr': learnt, 'heuristic_psnr': baseline, 'wins': wins}
        except Exception as e:
            logger.error(f"✗ Relative quality check failed: {str(e)}", exc_info=True)
            return {'passed': False, 'error': str(e)}

    def test_blind_ablation(self) -> Dict[str, Any]:
        """A proposer that ignores the coarse features should lose at least 0.5 dB"""
        try:
            learnt = self._psnrs('nerf_id')
            blind = self._psnrs('blind')
            gap = float(np.median(learnt) - np.median(blind))
            passed = gap >= 0.5
            logger.info(f"{'✓' if passed else '✗'} Blind proposer {gap:.2f} dB below MLPMix (median)")
            return {'passed': passed, 'nerf_id_psnr': learnt, 'blind_psnr': blind, 'median_gap': gap}
        except Exception as e:
            logger.error(f"✗ Blind ablation check failed: {str(e)}", exc_info=True)
            return {'passed': False, 'error': str(e)}

    def test_pruning(self) -> Dict[str, Any]:
        """Some threshold keeps at most 75% of fine samples within 0.3 dB of the unpruned render"""
        try:
            seed = self.seeds[0]
            run = self.run_variant('nerf_id', seed)
            run_config = load_run_config(preset=self.preset, overrides=self._overrides('nerf_id', seed))
            trainer = Trainer.from_checkpoint(Path(run['checkpoint']), self._dataset(run_config))
            unpruned = float(trainer.evaluate('test')['psnr'].mean())
            points = []
            for threshold in PRUNING_THRESHOLDS:
                frame = trainer.evaluate('test', threshold=threshold)
                points.append({'threshold': threshold, 'kept_fraction': float(frame['kept_fraction'].mean()),
                               'psnr': float(frame['psnr'].mean())})
            qualifying = [p for p in points
                          if p['kept_fraction'] <= PRUNING_MAX_KEPT and p['psnr'] >= unpruned - PRUNING_MAX_DROP]
            passed = bool(qualifying)
            if passed:
                best = min(qualifying, key=lambda p: p['kept_fraction'])
                logger.info(f"✓ Threshold {best['threshold']} keeps {best['kept_fraction']:.2f} of fine samples at "
                            f"{best['psnr']:.2f} dB (unpruned {unpruned:.2f} dB)")
            else:
                logger.error(f"✗ No threshold keeps ≤ {PRUNING_MAX_KEPT:.0%} within {PRUNING_MAX_DROP} dB")
            return {'passed': passed, 'unpruned_psnr': unpruned, 'sweep': points}
        except Exception as e:
            logger.error(f"✗ Pruning check failed: {str(e)}", exc_info=True)
            return {'passed': False, 'error': str(e)}

    def test_two_stage_vs_scratch(self) -> Dict[str, Any]:
        """
        From-scratch training should not beat two-stage training by more than 0.1 dB

        Reported only: on an easy analytic scene scratch training can win, and
        that outcome is logged rather than failed.
        """
        try:
            two_stage = self._psnrs('nerf_id')
            scratch = self._psnrs('scratch')
            holds = float(np.median(scratch)) <= float(np.median(two_stage)) + 0.1
            if holds:
                logger.info(f"✓ Scratch median {np.median(scratch):.2f} dB ≤ two-stage {np.median(two_stage):.2f} dB")
            else:
                logger.warning(f"Scratch median {np.median(scratch):.2f} dB beats two-stage "
                               f"{np.median(two_stage):.2f} dB on this scene")
            return {'passed': True, 'claim_holds': holds, 'two_stage_psnr': two_stage, 'scratch_psnr': scratch}
        except Exception as e:
            logger.error(f"✗ Two-stage vs. scratch check failed: {str(e)}", exc_info=True)
            return {'passed': False, 'error': str(e)}

    def run_full_validation(self) -> Dict[str, Any]:
        print("\n" + "=" * 60)
        print(f"CLAIM VALIDATION - {self.preset}, seeds {self.seeds}")
        print("=" * 60 + "\n")

        results = {'timestamp': datetime.now().isoformat(), 'preset': self.preset, 'seeds': self.seeds,
                   'steps': self.steps, 'tests': {}}
        checks = [
            ('oracle_self_consistency', 'Test 1: Sample budget vs. exact field', self.test_oracle_self_consistency),
            ('relative_quality', 'Test 2: Learnt proposer vs. heuristic', self.test_relative_quality),
            ('blind_ablation', 'Test 3: Blind proposer ablation', self.test_blind_ablation),
            ('pruning', 'Test 4: Importance pruning', self.test_pruning),
            ('two_stage_vs_scratch', 'Test 5: Two-stage vs. scratch', self.test_two_stage_vs_scratch)
        ]
        for key, title, check in checks:
            print(title)
            results['tests'][key] = check()
            print()
        results['runs'] = list(self._runs.values())

        passed = sum(1 for r in results['tests'].values() if r.get('passed'))
        total = len(results['tests'])
        print("=" * 60)
        print("VALIDATION SUMMARY")
        print("=" * 60)
        for key, result in results['tests'].items():
            print(f"  {'✅' if result.get('passed') else '❌'} {key}")
        print(f"Tests passed: {passed}/{total}")
        print("=" * 60 + "\n")
        results['passed'] = passed
        results['total'] = total
        return results


def main():
    parser = argparse.ArgumentParser(description='Desk-scale NeRF-ID claim validation')
    parser.add_argument('--preset', default='desk-spheres')
    parser.add_argument('--seeds', default='0,1,2', help='Comma-separated seeds')
    parser.add_argument('--steps', type=int, help='Override train.total_steps')
    parser.add_argument('--out', help='Directory for the runs')
    args = parser.parse_args()

    gc.set_precision(CONFIG['runtime']['precision'])
    seeds = [int(s) for s in args.seeds.split(',') if s.strip()]
    validator = ClaimValidator(args.preset, seeds, args.steps, Path(args.out) if args.out else None)
    results = validator.run_full_validation()

    path = validator.out_root / 'validation_results.json'
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(results, indent=2, default=str))
    print(f"Validation results saved to: {path}")
    return 0 if results['passed'] == results['total'] else 1


if __name__ == '__main__':
    sys.exit(main())
