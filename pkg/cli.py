"""
Command-line entry point for the NeRF-ID toolkit

Usage:
    python cli.py train --preset desk-spheres --seed 1
    python cli.py train --preset desk-spheres --proposer heuristic
    python cli.py render --checkpoint runs/desk/best --threshold 0.1
    python cli.py eval --checkpoint runs/desk/best --split test
    python cli.py sweep --checkpoint runs/desk/best --thresholds 0,0.05,0.1,0.3
    python cli.py profile --checkpoint runs/desk/best --view 0

Exit codes: 0 success, 2 user error, 3 numerical failure.
"""

import argparse
import hashlib
import json
import logging
import shutil
import sys
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import psutil
from pydantic import ValidationError

import gradcore as gc
from config import CONFIG
from checkpoint import CheckpointError, load_checkpoint
from gradcore import NumericalError
from proposer import ARCHITECTURES
from run_config import PRESETS, RunConfig, dump_key_value, load_run_config
from scenes import ConvergenceError, DatasetError, build_dataset, load_posed_images, write_ppm
from trainer import Trainer, with_summary

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USER_ERROR = 2
EXIT_NUMERICAL = 3

PROPOSER_CHOICES = ('heuristic',) + ARCHITECTURES
DEFAULT_THRESHOLDS = '0,0.01,0.03,0.05,0.1,0.2,0.3,0.5,0.7,0.9'
MANIFEST_NAME = 'run_manifest.json'
RUN_ARTIFACTS = ('metrics.csv', 'checkpoints', 'best', 'final', 'eval_test.csv', 'config.txt', MANIFEST_NAME)
SOURCE_MODULES = ('config.py', 'gradcore.py', 'field.py', 'render.py', 'proposer.py', 'losses.py', 'optim.py',
                  'metrics.py', 'checkpoint.py', 'scenes.py', 'run_config.py', 'trainer.py', 'cli.py')


class UserError(Exception):
    """Bad invocation: reported with exit code 2"""


def configure_logging():
    level = logging.DEBUG if CONFIG['app']['debug'] else getattr(logging, CONFIG['app']['log_level'].upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )


def source_version() -> str:
    """Toolkit version plus a digest of the module sources"""
    digest = hashlib.sha256()
    root = Path(__file__).resolve().parent
    for name in SOURCE_MODULES:
        path = root / name
        if path.exists():
            digest.update(path.read_bytes())
    return f"{CONFIG['app']['version']}+{digest.hexdigest()[:12]}"


def default_workers() -> int:
    return CONFIG['runtime']['workers'] or psutil.cpu_count(logical=False) or 1


def prepare_output_dir(path: Path, force: bool) -> Path:
    """
    Create an output directory

    A non-empty directory needs --force, which clears the artifacts of the
    previous run so a rerun never appends to them.
    """
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        if not force:
            raise UserError(f"{path} is not empty (use --force to overwrite)")
        for name in RUN_ARTIFACTS:
            stale = path / name
            if stale.is_dir():
                shutil.rmtree(stale)
            elif stale.exists():
                stale.unlink()
        logger.info(f"Cleared previous run artifacts in {path}")
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_run_manifest(out: Path, command: str, run_config: Optional[RunConfig], started: datetime,
                       outputs: Sequence[str], extra: Optional[Dict] = None):
    process = psutil.Process()
    manifest = {
        'command': command,
        'argv': sys.argv[1:],
        'seed': run_config.train.seed if run_config is not None else None,
        'config': run_config.model_dump(mode='json') if run_config is not None else None,
        'source_version': source_version(),
        'precision': CONFIG['runtime']['precision'],
        'started_at': started.isoformat(),
        'finished_at': datetime.now().isoformat(),
        'outputs': list(outputs),
        'host': {
            'cpu_count': psutil.cpu_count(),
            'memory_total_bytes': psutil.virtual_memory().total,
            'rss_bytes': process.memory_info().rss
        }
    }
    if extra:
        manifest.update(extra)
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='nerf-id', description='Learnt sample proposal for volume rendering')
    commands = parser.add_subparsers(dest='command', required=True)

    train = commands.add_parser('train', help='Run two-stage training')
    train.add_argument('--config', help='key = value config file')
    train.add_argument('--preset', choices=sorted(PRESETS), help='Start from a named preset')
    train.add_argument('--seed', type=int, help='Training seed (network init and ray sampling)')
    train.add_argument('--out', help='Output directory')
    train.add_argument('--proposer', choices=PROPOSER_CHOICES,
                       help="Proposer architecture; 'heuristic' trains the NeRF baseline")
    train.add_argument('--scratch', action='store_true', help='Skip stage 1 (end-to-end from step 0)')
    train.add_argument('--workers', type=int, help='Threads per training step')
    train.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', help='Override a config key')
    train.add_argument('--force', action='store_true', help='Overwrite an existing run directory')

    def checkpoint_command(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument('--checkpoint', required=True, help='Checkpoint directory')
        sub.add_argument('--split', default='test', help='Dataset split (train, val, test)')
        sub.add_argument('--data', help='Posed-image directory to use instead of the checkpoint scene')
        sub.add_argument('--out', help='Output directory')
        sub.add_argument('--force', action='store_true', help='Overwrite an existing output directory')
        return sub

    render = checkpoint_command('render', 'Render views from a checkpoint')
    render.add_argument('--view', type=int, help='Render only this view index')
    render.add_argument('--threshold', type=float, help='Importance threshold for pruning fine queries')

    checkpoint_command('eval', 'PSNR/SSIM of a checkpoint on a split')

    sweep = checkpoint_command('sweep', 'Quality vs. compute over importance thresholds')
    sweep.add_argument('--thresholds', default=DEFAULT_THRESHOLDS, help='Comma-separated thresholds')

    profile = checkpoint_command('profile', 'Sample placement along one image row')
    profile.add_argument('--view', type=int, default=0, help='View index')
    profile.add_argument('--row', type=int, help='Image row (default: middle)')
    return parser


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    overrides: List[str] = list(args.set)
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    if args.proposer == 'heuristic':
        if args.scratch:
            raise UserError("--scratch needs a learnt proposer")
        overrides.append('train.mode=heuristic')
    elif args.proposer is not None:
        overrides.append(f"proposer.architecture={args.proposer}")
    if args.scratch:
        overrides.append('train.mode=scratch')
    if args.workers is not None:
        overrides.append(f"train.workers={args.workers}")
    if args.preset is None and args.config is None:
        raise UserError("train needs --preset and/or --config")
    return load_run_config(args.config, args.preset, overrides)


def resolve_data_dir(name: str) -> Path:
    """Relative names that do not exist here are looked up under the data root"""
    path = Path(name)
    if not path.exists() and not path.is_absolute():
        return Path(CONFIG['storage']['data_root']) / path
    return path


def load_trainer(args: argparse.Namespace, out: Optional[Path] = None) -> Trainer:
    model, state, run_config = load_checkpoint(args.checkpoint)
    if args.data:
        dataset = load_posed_images(resolve_data_dir(args.data))
        if dataset.config.resolution != run_config.scene.resolution:
            raise ValueError(f"Dataset resolution {dataset.config.resolution} does not match the checkpoint's "
                             f"{run_config.scene.resolution}")
    else:
        dataset = build_dataset(run_config.scene, workers=default_workers())
    return Trainer(run_config, dataset, out_dir=out, model=model, state=state)


def _output_dir(args: argparse.Namespace, name: str) -> Path:
    if args.out:
        return prepare_output_dir(Path(args.out), args.force)
    return prepare_output_dir(Path(args.checkpoint).resolve().parent / f"{name}_{args.split}", args.force)


def _banner(title: str):
    print(f"\n{'=' * 60}")
    print(title)
    print(f"{'=' * 60}")


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_train(args: argparse.Namespace) -> int:
    started = datetime.now()
    run_config = resolve_run_config(args)
    name = f"{args.preset or Path(args.config).stem}-{args.proposer or run_config.proposer.architecture}" \
           f"-seed{run_config.train.seed}"
    out = prepare_output_dir(Path(args.out or Path(CONFIG['storage']['output_root']) / name), args.force)
    (out / 'config.txt').write_text(dump_key_value(run_config))

    _banner(f"Training {name} ({run_config.train.mode}, {run_config.train.total_steps} steps)")
    dataset = build_dataset(run_config.scene, workers=default_workers())
    trainer = Trainer(run_config, dataset, out_dir=out)
    try:
        summary = trainer.train()
    finally:
        trainer.close()

    best = out / 'best'
    evaluator = Trainer.from_checkpoint(best, dataset) if best.exists() else trainer
    table = with_summary(evaluator.evaluate('test'))
    table[['image', 'psnr', 'ssim']].to_csv(out / 'eval_test.csv', index=False)
    mean = table.iloc[-1]

    write_run_manifest(out, 'train', run_config, started,
                       ['config.txt', 'metrics.csv', 'final', 'best', 'checkpoints', 'eval_test.csv'],
                       {'best_val_psnr': summary.best_psnr, 'best_step': summary.best_step,
                        'test_psnr': float(mean['psnr']), 'test_ssim': float(mean['ssim'])})
    print(f"\n✅ Training complete in {summary.seconds:.0f}s")
    print(f"   Best validation PSNR: {summary.best_psnr:.2f} dB (step {summary.best_step})")
    print(f"   Test PSNR: {mean['psnr']:.2f} dB, SSIM: {mean['ssim']:.4f}")
    print(f"   Outputs: {out}")
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    started = datetime.now()
    trainer = load_trainer(args)
    images = trainer.dataset.split(args.split)
    indices = [args.view] if args.view is not None else list(range(len(images)))
    if not indices:
        raise UserError(f"Split '{args.split}' is empty")
    for i in indices:
        if not 0 <= i < len(images):
            raise UserError(f"View {i} outside split '{args.split}' ({len(images)} images)")
    out = _output_dir(args, 'render')

    _banner(f"Rendering {len(indices)} {args.split} view(s)")
    rows = []
    for i in indices:
        image, stats = trainer.render_image(images[i].camera, args.threshold)
        filename = f"{args.split}_{i:03d}.ppm"
        write_ppm(out / filename, image)
        rows.append({'image': filename, 'kept_fraction': stats.kept_fraction,
                     'fine_evaluations': stats.fine_evaluations, 'seconds': stats.seconds})
        print(f"  [{i}] {filename}: kept {stats.kept_fraction:.3f}, {stats.seconds:.2f}s")
    pd.DataFrame(rows).to_csv(out / 'render_stats.csv', index=False)
    write_run_manifest(out, 'render', trainer.run_config, started,
                       [row['image'] for row in rows] + ['render_stats.csv'],
                       {'checkpoint': str(args.checkpoint), 'threshold': args.threshold})
    print(f"\n✅ Rendered {len(rows)} image(s) to {out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    started = datetime.now()
    trainer = load_trainer(args)
    out = _output_dir(args, 'eval')
    table = with_summary(trainer.evaluate(args.split))[['image', 'psnr', 'ssim']]
    filename = f"eval_{args.split}.csv"
    table.to_csv(out / filename, index=False)

    _banner(f"Evaluation on {args.split} ({len(table) - 1} images)")
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    write_run_manifest(out, 'eval', trainer.run_config, started, [filename],
                       {'checkpoint': str(args.checkpoint)})
    return EXIT_OK


def parse_thresholds(text: str) -> List[float]:
    try:
        values = sorted({float(v) for v in text.split(',') if v.strip()})
    except ValueError as e:
        raise UserError(f"Bad --thresholds '{text}': {e}") from e
    if not values or values[0] < 0 or values[-1] > 1:
        raise UserError(f"Thresholds must lie in [0, 1], got '{text}'")
    return values


def sweep_table(trainer: Trainer, split: str, thresholds: Sequence[float]) -> pd.DataFrame:
    """One row per threshold: kept fraction, relative compute, quality and wall-clock"""
    baseline = trainer.evaluate(split)
    base_evaluations = baseline['fine_evaluations'].sum()
    base_seconds = baseline['seconds'].sum()
    rows = []
    for threshold in thresholds:
        frame = trainer.evaluate(split, threshold=threshold)
        rows.append({
            'threshold': threshold,
            'kept_fraction': frame['kept_fraction'].mean(),
            'relative_time': frame['fine_evaluations'].sum() / base_evaluations,
            'psnr': frame['psnr'].mean(),
            'ssim': frame['ssim'].mean(),
            'wall_clock_seconds': frame['seconds'].sum(),
            'relative_wall_clock': frame['seconds'].sum() / base_seconds if base_seconds > 0 else float('nan')
        })
        logger.info(f"threshold {threshold}: kept {rows[-1]['kept_fraction']:.3f}, PSNR {rows[-1]['psnr']:.2f}")
    return pd.DataFrame(rows)


def cmd_sweep(args: argparse.Namespace) -> int:
    started = datetime.now()
    thresholds = parse_thresholds(args.thresholds)
    trainer = load_trainer(args)
    if not trainer.model.has_importance_head:
        raise UserError(f"Checkpoint '{args.checkpoint}' ({trainer.model.architecture}) has no importance "
                        "head; train with a learnt proposer and proposer.with_importance = true")
    out = _output_dir(args, 'sweep')

    _banner(f"Importance sweep over {len(thresholds)} thresholds on {args.split}")
    table = sweep_table(trainer, args.split, thresholds)
    table.to_csv(out / 'sweep.csv', index=False)
    (out / 'sweep.svg').write_text(svg_line_chart(
        table['relative_time'].tolist(), table['psnr'].tolist(),
        x_label='relative time (fine evaluations)', y_label='PSNR (dB)',
        title=f"{trainer.model.architecture}: quality vs. compute"))
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    write_run_manifest(out, 'sweep', trainer.run_config, started, ['sweep.csv', 'sweep.svg'],
                       {'checkpoint': str(args.checkpoint)})
    return EXIT_OK


def cmd_profile(args: argparse.Namespace) -> int:
    started = datetime.now()
    trainer = load_trainer(args)
    images = trainer.dataset.split(args.split)
    if not 0 <= args.view < len(images):
        raise UserError(f"View {args.view} outside split '{args.split}' ({len(images)} images)")
    camera = images[args.view].camera
    row = camera.height // 2 if args.row is None else args.row
    if not 0 <= row < camera.height:
        raise UserError(f"Row {row} outside the {camera.height}-row image")
    out = _output_dir(args, 'profile')

    rays = camera.rays().subset(slice(row * camera.width, (row + 1) * camera.width))
    inspected = trainer.inspect_rays(rays)
    pixels = np.broadcast_to(np.arange(camera.width)[:, None], inspected['t'].shape)
    table = pd.DataFrame({
        'pixel': pixels.reshape(-1),
        't': inspected['t'].reshape(-1),
        'provenance': inspected['provenance'].reshape(-1),
        'weight': inspected['weight'].reshape(-1),
        'importance': inspected['importance'].reshape(-1)
    })
    table.to_csv(out / 'profile.csv', index=False)
    (out / 'profile.svg').write_text(svg_profile(table, title=f"view {args.view}, row {row}"))
    write_run_manifest(out, 'profile', trainer.run_config, started, ['profile.csv', 'profile.svg'],
                       {'checkpoint': str(args.checkpoint), 'view': args.view, 'row': row})
    print(f"\n✅ Profile of view {args.view}, row {row} written to {out}")
    return EXIT_OK


# ============================================================================
# CHARTS
# ============================================================================

def _scale(values: Sequence[float], lo: float, hi: float):
    vmin, vmax = float(np.nanmin(values)), float(np.nanmax(values))
    span = vmax - vmin or 1.0
    return lambda v: lo + (float(v) - vmin) / span * (hi - lo), vmin, vmax


def _frame(width: int, height: int, margin: int, title: str, x_label: str, y_label: str) -> List[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="16" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle">{x_label}</text>',
        f'<text x="14" y="{height / 2}" text-anchor="middle" transform="rotate(-90 14 {height / 2})">{y_label}</text>'
    ]


def svg_line_chart(xs: Sequence[float], ys: Sequence[float], x_label: str, y_label: str, title: str,
                   width: int = 480, height: int = 320, margin: int = 48) -> str:
    sx, x0, x1 = _scale(xs, margin, width - margin)
    sy, y0, y1 = _scale(ys, height - margin, margin)
    parts = _frame(width, height, margin, title, x_label, y_label)
    order = np.argsort(xs)
    points = ' '.join(f"{sx(xs[i]):.1f},{sy(ys[i]):.1f}" for i in order)
    parts.append(f'<polyline points="{points}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="#1f77b4"/>')
    parts.append(f'<text x="{margin}" y="{height - margin + 14}" text-anchor="middle">{x0:.2f}</text>')
    parts.append(f'<text x="{width - margin}" y="{height - margin + 14}" text-anchor="middle">{x1:.2f}</text>')
    parts.append(f'<text x="{margin - 4}" y="{height - margin}" text-anchor="end">{y0:.2f}</text>')
    parts.append(f'<text x="{margin - 4}" y="{margin + 4}" text-anchor="end">{y1:.2f}</text>')
    parts.append('</svg>')
    return '\n'.join(parts)


PROVENANCE_COLORS = {'coarse': '#7f7f7f', 'heuristic': '#2ca02c', 'learned': '#d62728'}


def svg_profile(table: pd.DataFrame, title: str, width: int = 640, height: int = 360, margin: int = 48) -> str:
    """Scatter of sample depth against pixel, colored by provenance, opacity from importance"""
    sx, _, _ = _scale(table['pixel'].tolist(), margin, width - margin)
    parts = _frame(width, height, margin, title, 'pixel', 'normalized depth t')
    for record in table.itertuples(index=False):
        y = height - margin - record.t * (height - 2 * margin)
        opacity = 0.8 if np.isnan(record.importance) else 0.15 + 0.85 * record.importance
        color = PROVENANCE_COLORS.get(record.provenance, '#1f77b4')
        parts.append(f'<circle cx="{sx(record.pixel):.1f}" cy="{y:.1f}" r="2" fill="{color}" '
                     f'fill-opacity="{opacity:.2f}"/>')
    for i, (name, color) in enumerate(PROVENANCE_COLORS.items()):
        parts.append(f'<text x="{width - margin}" y="{margin + 14 * i}" text-anchor="end" fill="{color}">{name}</text>')
    parts.append('</svg>')
    return '\n'.join(parts)


# ============================================================================
# ENTRY POINT
# ============================================================================

COMMANDS = {
    'train': cmd_train,
    'render': cmd_render,
    'eval': cmd_eval,
    'sweep': cmd_sweep,
    'profile': cmd_profile
}


def _describe_validation_error(error: ValidationError) -> str:
    problems = []
    for item in error.errors():
        key = '.'.join(str(part) for part in item['loc'])
        problems.append(f"{key}: {item['msg']}")
    return '; '.join(problems)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK

    configure_logging()
    gc.set_precision(CONFIG['runtime']['precision'])
    try:
        return COMMANDS[args.command](args)
    except (NumericalError, ConvergenceError) as e:
        logger.error(f"Numerical failure: {e}", exc_info=True)
        print(f"\n❌ Numerical failure: {e}")
        return EXIT_NUMERICAL
    except ValidationError as e:
        message = _describe_validation_error(e)
        logger.error(f"Invalid configuration: {message}")
        print(f"\n❌ Invalid configuration: {message}")
        return EXIT_USER_ERROR
    except (UserError, CheckpointError, DatasetError, FileNotFoundError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(f"\n❌ {e}")
        return EXIT_USER_ERROR


if __name__ == '__main__':
    sys.exit(main())
