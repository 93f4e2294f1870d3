"""
Scenes and datasets for the NeRF-ID toolkit
Procedural constant-density scenes with an exact rendering oracle, pinhole
cameras, dataset generation, and the posed-image directory format
"""

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config import CONFIG
from render import (BACKGROUNDS, Ray, RayBatch, heuristic_pdf, inverse_cdf_sample, merge_and_sort,
                    stratified_sample)

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.txt'
MANIFEST_HEADER = 'nerf-id-manifest'
MANIFEST_VERSION = 1
SPLITS = ('train', 'val', 'test')
ORTHONORMAL_TOLERANCE = 1e-6
MIN_FOREGROUND_FRACTION = 0.01
ORACLE_CHUNK_RAYS = 128


class ConvergenceError(RuntimeError):
    """Oracle quadrature did not settle within the maximum resolution"""


class DatasetError(ValueError):
    """Posed-image directory is missing, malformed, or inconsistent"""

    def __init__(self, message: str, path: Optional[Path] = None, line: Optional[int] = None):
        location = ''
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class SceneConfig(BaseModel):
    """Scene kind, rendering conventions and dataset shape"""
    model_config = ConfigDict(extra='forbid')

    kind: Literal['analytic_spheres', 'analytic_boxes', 'analytic_shells', 'posed_images'] = 'analytic_spheres'
    background: Literal['white', 'black'] = 'white'
    density_noise_std: float = Field(0.0, ge=0.0)
    near: float = 2.0
    far: float = 6.0
    resolution: Tuple[int, int] = (64, 64)
    camera_layout: Literal['sphere', 'forward'] = 'sphere'
    camera_radius: float = Field(4.0, gt=0.0)
    fov_degrees: float = Field(40.0, gt=0.0, lt=180.0)
    n_train: int = Field(20, ge=1)
    n_val: int = Field(4, ge=1)
    n_test: int = Field(8, ge=1)
    n_primitives: int = Field(3, ge=0)
    density_range: Tuple[float, float] = (5.0, 15.0)
    shell_thickness: float = Field(0.06, gt=0.0)
    seed: int = 0
    data_path: Optional[str] = None

    @model_validator(mode='after')
    def check_geometry(self):
        if not self.near < self.far:
            raise ValueError(f"near ({self.near}) must be < far ({self.far})")
        if self.resolution[0] < 8 or self.resolution[1] < 8:
            raise ValueError(f"resolution must be at least 8x8, got {self.resolution}")
        if self.density_range[0] < 0 or self.density_range[0] > self.density_range[1]:
            raise ValueError(f"density_range must satisfy 0 <= low <= high, got {self.density_range}")
        if self.kind == 'posed_images' and not self.data_path:
            raise ValueError("posed_images scenes need data_path")
        return self

    @property
    def background_rgb(self) -> Tuple[float, float, float]:
        return BACKGROUNDS[self.background]


# ============================================================================
# PRIMITIVES
# ============================================================================

def _sphere_hits(origins: np.ndarray, directions: np.ndarray, center: np.ndarray,
                 radius: float) -> np.ndarray:
    offset = origins - center
    b = np.sum(directions * offset, axis=-1)
    c = np.sum(offset * offset, axis=-1) - radius ** 2
    disc = b * b - c
    root = np.sqrt(np.where(disc > 0, disc, np.nan))
    return np.stack([-b - root, -b + root], axis=-1)


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    density: float
    albedo: np.ndarray

    def contains(self, points: np.ndarray) -> np.ndarray:
        return np.sum((points - self.center) ** 2, axis=-1) <= self.radius ** 2

    def crossings(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        return _sphere_hits(origins, directions, self.center, self.radius)


@dataclass
class Box:
    """Axis-aligned box [lo, hi]"""
    lo: np.ndarray
    hi: np.ndarray
    density: float
    albedo: np.ndarray

    def contains(self, points: np.ndarray) -> np.ndarray:
        return np.all((points >= self.lo) & (points <= self.hi), axis=-1)

    def crossings(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        with np.errstate(divide='ignore', invalid='ignore'):
            t1 = (self.lo - origins) / directions
            t2 = (self.hi - origins) / directions
        t_enter = np.nanmax(np.minimum(t1, t2), axis=-1)
        t_exit = np.nanmin(np.maximum(t1, t2), axis=-1)
        hit = t_enter <= t_exit
        return np.stack([np.where(hit, t_enter, np.nan), np.where(hit, t_exit, np.nan)], axis=-1)


@dataclass
class Shell:
    """Sphere of radius ``outer`` with a concentric hollow of radius ``inner``"""
    center: np.ndarray
    outer: float
    inner: float
    density: float
    albedo: np.ndarray

    def contains(self, points: np.ndarray) -> np.ndarray:
        d2 = np.sum((points - self.center) ** 2, axis=-1)
        return (d2 <= self.outer ** 2) & (d2 > self.inner ** 2)

    def crossings(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        return np.concatenate([_sphere_hits(origins, directions, self.center, self.outer),
                               _sphere_hits(origins, directions, self.center, self.inner)], axis=-1)


Primitive = Union[Sphere, Box, Shell]


@dataclass
class AnalyticScene:
    """Constant-density primitives; densities are per world unit"""
    primitives: List[Primitive] = field(default_factory=list)
    background: Tuple[float, float, float] = BACKGROUNDS['white']

    def __post_init__(self):
        for primitive in self.primitives:
            if primitive.density < 0:
                raise ValueError(f"Primitive density must be >= 0, got {primitive.density}")


def build_scene(config: SceneConfig, rng: np.random.Generator) -> AnalyticScene:
    """Draw ``n_primitives`` random primitives of the configured kind around the origin"""
    primitives: List[Primitive] = []
    low, high = config.density_range
    for _ in range(config.n_primitives):
        center = rng.uniform(-0.5, 0.5, 3)
        density = float(rng.uniform(low, high))
        albedo = rng.uniform(0.1, 0.9, 3)
        if config.kind == 'analytic_spheres':
            primitives.append(Sphere(center, float(rng.uniform(0.25, 0.45)), density, albedo))
        elif config.kind == 'analytic_boxes':
            half = rng.uniform(0.15, 0.35, 3)
            primitives.append(Box(center - half, center + half, density, albedo))
        elif config.kind == 'analytic_shells':
            outer = float(rng.uniform(0.35, 0.5))
            primitives.append(Shell(center, outer, outer - config.shell_thickness, density, albedo))
        else:
            raise ValueError(f"Scene kind '{config.kind}' has no procedural generator")
    return AnalyticScene(primitives, config.background_rgb)


# ============================================================================
# ORACLE
# ============================================================================

def oracle_field(scene: AnalyticScene, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Ground-truth density and color

    Returns:
        sigma (...,): sum of densities of the primitives containing each point
        color (..., 3): density-weighted mean albedo, background where sigma = 0
    """
    points = np.asarray(points, dtype=np.float64)
    sigma = np.zeros(points.shape[:-1])
    weighted = np.zeros(points.shape)
    for primitive in scene.primitives:
        inside = primitive.contains(points) * primitive.density
        sigma += inside
        weighted += inside[..., None] * primitive.albedo
    background = np.broadcast_to(np.asarray(scene.background, dtype=np.float64), points.shape)
    with np.errstate(divide='ignore', invalid='ignore'):
        color = np.where(sigma[..., None] > 0, weighted / sigma[..., None], background)
    return sigma, color


def ray_primitive_intervals(scene: AnalyticScene, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """
    Depths at which each ray crosses a primitive boundary

    Returns:
        (R, K) world depths, NaN where a ray misses a boundary
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    if not scene.primitives:
        return np.zeros((len(origins), 0))
    return np.concatenate([p.crossings(origins, directions) for p in scene.primitives], axis=-1)


def compositing_weights(sigma: np.ndarray, delta: np.ndarray) -> np.ndarray:
    optical = sigma * delta
    alpha = -np.expm1(-optical)
    preceding = np.concatenate([np.zeros(optical.shape[:-1] + (1,)), np.cumsum(optical, axis=-1)[..., :-1]], axis=-1)
    return np.exp(-preceding) * alpha


def composite_numpy(sigma: np.ndarray, color: np.ndarray, delta: np.ndarray,
                    background: Sequence[float]) -> np.ndarray:
    weights = compositing_weights(sigma, delta)
    rgb = np.sum(weights[..., None] * color, axis=-2)
    return rgb + (1.0 - weights.sum(axis=-1))[..., None] * np.asarray(background, dtype=np.float64)


def quadrature_render(scene: AnalyticScene, batch: RayBatch, n_quad: int) -> np.ndarray:
    """
    Rendering equation on n_quad equal intervals refined at every boundary crossing

    The field is sampled at interval midpoints, so each interval lies inside a
    single constant-density region.
    """
    colors = np.empty((len(batch), 3))
    for window, rays in batch.chunks(ORACLE_CHUNK_RAYS):
        near, far = rays.near[:, None], rays.far[:, None]
        grid = near + (far - near) * (np.arange(n_quad + 1) / n_quad)
        crossings = ray_primitive_intervals(scene, rays.origins, rays.directions)
        crossings = np.clip(np.where(np.isnan(crossings), near, crossings), near, far)
        edges = np.sort(np.concatenate([grid, crossings], axis=-1), axis=-1)
        mids = 0.5 * (edges[:, 1:] + edges[:, :-1])
        delta = np.diff(edges, axis=-1)
        points = rays.origins[:, None, :] + mids[..., None] * rays.directions[:, None, :]
        sigma, color = oracle_field(scene, points)
        colors[window] = composite_numpy(sigma, color, delta, scene.background)
    return colors


def oracle_render(scene: AnalyticScene, rays: Union[Ray, RayBatch], n_quad: Optional[int] = None,
                  tolerance: Optional[float] = None) -> np.ndarray:
    """
    Converged ground-truth color

    Doubles the quadrature resolution until two successive results differ by
    less than ``tolerance`` on every ray.

    Raises:
        ConvergenceError: still unsettled at the maximum resolution
    """
    oracle = CONFIG['oracle']
    n = oracle['min_quad'] if n_quad is None else n_quad
    tolerance = oracle['tolerance'] if tolerance is None else tolerance
    if n < oracle['min_quad']:
        raise ValueError(f"oracle_render needs n_quad >= {oracle['min_quad']}, got {n}")
    single = isinstance(rays, Ray)
    batch = RayBatch.from_rays([rays]) if single else rays

    previous = quadrature_render(scene, batch, n)
    change = float('inf')
    while 2 * n <= oracle['max_quad']:
        n *= 2
        current = quadrature_render(scene, batch, n)
        change = float(np.max(np.abs(current - previous))) if len(batch) else 0.0
        if change < tolerance:
            return current[0] if single else current
        previous = current
    raise ConvergenceError(f"oracle_render did not converge by n_quad = {n} (last change {change:.2e})")


def sampled_oracle_render(scene: AnalyticScene, rays: RayBatch, n_coarse: int, n_fine: int) -> np.ndarray:
    """
    Ground-truth field rendered through the coarse-to-fine sampler

    Coarse samples sit at bin centers and the fine samples are the deterministic
    inverse-CDF draws from the coarse weights, so the only error left against
    ``oracle_render`` is the one due to sample placement.
    """
    span = (rays.far - rays.near)[:, None]

    def query(t: np.ndarray):
        depth = rays.near[:, None] + t * span
        points = rays.origins[:, None, :] + depth[..., None] * rays.directions[:, None, :]
        sigma, color = oracle_field(scene, points)
        delta = np.diff(np.concatenate([t, np.ones_like(t[:, :1])], axis=-1), axis=-1) * span
        return sigma, color, delta

    coarse = stratified_sample(n_coarse, batch_shape=(len(rays),))
    sigma, _, delta = query(coarse.values.astype(np.float64))
    fine = inverse_cdf_sample(heuristic_pdf(compositing_weights(sigma, delta), coarse), n_fine, deterministic=True)
    merged = merge_and_sort(coarse, fine).values.astype(np.float64)
    sigma, color, delta = query(merged)
    return composite_numpy(sigma, color, delta, scene.background)


# ============================================================================
# CAMERAS
# ============================================================================

def look_at(eye: Sequence[float], target: Sequence[float] = (0.0, 0.0, 0.0),
            up: Sequence[float] = (0.0, 0.0, 1.0)) -> np.ndarray:
    """World-from-camera pose (x right, y down, z forward)"""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(z, up)) > 1.0 - 1e-9:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.concatenate([np.stack([x, y, z], axis=1), eye[:, None]], axis=1)


@dataclass
class Camera:
    """Pinhole camera; pixel (px, py) covers [px, px+1) x [py, py+1) in image coordinates"""
    focal: float
    cx: float
    cy: float
    width: int
    height: int
    pose: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(3, 4)
        rotation = self.pose[:, :3]
        error = float(np.max(np.abs(rotation.T @ rotation - np.eye(3))))
        if error > ORTHONORMAL_TOLERANCE:
            raise ValueError(f"Camera rotation is not orthonormal (max error {error:.2e})")

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:, :3]

    @property
    def position(self) -> np.ndarray:
        return self.pose[:, 3]

    def _directions(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        local = np.stack([(px + 0.5 - self.cx) / self.focal,
                          (py + 0.5 - self.cy) / self.focal,
                          np.ones(np.shape(px))], axis=-1)
        world = local @ self.rotation.T
        return world / np.linalg.norm(world, axis=-1, keepdims=True)

    def pixel_ray(self, px: int, py: int) -> Ray:
        if not (0 <= px < self.width and 0 <= py < self.height):
            raise ValueError(f"Pixel ({px}, {py}) outside the {self.width}x{self.height} image")
        direction = self._directions(np.asarray(float(px)), np.asarray(float(py)))
        return Ray(self.position.copy(), direction, self.near, self.far)

    def rays(self) -> RayBatch:
        """Pixel-center rays in row-major order"""
        py, px = np.meshgrid(np.arange(self.height, dtype=np.float64),
                             np.arange(self.width, dtype=np.float64), indexing='ij')
        directions = self._directions(px.reshape(-1), py.reshape(-1))
        origins = np.broadcast_to(self.position, directions.shape)
        return RayBatch(origins, directions, self.near, self.far)

    def project(self, points: np.ndarray) -> np.ndarray:
        """World points -> continuous image coordinates (u, v)"""
        local = (np.asarray(points, dtype=np.float64) - self.position) @ self.rotation
        return np.stack([self.focal * local[..., 0] / local[..., 2] + self.cx,
                         self.focal * local[..., 1] / local[..., 2] + self.cy], axis=-1)


def pixel_ray(camera: Camera, px: int, py: int) -> Ray:
    return camera.pixel_ray(px, py)


def _draw_camera(config: SceneConfig, rng: np.random.Generator) -> Camera:
    height, width = config.resolution
    focal = 0.5 * width / np.tan(0.5 * np.radians(config.fov_degrees))
    if config.camera_layout == 'sphere':
        azimuth = rng.uniform(0.0, 2.0 * np.pi)
        elevation = np.radians(rng.uniform(15.0, 65.0))
        eye = config.camera_radius * np.array([np.cos(elevation) * np.cos(azimuth),
                                               np.cos(elevation) * np.sin(azimuth),
                                               np.sin(elevation)])
        pose = look_at(eye)
    else:
        offset = rng.uniform(-0.4, 0.4, 2)
        rotation = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])
        eye = np.array([offset[0], -config.camera_radius, offset[1]])
        pose = np.concatenate([rotation, eye[:, None]], axis=1)
    return Camera(focal, width / 2.0, height / 2.0, width, height, pose, config.near, config.far)


# ============================================================================
# DATASETS
# ============================================================================

@dataclass
class PosedImage:
    name: str
    camera: Camera
    image: np.ndarray


@dataclass
class SceneDataset:
    """Posed images per split; immutable once built"""
    config: SceneConfig
    splits: Dict[str, List[PosedImage]]
    scene: Optional[AnalyticScene] = None
    _pools: Dict[str, Tuple[RayBatch, np.ndarray]] = field(default_factory=dict, repr=False)

    @property
    def background(self) -> Tuple[float, float, float]:
        return self.config.background_rgb

    def split(self, name: str) -> List[PosedImage]:
        if name not in self.splits:
            raise ValueError(f"Unknown split '{name}', expected one of {sorted(self.splits)}")
        return self.splits[name]

    def image_rays(self, split: str, index: int) -> Tuple[RayBatch, np.ndarray]:
        posed = self.split(split)[index]
        return posed.camera.rays(), posed.image.reshape(-1, 3)

    def ray_pool(self, split: str) -> Tuple[RayBatch, np.ndarray]:
        if split not in self._pools:
            images = self.split(split)
            if not images:
                raise ValueError(f"Split '{split}' is empty")
            batches = [p.camera.rays() for p in images]
            pool = RayBatch(np.concatenate([b.origins for b in batches]),
                            np.concatenate([b.directions for b in batches]),
                            np.concatenate([b.near for b in batches]),
                            np.concatenate([b.far for b in batches]))
            targets = np.concatenate([p.image.reshape(-1, 3) for p in images])
            self._pools[split] = (pool, targets)
        return self._pools[split]

    def ray_batch(self, split: str, rng: np.random.Generator, n: int) -> Tuple[RayBatch, np.ndarray]:
        """``n`` random pixel-center rays drawn across every image of ``split``"""
        pool, targets = self.ray_pool(split)
        index = rng.integers(0, len(pool), size=n)
        return pool.subset(index), targets[index]


def render_view(scene: AnalyticScene, camera: Camera) -> np.ndarray:
    return oracle_render(scene, camera.rays()).reshape(camera.height, camera.width, 3)


def foreground_fraction(image: np.ndarray, background: Sequence[float]) -> float:
    return float(np.mean(np.any(np.abs(image - np.asarray(background)) > 1.0 / 255.0, axis=-1)))


def generate_dataset(config: SceneConfig, rng: Optional[np.random.Generator] = None,
                     workers: Optional[int] = None, max_attempts: int = 50) -> SceneDataset:
    """
    Render train/val/test views of a procedural scene with the oracle

    Views showing less than 1% foreground are redrawn. The result depends
    only on ``rng`` (default: seeded from ``config.seed``).
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    scene = build_scene(config, rng)
    workers = workers or CONFIG['runtime']['workers'] or 1
    counts = {'train': config.n_train, 'val': config.n_val, 'test': config.n_test}
    logger.info(f"Generating {config.kind} dataset: {counts} views at {config.resolution}")

    splits: Dict[str, List[PosedImage]] = {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for split, count in counts.items():
            accepted: Dict[int, PosedImage] = {}
            pending = list(range(count))
            for attempt in range(max_attempts):
                if not pending:
                    break
                cameras = [_draw_camera(config, rng) for _ in pending]
                images = list(pool.map(lambda camera: render_view(scene, camera), cameras))
                rejected = []
                for slot, camera, image in zip(pending, cameras, images):
                    if foreground_fraction(image, scene.background) >= MIN_FOREGROUND_FRACTION:
                        accepted[slot] = PosedImage(f"{split}/{slot:03d}.ppm", camera, image)
                    else:
                        rejected.append(slot)
                pending = rejected
            if pending:
                raise DatasetError(f"{len(pending)} {split} views still show < 1% foreground "
                                   f"after {max_attempts} attempts")
            splits[split] = [accepted[i] for i in range(count)]
    return SceneDataset(config, splits, scene)


def build_dataset(config: SceneConfig, workers: Optional[int] = None) -> SceneDataset:
    if config.kind == 'posed_images':
        return load_posed_images(config.data_path)
    return generate_dataset(config, workers=workers)


# ============================================================================
# POSED-IMAGE DIRECTORIES
# ============================================================================

def write_ppm(path: Union[str, Path], image: np.ndarray):
    pixels = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    height, width = pixels.shape[:2]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(f"P6\n{width} {height}\n255\n".encode('ascii') + pixels.tobytes())


_PPM_HEADER = re.compile(rb'P6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s')


def read_ppm(path: Union[str, Path]) -> np.ndarray:
    """Binary 8-bit PPM -> float image in [0, 1], shape (H, W, 3)"""
    payload = Path(path).read_bytes()
    match = _PPM_HEADER.match(payload)
    if not match:
        raise DatasetError("not a binary (P6) PPM image", Path(path))
    width, height, maxval = (int(g) for g in match.groups())
    if maxval != 255:
        raise DatasetError(f"unsupported PPM maxval {maxval}", Path(path))
    data = np.frombuffer(payload, dtype=np.uint8, offset=match.end())
    if data.size != width * height * 3:
        raise DatasetError(f"expected {width * height * 3} bytes of pixels, found {data.size}", Path(path))
    return data.reshape(height, width, 3).astype(np.float64) / 255.0


def save_posed_images(dataset: SceneDataset, path: Union[str, Path]):
    """Write images as PPM plus ``manifest.txt`` (inverse of load_posed_images)"""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    height, width = dataset.config.resolution
    entries = [posed for split in SPLITS for posed in dataset.splits.get(split, [])]
    lines = [f"{MANIFEST_HEADER} {MANIFEST_VERSION}",
             f"background {dataset.config.background}",
             f"resolution {height} {width}",
             f"count {len(entries)}",
             "# filename focal cx cy pose(3x4, row-major) near far"]
    for posed in entries:
        camera = posed.camera
        values = [camera.focal, camera.cx, camera.cy, *camera.pose.reshape(-1), camera.near, camera.far]
        lines.append(' '.join([posed.name] + [repr(float(v)) for v in values]))
        write_ppm(root / posed.name, posed.image)
    (root / MANIFEST_NAME).write_text('\n'.join(lines) + '\n')
    logger.info(f"Saved {len(entries)} posed images to {root}")


def _parse_header(lines: List[Tuple[int, str]], manifest: Path) -> Tuple[Dict[str, List[str]], List[Tuple[int, str]]]:
    if not lines:
        raise DatasetError("empty manifest", manifest)
    number, first = lines[0]
    tokens = first.split()
    if len(tokens) != 2 or tokens[0] != MANIFEST_HEADER:
        raise DatasetError(f"expected '{MANIFEST_HEADER} {MANIFEST_VERSION}' header", manifest, number)
    if tokens[1] != str(MANIFEST_VERSION):
        raise DatasetError(f"unsupported manifest version {tokens[1]}", manifest, number)
    header: Dict[str, List[str]] = {}
    rest = lines[1:]
    while rest and rest[0][1].split()[0] in ('background', 'resolution', 'count'):
        number, line = rest.pop(0)
        key, *values = line.split()
        header[key] = values
    for key in ('background', 'resolution', 'count'):
        if key not in header:
            raise DatasetError(f"manifest header lacks '{key}'", manifest)
    return header, rest


def load_posed_images(path: Union[str, Path]) -> SceneDataset:
    """
    Load a directory of PPM images described by ``manifest.txt``

    Raises:
        DatasetError: no manifest, malformed line (with its line number),
            missing image file, or image/pose count mismatch
    """
    root = Path(path)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise DatasetError(f"no {MANIFEST_NAME} found", root)

    raw = manifest.read_text().splitlines()
    lines = [(i + 1, line.strip()) for i, line in enumerate(raw)
             if line.strip() and not line.strip().startswith('#')]
    header, entries = _parse_header(lines, manifest)
    try:
        background = header['background'][0]
        height, width = (int(v) for v in header['resolution'])
        count = int(header['count'][0])
    except (IndexError, ValueError) as e:
        raise DatasetError(f"malformed header: {e}", manifest) from e
    if background not in BACKGROUNDS:
        raise DatasetError(f"unknown background '{background}'", manifest)

    splits: Dict[str, List[PosedImage]] = {split: [] for split in SPLITS}
    near_far = []
    for number, line in entries:
        tokens = line.split()
        if len(tokens) != 18:
            raise DatasetError(f"expected 18 fields (filename, focal, cx, cy, 12 pose values, near, far), "
                               f"got {len(tokens)}", manifest, number)
        name = tokens[0]
        try:
            values = [float(v) for v in tokens[1:]]
        except ValueError as e:
            raise DatasetError(f"non-numeric field: {e}", manifest, number) from e
        split = Path(name).parts[0] if len(Path(name).parts) > 1 else ''
        if split not in SPLITS:
            raise DatasetError(f"image '{name}' is not under one of {SPLITS}", manifest, number)
        image_path = root / name
        if not image_path.exists():
            raise DatasetError(f"missing image file '{name}'", manifest, number)
        image = read_ppm(image_path)
        if image.shape[:2] != (height, width):
            raise DatasetError(f"image '{name}' is {image.shape[1]}x{image.shape[0]}, "
                               f"header says {width}x{height}", manifest, number)
        focal, cx, cy = values[:3]
        try:
            camera = Camera(focal, cx, cy, width, height, np.array(values[3:15]).reshape(3, 4),
                            values[15], values[16])
        except ValueError as e:
            raise DatasetError(str(e), manifest, number) from e
        near_far.append((values[15], values[16]))
        splits[split].append(PosedImage(name, camera, image))

    if len(entries) != count:
        raise DatasetError(f"header declares {count} images, manifest lists {len(entries)}", manifest)

    near, far = (near_far[0] if near_far else (2.0, 6.0))
    config = SceneConfig(kind='posed_images', background=background, near=near, far=far,
                         resolution=(height, width), data_path=str(root),
                         n_train=max(len(splits['train']), 1), n_val=max(len(splits['val']), 1),
                         n_test=max(len(splits['test']), 1))
    logger.info(f"Loaded {len(entries)} posed images from {root}")
    return SceneDataset(config, splits)
