"""
Tests for the analytic oracle, cameras and posed-image datasets
"""

import numpy as np
import pytest

from metrics import psnr
from render import Ray, RayBatch
from scenes import (AnalyticScene, Box, Camera, ConvergenceError, DatasetError, SceneConfig, Shell, Sphere,
                    build_scene, foreground_fraction, generate_dataset, load_posed_images, look_at,
                    oracle_field, oracle_render, pixel_ray, read_ppm, sampled_oracle_render, save_posed_images,
                    write_ppm)

WHITE = (1.0, 1.0, 1.0)
ALBEDO = np.array([0.2, 0.4, 0.6])


def axis_ray(offset=(0.0, 0.0)) -> Ray:
    return Ray(np.array([offset[0], offset[1], -4.0]), np.array([0.0, 0.0, 1.0]), 2.0, 6.0)


def through(density: float, length: float) -> np.ndarray:
    transmittance = np.exp(-density * length)
    return ALBEDO * (1 - transmittance) + transmittance * np.asarray(WHITE)


class TestOracle:

    def test_empty_scene_is_background(self):
        np.testing.assert_allclose(oracle_render(AnalyticScene([], WHITE), axis_ray()), WHITE)

    def test_sphere_through_center(self):
        scene = AnalyticScene([Sphere(np.zeros(3), 0.5, 4.0, ALBEDO)], WHITE)
        np.testing.assert_allclose(oracle_render(scene, axis_ray()), through(4.0, 1.0), rtol=1e-9)

    def test_sphere_off_center_chord(self):
        scene = AnalyticScene([Sphere(np.zeros(3), 0.5, 3.0, ALBEDO)], WHITE)
        chord = 2 * np.sqrt(0.25 - 0.3 ** 2)
        np.testing.assert_allclose(oracle_render(scene, axis_ray((0.3, 0.0))), through(3.0, chord), rtol=1e-9)

    def test_box(self):
        scene = AnalyticScene([Box(-0.5 * np.ones(3), 0.5 * np.ones(3), 2.0, ALBEDO)], WHITE)
        np.testing.assert_allclose(oracle_render(scene, axis_ray((0.1, 0.2))), through(2.0, 1.0), rtol=1e-9)

    def test_shell_counts_both_walls(self):
        scene = AnalyticScene([Shell(np.zeros(3), 0.5, 0.4, 5.0, ALBEDO)], WHITE)
        np.testing.assert_allclose(oracle_render(scene, axis_ray()), through(5.0, 0.2), rtol=1e-9)

    def test_zero_density_primitive_is_invisible(self):
        scene = AnalyticScene([Sphere(np.zeros(3), 0.5, 0.0, ALBEDO)], WHITE)
        np.testing.assert_allclose(oracle_render(scene, axis_ray()), WHITE)

    def test_overlap_mixes_albedo_by_density(self):
        other = np.array([1.0, 0.0, 0.0])
        scene = AnalyticScene([Sphere(np.zeros(3), 0.5, 1.0, ALBEDO), Sphere(np.zeros(3), 0.5, 3.0, other)], WHITE)
        sigma, color = oracle_field(scene, np.zeros((1, 3)))
        assert sigma[0] == 4.0
        np.testing.assert_allclose(color[0], (ALBEDO + 3 * other) / 4)

    def test_negative_density_rejected(self):
        with pytest.raises(ValueError):
            AnalyticScene([Sphere(np.zeros(3), 0.5, -1.0, ALBEDO)])

    def test_batch_matches_single_rays(self):
        scene = build_scene(SceneConfig(n_primitives=3), np.random.default_rng(2))
        rays = [axis_ray((x, y)) for x, y in [(0.0, 0.0), (0.2, -0.1), (0.9, 0.9)]]
        batch = oracle_render(scene, RayBatch.from_rays(rays))
        for ray, color in zip(rays, batch):
            np.testing.assert_allclose(oracle_render(scene, ray), color, atol=1e-4)

    def test_quadrature_floor(self):
        with pytest.raises(ValueError):
            oracle_render(AnalyticScene([], WHITE), axis_ray(), n_quad=512)

    def test_unreachable_tolerance(self):
        scene = AnalyticScene([Sphere(np.zeros(3), 0.5, 4.0, ALBEDO)], WHITE)
        with pytest.raises(ConvergenceError):
            oracle_render(scene, axis_ray(), tolerance=0.0)

    def test_sampled_render_of_empty_scene(self):
        rays = RayBatch.from_rays([axis_ray(), axis_ray((0.3, 0.1))])
        np.testing.assert_allclose(sampled_oracle_render(AnalyticScene([], WHITE), rays, 32, 64), [WHITE, WHITE])

    def test_sampled_render_close_to_oracle(self):
        # box spans t in [12/32, 20/32]: coarse bin edges, so only fine-sample placement adds error
        scene = AnalyticScene([Box(-0.5 * np.ones(3), 0.5 * np.ones(3), 2.0, ALBEDO)], WHITE)
        rays = RayBatch.from_rays([axis_ray((0.1, 0.2))])
        np.testing.assert_allclose(sampled_oracle_render(scene, rays, 32, 64)[0], through(2.0, 1.0), atol=0.03)

    def test_sampled_image_reaches_35_db(self):
        scene = AnalyticScene([Sphere(np.zeros(3), 0.5, 0.5, ALBEDO)], WHITE)
        rays = Camera(40.0, 8.0, 8.0, 16, 16, look_at([0.0, -4.0, 0.0]), 2.0, 6.0).rays()
        exact = oracle_render(scene, rays)
        assert np.mean(np.any(exact < 0.99, axis=-1)) > 0.15
        assert psnr(sampled_oracle_render(scene, rays, 32, 64), exact) > 35.0


class TestCamera:

    def camera(self, pose=None) -> Camera:
        pose = np.concatenate([np.eye(3), np.zeros((3, 1))], axis=1) if pose is None else pose
        return Camera(2.0, 3.5, 3.5, 8, 8, pose, 2.0, 6.0)

    def test_principal_pixel_looks_forward(self):
        np.testing.assert_allclose(pixel_ray(self.camera(), 3, 3).direction, [0.0, 0.0, 1.0])

    def test_offset_pixel(self):
        np.testing.assert_allclose(pixel_ray(self.camera(), 5, 3).direction, np.array([1.0, 0.0, 1.0]) / np.sqrt(2))

    def test_out_of_bounds(self):
        with pytest.raises(ValueError):
            pixel_ray(self.camera(), 8, 0)

    def test_rejects_non_orthonormal_pose(self):
        pose = np.concatenate([2 * np.eye(3), np.zeros((3, 1))], axis=1)
        with pytest.raises(ValueError, match='orthonormal'):
            self.camera(pose)

    def test_rays_are_row_major(self):
        camera = Camera(6.0, 4.0, 4.0, 8, 8, look_at([0.0, -4.0, 1.0]), 2.0, 6.0)
        batch = camera.rays()
        assert len(batch) == 64
        ray = camera.pixel_ray(5, 2)
        np.testing.assert_allclose(batch.directions[2 * 8 + 5], ray.direction)
        np.testing.assert_allclose(batch.origins[2 * 8 + 5], [0.0, -4.0, 1.0])

    def test_projection_hits_pixel_center(self):
        camera = Camera(6.0, 4.0, 4.0, 8, 8, look_at([3.0, 1.0, 2.0]), 2.0, 6.0)
        ray = camera.pixel_ray(1, 6)
        np.testing.assert_allclose(camera.project(ray.origin + 3.0 * ray.direction), [1.5, 6.5], atol=1e-9)

    def test_look_at_faces_target(self):
        pose = look_at([0.0, -4.0, 0.0])
        np.testing.assert_allclose(pose[:, 2], [0.0, 1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(pose[:, :3].T @ pose[:, :3], np.eye(3), atol=1e-12)


class TestSceneConfig:

    @pytest.mark.parametrize('overrides', [
        {'near': 6.0, 'far': 2.0},
        {'resolution': (4, 8)},
        {'density_range': (5.0, 1.0)},
        {'kind': 'posed_images'},
        {'n_train': 0},
    ])
    def test_invalid(self, overrides):
        with pytest.raises(ValueError):
            SceneConfig(**overrides)


class TestDataset:

    def test_split_sizes_and_foreground(self, micro_dataset):
        config = micro_dataset.config
        for split, count in [('train', config.n_train), ('val', config.n_val), ('test', config.n_test)]:
            images = micro_dataset.split(split)
            assert len(images) == count
            for posed in images:
                assert posed.image.shape == (8, 8, 3)
                assert foreground_fraction(posed.image, micro_dataset.background) >= 0.01

    def test_same_seed_same_images(self, micro_dataset, micro_config):
        again = generate_dataset(micro_config.scene, workers=2)
        for a, b in zip(micro_dataset.split('train'), again.split('train')):
            np.testing.assert_array_equal(a.image, b.image)
            np.testing.assert_array_equal(a.camera.pose, b.camera.pose)

    def test_image_rays_match_pixels(self, micro_dataset):
        rays, targets = micro_dataset.image_rays('test', 0)
        assert len(rays) == 64 and targets.shape == (64, 3)
        posed = micro_dataset.split('test')[0]
        np.testing.assert_array_equal(targets[8 * 3 + 2], posed.image[3, 2])

    def test_ray_batch(self, micro_dataset):
        rays, targets = micro_dataset.ray_batch('train', np.random.default_rng(0), 10)
        assert len(rays) == 10 and targets.shape == (10, 3)

    def test_unknown_split(self, micro_dataset):
        with pytest.raises(ValueError):
            micro_dataset.split('holdout')


class TestPosedImages:

    def test_ppm_round_trip(self, tmp_path, rng):
        image = rng.random((5, 7, 3))
        write_ppm(tmp_path / 'a.ppm', image)
        np.testing.assert_allclose(read_ppm(tmp_path / 'a.ppm'), image, atol=0.5 / 255 + 1e-12)

    def test_directory_round_trip(self, tmp_path, micro_dataset):
        save_posed_images(micro_dataset, tmp_path / 'data')
        loaded = load_posed_images(tmp_path / 'data')
        assert loaded.config.kind == 'posed_images'
        assert loaded.config.resolution == (8, 8)
        for split in ('train', 'val', 'test'):
            for a, b in zip(micro_dataset.split(split), loaded.split(split)):
                assert a.name == b.name
                np.testing.assert_array_equal(a.camera.pose, b.camera.pose)
                assert a.camera.focal == b.camera.focal
                np.testing.assert_allclose(a.image, b.image, atol=0.5 / 255 + 1e-12)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError, match='manifest'):
            load_posed_images(tmp_path)

    def test_malformed_line_is_located(self, tmp_path, micro_dataset):
        save_posed_images(micro_dataset, tmp_path / 'data')
        manifest = tmp_path / 'data' / 'manifest.txt'
        lines = manifest.read_text().splitlines()
        lines[6] = ' '.join(lines[6].split()[:-1])
        manifest.write_text('\n'.join(lines) + '\n')
        with pytest.raises(DatasetError) as excinfo:
            load_posed_images(tmp_path / 'data')
        assert excinfo.value.line == 7
        assert 'manifest.txt:7:' in str(excinfo.value)

    def test_missing_image(self, tmp_path, micro_dataset):
        save_posed_images(micro_dataset, tmp_path / 'data')
        (tmp_path / 'data' / 'test' / '000.ppm').unlink()
        with pytest.raises(DatasetError, match='missing image'):
            load_posed_images(tmp_path / 'data')

    def test_count_mismatch(self, tmp_path, micro_dataset):
        save_posed_images(micro_dataset, tmp_path / 'data')
        manifest = tmp_path / 'data' / 'manifest.txt'
        manifest.write_text(manifest.read_text().replace('count 4', 'count 5'))
        with pytest.raises(DatasetError, match='declares'):
            load_posed_images(tmp_path / 'data')
