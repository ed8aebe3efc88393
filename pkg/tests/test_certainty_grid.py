import numpy as np
import pytest

from freeview.certainty_grid import (
    build_certainty_grid,
    dump_grid_json,
    load_grid,
    sample_lookat,
    save_grid,
    voxel_of,
)
from freeview.errors import EmptyGrid, ResolutionTooSmall
from freeview.scene_io import GaussianScene, SceneBounds

from conftest import random_scene


def unit_bounds():
    return SceneBounds(np.zeros(3), np.ones(3))


def single_gaussian(center, log_scales=(0.0, 0.0, 0.0), opacity=1.0):
    return GaussianScene(
        centers=np.array([center], dtype=float),
        log_scales=np.array([log_scales], dtype=float),
        rotations=np.array([[1.0, 0, 0, 0]]),
        opacities=np.array([opacity], dtype=float),
        dc_colors=np.array([[0.5, 0.5, 0.5]]),
    )


def dense_oracle(scene, bounds, resolution, epsilon):
    """Direct triple-loop accumulation into a dense grid."""
    dense = np.zeros((resolution,) * 3)
    extent = bounds.max_corner - bounds.min_corner
    for j in range(scene.count):
        p = scene.centers[j]
        t = (p - bounds.min_corner) / extent
        if np.any(t < 0) or np.any(t >= 1):
            continue
        ix, iy, iz = (int(v) for v in np.floor(t * resolution))
        ix, iy, iz = min(ix, resolution - 1), min(iy, resolution - 1), min(iz, resolution - 1)
        vol = float(np.prod(np.exp(scene.log_scales[j])))
        dense[ix, iy, iz] += scene.opacities[j] / (vol + epsilon)
    return dense


class TestBuildCertaintyGrid:
    def test_single_unit_volume_gaussian(self):
        eps = 1e-8
        grid = build_certainty_grid(single_gaussian([0.5, 0.5, 0.5]), unit_bounds(), 4, eps)
        assert grid.occupied == 1
        assert grid.values[0] == pytest.approx(1.0 / (1.0 + eps))

    def test_two_gaussians_same_voxel_add(self):
        eps = 1e-8
        scene = GaussianScene(
            centers=np.array([[0.5, 0.5, 0.5], [0.51, 0.5, 0.5]]),
            log_scales=np.zeros((2, 3)),
            rotations=np.tile([1.0, 0, 0, 0], (2, 1)),
            opacities=np.array([0.5, 0.5]),
            dc_colors=np.full((2, 3), 0.5),
        )
        grid = build_certainty_grid(scene, unit_bounds(), 2, eps)
        assert grid.occupied == 1
        assert grid.values[0] == pytest.approx(1.0 / (1.0 + eps))

    def test_matches_dense_oracle(self, rng):
        scene = random_scene(rng, count=500)
        bounds = SceneBounds(np.full(3, -1.0), np.full(3, 1.0))
        eps = 1e-8
        grid = build_certainty_grid(scene, bounds, 8, eps)
        dense = dense_oracle(scene, bounds, 8, eps)
        sparse = np.zeros_like(dense)
        ijk = grid.unlinearize(grid.indices)
        sparse[ijk[:, 0], ijk[:, 1], ijk[:, 2]] = grid.values
        np.testing.assert_allclose(sparse, dense, atol=1e-9)

    def test_conservation(self, rng):
        scene = random_scene(rng, count=400, box=2.0)
        bounds = SceneBounds(np.full(3, -1.5), np.full(3, 1.5))
        eps = 1e-8
        grid = build_certainty_grid(scene, bounds, 16, eps)
        volumes = np.exp(scene.log_scales.sum(axis=1))
        inside = np.all((scene.centers >= bounds.min_corner)
                        & (scene.centers < bounds.max_corner), axis=1)
        direct = float((scene.opacities[inside] / (volumes[inside] + eps)).sum())
        assert grid.total() == pytest.approx(direct, rel=1e-6)
        assert np.any(~inside), "test needs some out-of-bounds primitives"

    def test_opacity_and_scale_monotonicity(self, rng):
        scene = random_scene(rng, count=50)
        bounds = SceneBounds(np.full(3, -1.0), np.full(3, 1.0))
        grid = build_certainty_grid(scene, bounds, 8, 1e-8)

        boosted = GaussianScene(scene.centers, scene.log_scales, scene.rotations,
                                np.minimum(scene.opacities * 1.5, 1.0), scene.dc_colors)
        g2 = build_certainty_grid(boosted, bounds, 8, 1e-8)
        assert g2.total() >= grid.total()

        fattened = GaussianScene(scene.centers, scene.log_scales + 0.5, scene.rotations,
                                 scene.opacities, scene.dc_colors)
        g3 = build_certainty_grid(fattened, bounds, 8, 1e-8)
        assert g3.total() <= grid.total()

    def test_resolution_refinement_children_sum(self, rng):
        scene = random_scene(rng, count=300)
        bounds = SceneBounds(np.full(3, -1.0), np.full(3, 1.0))
        coarse = build_certainty_grid(scene, bounds, 8, 1e-8)
        fine = build_certainty_grid(scene, bounds, 16, 1e-8)
        ijk_f = fine.unlinearize(fine.indices)
        parent = ijk_f // 2
        child_sum = {}
        for (px, py, pz), v in zip(map(tuple, parent), fine.values):
            child_sum[(px, py, pz)] = child_sum.get((px, py, pz), 0.0) + v
        coarse_cells = coarse.cells()
        assert set(child_sum) == set(coarse_cells)
        for key, v in coarse_cells.items():
            assert child_sum[key] == pytest.approx(v, rel=1e-9)

    def test_thread_count_bit_identical(self, rng):
        scene = random_scene(rng, count=200_000 // 100)  # 2000 primitives
        bounds = SceneBounds(np.full(3, -1.0), np.full(3, 1.0))
        g1 = build_certainty_grid(scene, bounds, 32, 1e-8, threads=1)
        g4 = build_certainty_grid(scene, bounds, 32, 1e-8, threads=4)
        assert np.array_equal(g1.indices, g4.indices)
        assert np.array_equal(g1.values, g4.values)

    def test_resolution_too_small(self, rng):
        with pytest.raises(ResolutionTooSmall):
            build_certainty_grid(random_scene(rng, 5), unit_bounds(), 1, 1e-8)

    def test_occupied_bounded_by_count(self, rng):
        scene = random_scene(rng, count=40)
        bounds = SceneBounds(np.full(3, -1.0), np.full(3, 1.0))
        grid = build_certainty_grid(scene, bounds, 128, 1e-8)
        assert grid.occupied <= scene.count


class TestVoxelOf:
    def test_min_corner(self):
        grid = build_certainty_grid(single_gaussian([0.5] * 3), unit_bounds(), 4, 1e-8)
        assert voxel_of(grid, np.zeros(3)) == (0, 0, 0)

    def test_max_corner_outside(self):
        grid = build_certainty_grid(single_gaussian([0.5] * 3), unit_bounds(), 4, 1e-8)
        assert voxel_of(grid, np.ones(3)) is None

    def test_midpoint_128(self):
        grid = build_certainty_grid(single_gaussian([0.5] * 3), unit_bounds(), 128, 1e-8)
        assert voxel_of(grid, np.full(3, 0.5)) == (64, 64, 64)


class TestSampleLookat:
    def test_single_voxel_deterministic(self):
        grid = build_certainty_grid(single_gaussian([0.5] * 3), unit_bounds(), 4, 1e-8)
        expected = grid.voxel_centers()[0]
        for seed in range(5):
            np.testing.assert_allclose(sample_lookat(grid, 1.0, seed), expected)

    def test_frequency_matches_certainty_ratio(self):
        scene = GaussianScene(
            centers=np.array([[0.45, 0.5, 0.5], [0.55, 0.5, 0.5]]),
            log_scales=np.zeros((2, 3)),
            rotations=np.tile([1.0, 0, 0, 0], (2, 1)),
            opacities=np.array([0.75, 0.25]),
            dc_colors=np.full((2, 3), 0.5),
        )
        grid = build_certainty_grid(scene, unit_bounds(), 8, 1e-8)
        assert grid.occupied == 2
        heavy = grid.voxel_centers()[np.argmax(grid.values)]
        draws = 100_000
        hits = 0
        for seed in range(draws):
            if np.allclose(sample_lookat(grid, 1.0, seed), heavy):
                hits += 1
        assert hits / draws == pytest.approx(0.75, abs=0.01)

    def test_central_restriction(self):
        # one voxel at the edge, one dead center; central half excludes the edge
        scene = GaussianScene(
            centers=np.array([[0.01, 0.01, 0.01], [0.5, 0.5, 0.5]]),
            log_scales=np.zeros((2, 3)),
            rotations=np.tile([1.0, 0, 0, 0], (2, 1)),
            opacities=np.array([0.9, 0.1]),
            dc_colors=np.full((2, 3), 0.5),
        )
        grid = build_certainty_grid(scene, unit_bounds(), 8, 1e-8)
        central = grid.voxel_centers()[np.argmin(grid.values)]
        for seed in range(20):
            np.testing.assert_allclose(sample_lookat(grid, 0.5, seed), central)

    def test_fallback_when_central_empty(self):
        scene = single_gaussian([0.01, 0.01, 0.01])
        grid = build_certainty_grid(scene, unit_bounds(), 8, 1e-8)
        out = sample_lookat(grid, 0.25, 0)
        np.testing.assert_allclose(out, grid.voxel_centers()[0])

    def test_empty_grid_raises(self):
        scene = single_gaussian([5.0, 5.0, 5.0])  # outside bounds
        grid = build_certainty_grid(scene, unit_bounds(), 8, 1e-8)
        with pytest.raises(EmptyGrid):
            sample_lookat(grid, 1.0, 0)


class TestSidecar:
    def test_binary_roundtrip(self, tmp_path, rng):
        scene = random_scene(rng, count=100)
        bounds = SceneBounds(np.full(3, -1.0), np.full(3, 1.0))
        grid = build_certainty_grid(scene, bounds, 16, 1e-8)
        path = tmp_path / "grid.bin"
        save_grid(path, grid)
        back = load_grid(path)
        assert back.resolution == grid.resolution
        assert back.epsilon == grid.epsilon
        np.testing.assert_array_equal(back.indices, grid.indices)
        np.testing.assert_array_equal(back.values, grid.values)
        np.testing.assert_allclose(back.bounds.min_corner, grid.bounds.min_corner)

    def test_json_dump(self, tmp_path, rng):
        import json

        scene = random_scene(rng, count=20)
        bounds = SceneBounds(np.full(3, -1.0), np.full(3, 1.0))
        grid = build_certainty_grid(scene, bounds, 8, 1e-8)
        path = tmp_path / "grid.json"
        dump_grid_json(path, grid)
        doc = json.loads(path.read_text())
        assert doc["occupied"] == grid.occupied
        assert doc["total_certainty"] == pytest.approx(grid.total())
