"""Sparse voxel certainty grid: opacity-over-volume accumulation per cell.

Each occupied voxel holds the sum of alpha / (volume + epsilon) over the
Gaussians whose center falls inside it, so small opaque primitives dominate.
Cells are keyed by linearized index ix * R^2 + iy * R + iz and stored as
parallel sorted arrays for vectorized projection math downstream.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateBounds, EmptyGrid, MalformedFile, ResolutionTooSmall
from .scene_io import GaussianScene, SceneBounds

OUTSIDE = None

_GRID_MAGIC = b"FVGRID01"

# fixed partition size so parallel builds reduce in the same order at any
# worker count
_BUILD_CHUNK = 65536


@dataclass(frozen=True)
class CertaintyGrid:
    bounds: SceneBounds
    resolution: int
    indices: np.ndarray  # (M,) int64 sorted linearized voxel indices
    values: np.ndarray  # (M,) float64 certainty > 0
    epsilon: float

    @property
    def occupied(self) -> int:
        return int(self.indices.shape[0])

    def total(self) -> float:
        return float(self.values.sum())

    def cells(self) -> dict[tuple[int, int, int], float]:
        """Sparse map keyed by (x, y, z) voxel index."""
        R = self.resolution
        out = {}
        for lin, val in zip(self.indices.tolist(), self.values.tolist()):
            out[(lin // (R * R), (lin // R) % R, lin % R)] = val
        return out

    def unlinearize(self, lin: np.ndarray) -> np.ndarray:
        R = self.resolution
        lin = np.asarray(lin)
        return np.stack([lin // (R * R), (lin // R) % R, lin % R], axis=-1)

    def voxel_centers(self, lin: np.ndarray | None = None) -> np.ndarray:
        """World-space centers of the given (default: all occupied) voxels."""
        if lin is None:
            lin = self.indices
        ijk = self.unlinearize(lin).astype(np.float64)
        cell = self.bounds.extent / self.resolution
        return self.bounds.min_corner + (ijk + 0.5) * cell

    def value_at(self, lin: int) -> float:
        pos = np.searchsorted(self.indices, lin)
        if pos < self.occupied and self.indices[pos] == lin:
            return float(self.values[pos])
        return 0.0


def voxel_indices_of(grid_bounds: SceneBounds, resolution: int, points: np.ndarray):
    """Vectorized voxel lookup. Returns (ijk int array, inside bool mask).

    Half-open convention: a coordinate exactly on the max face is outside.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    t = (points - grid_bounds.min_corner) / grid_bounds.extent
    inside = np.all((t >= 0.0) & (t < 1.0), axis=1)
    ijk = np.floor(t * resolution).astype(np.int64)
    # guard float round-up at the inner edge of the last cell
    np.clip(ijk, 0, resolution - 1, out=ijk)
    return ijk, inside


def voxel_of(grid: CertaintyGrid, point: np.ndarray):
    """Voxel index (x, y, z) containing `point`, or None when outside bounds."""
    ijk, inside = voxel_indices_of(grid.bounds, grid.resolution, point)
    if not inside[0]:
        return OUTSIDE
    return tuple(int(v) for v in ijk[0])


def linearize(resolution: int, ijk: np.ndarray) -> np.ndarray:
    ijk = np.asarray(ijk, dtype=np.int64)
    return (ijk[..., 0] * resolution + ijk[..., 1]) * resolution + ijk[..., 2]


def _accumulate(resolution, bounds, centers, scores) -> dict[int, float]:
    ijk, inside = voxel_indices_of(bounds, resolution, centers)
    lin = linearize(resolution, ijk[inside])
    vals = scores[inside]
    if lin.size == 0:
        return {}
    order = np.argsort(lin, kind="stable")
    lin, vals = lin[order], vals[order]
    uniq, starts = np.unique(lin, return_index=True)
    sums = np.add.reduceat(vals, starts)
    return dict(zip(uniq.tolist(), sums.tolist()))


def build_certainty_grid(scene: GaussianScene, bounds: SceneBounds, resolution: int = 128,
                         epsilon: float = 1e-8, threads: int = 1) -> CertaintyGrid:
    """Accumulate per-voxel certainty sum(alpha / (vol + eps)) over contained centers.

    Primitives are processed in fixed-size index chunks merged in chunk order,
    so the result is bit-identical at any thread count.
    """
    if resolution < 2:
        raise ResolutionTooSmall(f"grid resolution must be >= 2, got {resolution}")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if not np.all(bounds.extent > 0):
        raise DegenerateBounds("bounds have non-positive extent")

    volumes = np.exp(scene.log_scales.sum(axis=1))
    scores = scene.opacities / (volumes + epsilon)

    chunks = [(s, min(s + _BUILD_CHUNK, scene.count)) for s in range(0, scene.count, _BUILD_CHUNK)]
    if threads > 1 and len(chunks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(
                lambda se: _accumulate(resolution, bounds, scene.centers[se[0]:se[1]], scores[se[0]:se[1]]),
                chunks,
            ))
    else:
        partials = [_accumulate(resolution, bounds, scene.centers[s:e], scores[s:e])
                    for s, e in chunks]

    total: dict[int, float] = {}
    for part in partials:
        for lin, val in part.items():
            total[lin] = total.get(lin, 0.0) + val

    lin = np.fromiter(total.keys(), dtype=np.int64, count=len(total))
    vals = np.fromiter(total.values(), dtype=np.float64, count=len(total))
    order = np.argsort(lin)
    return CertaintyGrid(bounds, resolution, lin[order], vals[order], epsilon)


def sample_lookat(grid: CertaintyGrid, central_fraction: float = 0.5,
                  rng_seed: int = 0) -> np.ndarray:
    """Certainty-weighted draw of an occupied voxel center in the central region.

    The central region spans the middle `central_fraction` of each axis by
    voxel index; when it holds no occupied voxel the draw falls back to the
    whole grid.
    """
    if grid.occupied == 0:
        raise EmptyGrid("cannot sample a look-at point from an empty grid")
    if not (0 < central_fraction <= 1):
        raise ValueError("central_fraction must be in (0, 1]")
    R = grid.resolution
    lo = int(np.floor(R * (1 - central_fraction) / 2))
    hi = R - lo
    ijk = grid.unlinearize(grid.indices)
    central = np.all((ijk >= lo) & (ijk < hi), axis=1)
    if not np.any(central):
        central = np.ones(grid.occupied, dtype=bool)
    values = grid.values[central]
    rng = np.random.default_rng(rng_seed)
    pick = rng.choice(values.size, p=values / values.sum())
    chosen = grid.indices[central][pick]
    return grid.voxel_centers(np.array([chosen]))[0]


def save_grid(path, grid: CertaintyGrid) -> None:
    """Binary sidecar: magic, bounds, R, epsilon, count, then (index, value) pairs."""
    with open(path, "wb") as fh:
        fh.write(_GRID_MAGIC)
        fh.write(struct.pack("<6d", *grid.bounds.min_corner, *grid.bounds.max_corner))
        fh.write(struct.pack("<IdQ", grid.resolution, grid.epsilon, grid.occupied))
        fh.write(grid.indices.astype("<i8").tobytes())
        fh.write(grid.values.astype("<f8").tobytes())


def load_grid(path) -> CertaintyGrid:
    with open(path, "rb") as fh:
        if fh.read(8) != _GRID_MAGIC:
            raise MalformedFile(f"{path}: not a certainty grid sidecar")
        bounds_vals = struct.unpack("<6d", fh.read(48))
        resolution, epsilon, count = struct.unpack("<IdQ", fh.read(20))
        indices = np.frombuffer(fh.read(8 * count), dtype="<i8").astype(np.int64)
        values = np.frombuffer(fh.read(8 * count), dtype="<f8").astype(np.float64)
    bounds = SceneBounds(np.array(bounds_vals[:3]), np.array(bounds_vals[3:]))
    return CertaintyGrid(bounds, int(resolution), indices, values, float(epsilon))


def dump_grid_json(path, grid: CertaintyGrid) -> None:
    """Human-readable debug dump of the sparse cells."""
    doc = {
        "bounds": {"min": grid.bounds.min_corner.tolist(), "max": grid.bounds.max_corner.tolist()},
        "resolution": grid.resolution,
        "epsilon": grid.epsilon,
        "occupied": grid.occupied,
        "total_certainty": grid.total(),
        "cells": [
            {"index": [int(i) for i in grid.unlinearize(lin)], "certainty": float(v)}
            for lin, v in zip(grid.indices.tolist(), grid.values.tolist())
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1))
