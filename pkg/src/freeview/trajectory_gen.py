"""Candidate pose pool: ten parametric trajectory modes around clustered anchors.

Object-centric modes (orbit, spiral, lemniscate, interpolation) aim at
certainty-sampled look-at points; move and dolly modes keep the anchor's
orientation. A configurable fraction of the pool receives pose jitter.
"""

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .certainty_grid import CertaintyGrid, sample_lookat
from .errors import DegenerateLookAt
from .geometry import (
    look_at_rotation,
    matrix_to_quat,
    normalize,
    quat_from_axis_angle,
    quat_multiply,
    quat_normalize,
    slerp,
)
from .scene_io import CameraPose, SceneBounds


class TrajectoryMode(Enum):
    ORBIT = "orbit"
    SPIRAL = "spiral"
    LEMNISCATE = "lemniscate"
    INTERPOLATION = "interpolation"
    MOVE_UP = "move_up"
    MOVE_DOWN = "move_down"
    MOVE_LEFT = "move_left"
    MOVE_RIGHT = "move_right"
    DOLLYZOOM_IN = "dollyzoom_in"
    DOLLYZOOM_OUT = "dollyzoom_out"


OBJECT_CENTRIC_MODES = (
    TrajectoryMode.ORBIT,
    TrajectoryMode.SPIRAL,
    TrajectoryMode.LEMNISCATE,
    TrajectoryMode.INTERPOLATION,
)

# fraction of the orbit radius used as the spiral's vertical swing
SPIRAL_HEIGHT_RATIO = 0.2
# cinematic step per frame as a fraction of the bounds diagonal
MOVE_STEP_FRACTION = 0.02


@dataclass(frozen=True)
class PlacementConfig:
    num_anchors: int = 10
    frames_per_traj: int = 20
    anchor_method: str = "kmeans"  # "kmeans" | "farthest_point"
    anchor_pos_sigma: float = 0.05
    anchor_rot_jitter_deg: float = 20.0
    pool_pos_sigma: float = 0.25
    pool_rot_jitter_deg: float = 30.0
    jitter_fraction: float = 0.5
    central_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_anchors < 1:
            raise ValueError("num_anchors must be >= 1")
        if self.frames_per_traj < 2:
            raise ValueError("frames_per_traj must be >= 2")
        if min(self.anchor_pos_sigma, self.pool_pos_sigma) < 0:
            raise ValueError("position sigmas must be >= 0")


@dataclass(frozen=True)
class CandidatePose:
    pose: CameraPose
    mode: TrajectoryMode
    anchor_id: int
    frame_index: int
    lookat: np.ndarray | None
    jittered: bool = False


def estimate_world_up(training: list[CameraPose]) -> np.ndarray:
    """Shared up direction of the capture rig.

    Camera-up vectors cluster around the true vertical, spreading tangent to
    it, so the least-variance principal axis of the up cloud recovers it.
    Falls back to +y when the rig is degenerate (ups cancelling out).
    """
    ups = np.stack([p.axis("up") for p in training])
    mean = ups.mean(axis=0)
    if np.linalg.norm(mean) < 1e-6:
        return np.array([0.0, 1.0, 0.0])
    if len(training) < 3:
        return normalize(mean)
    cov = np.cov(ups.T)
    _, vecs = np.linalg.eigh(cov)
    axis = vecs[:, 0]  # eigenvector of the smallest eigenvalue
    if np.dot(axis, mean) < 0:
        axis = -axis
    if abs(np.dot(axis, normalize(mean))) < 0.5:
        # up cloud too isotropic for the variance cue to be trustworthy
        return normalize(mean)
    return normalize(axis)


def _kmeans(points: np.ndarray, k: int, seed: int, restarts: int = 10,
            iters: int = 50) -> np.ndarray:
    """Plain Lloyd's k-means, seeded, best inertia over restarts."""
    rng = np.random.default_rng(seed)
    best_centroids, best_inertia = None, np.inf
    n = points.shape[0]
    for _ in range(restarts):
        centroids = points[rng.choice(n, size=k, replace=False)]
        for _ in range(iters):
            d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
            assign = d2.argmin(axis=1)
            moved = False
            for j in range(k):
                members = points[assign == j]
                if members.size == 0:
                    continue
                c = members.mean(axis=0)
                if not np.allclose(c, centroids[j]):
                    centroids[j] = c
                    moved = True
            if not moved:
                break
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        inertia = d2.min(axis=1).sum()
        if inertia < best_inertia - 1e-12:
            best_inertia, best_centroids = inertia, centroids.copy()
    return best_centroids


def select_anchors(training: list[CameraPose], config: PlacementConfig) -> list[CameraPose]:
    """Pick min(num_anchors, len(training)) trajectory seed posesic.

    kmeans: the training pose nearest each converged centroid (distinct,
    ties by lower id). farthest_point: greedy max-min growth started from
    the pose nearest the centroid of all camera centers (the reference
    itself is not selected, so k=2 on a segment yields both endpoints).
    """
    if not training:
        raise ValueError("need at least one training pose")
    k = min(config.num_anchors, len(training))
    centers = np.stack([p.center() for p in training])
    if k == len(training):
        return list(training)

    if config.anchor_method == "kmeans":
        centroids = _kmeans(centers, k, config.seed)
        # canonical centroid order, then greedy nearest-unused assignment
        order = np.lexsort((centroids[:, 2], centroids[:, 1], centroids[:, 0]))
        used = np.zeros(len(training), dtype=bool)
        chosen = []
        for ci in order:
            d = np.linalg.norm(centers - centroids[ci], axis=1)
            d[used] = np.inf
            best = int(d.argmin())  # argmin takes the lowest index on ties
            used[best] = True
            chosen.append(best)
        chosen.sort()
        return [training[i] for i in chosen]

    if config.anchor_method == "farthest_point":
        reference = int(np.linalg.norm(centers - centers.mean(axis=0), axis=1).argmin())
        min_dist = np.linalg.norm(centers - centers[reference], axis=1)
        chosen = []
        for _ in range(k):
            best = int(min_dist.argmax())
            chosen.append(best)
            min_dist = np.minimum(min_dist, np.linalg.norm(centers - centers[best], axis=1))
        chosen.sort()
        return [training[i] for i in chosen]

    raise ValueError(f"unknown anchor_method: {config.anchor_method}")


def jitter_pose(pose: CameraPose, pos_sigma: float, rot_jitter_deg: float,
                rng_seed) -> CameraPose:
    """Perturb a pose: translation noise N(0, sigma^2 I), rotation by a
    random-axis angle uniform in +-rot_jitter_deg."""
    if pos_sigma < 0 or rot_jitter_deg < 0:
        raise ValueError("jitter magnitudes must be >= 0")
    rng = np.random.default_rng(rng_seed)
    translation = pose.translation + rng.normal(0.0, pos_sigma, size=3) if pos_sigma > 0 \
        else pose.translation.copy()
    rotation = pose.rotation
    if rot_jitter_deg > 0:
        axis = rng.normal(size=3)
        while np.linalg.norm(axis) < 1e-9:
            axis = rng.normal(size=3)
        angle = np.deg2rad(rng.uniform(-rot_jitter_deg, rot_jitter_deg))
        rotation = quat_normalize(quat_multiply(quat_from_axis_angle(axis, angle), pose.rotation))
    return replace(pose, rotation=rotation, translation=translation)


def _aimed_pose(template: CameraPose, position: np.ndarray, lookat: np.ndarray,
                up: np.ndarray) -> CameraPose:
    R = look_at_rotation(position, lookat, up)
    return replace(template, rotation=matrix_to_quat(R), translation=-R @ position)


def _positioned_pose(template: CameraPose, position: np.ndarray) -> CameraPose:
    R = template.rotation_matrix()
    return replace(template, translation=-R @ position)


def _rotate_about(axis: np.ndarray, theta: float, v: np.ndarray) -> np.ndarray:
    """Rodrigues rotation of v about unit axis."""
    c, s = np.cos(theta), np.sin(theta)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1 - c)


def generate_trajectory(mode: TrajectoryMode, anchor: CameraPose, lookat: np.ndarray,
                        length: int, up: np.ndarray | None = None,
                        step: float | None = None,
                        partner: CameraPose | None = None) -> list[CandidatePose]:
    """One trajectory of `length` frames seeded at `anchor`.

    `up` is the world up direction (defaults +y); `step` the per-frame
    translation for move/dolly modes (defaults to 2% of the anchor-lookat
    distance when no bounds diagonal is supplied); `partner` the blend
    target for interpolation mode (defaults to the anchor itself).
    """
    if length < 2:
        raise ValueError("trajectory length must be >= 2")
    lookat = np.asarray(lookat, dtype=np.float64)
    up = normalize(up) if up is not None else np.array([0.0, 1.0, 0.0])
    c0 = anchor.center()
    offset = c0 - lookat
    r = float(np.linalg.norm(offset))
    if mode in OBJECT_CENTRIC_MODES and r < 1e-12:
        raise DegenerateLookAt("look-at point coincides with the anchor position")

    template = replace(anchor, kind="candidate")
    frames: list[CameraPose] = []

    if mode is TrajectoryMode.ORBIT:
        for i in range(length):
            theta = 2 * np.pi * i / length
            pos = lookat + _rotate_about(up, theta, offset)
            frames.append(_aimed_pose(template, pos, lookat, up))

    elif mode is TrajectoryMode.SPIRAL:
        h = SPIRAL_HEIGHT_RATIO * r
        for i in range(length):
            theta = 2 * np.pi * i / length
            scale = 1.0 - 0.5 * i / (length - 1)
            lift = h * np.sin(2 * np.pi * i / (length - 1))
            pos = lookat + scale * _rotate_about(up, theta, offset) + lift * up
            frames.append(_aimed_pose(template, pos, lookat, up))

    elif mode is TrajectoryMode.LEMNISCATE:
        # Bernoulli lemniscate in the anchor's horizontal plane, lobe size r
        h = float(np.dot(offset, up))
        center = lookat + h * up
        planar = offset - h * up
        if np.linalg.norm(planar) < 1e-12:
            from .geometry import orthonormal_basis_perp

            e1, e2 = orthonormal_basis_perp(up)
        else:
            e1 = normalize(planar)
            e2 = np.cross(up, e1)
        a = r
        for i in range(length):
            theta = 2 * np.pi * i / length
            denom = 1.0 + np.sin(theta) ** 2
            x = a * np.cos(theta) / denom
            y = a * np.sin(theta) * np.cos(theta) / denom
            pos = center + x * e1 + y * e2
            if np.linalg.norm(pos - lookat) < 1e-12:
                raise DegenerateLookAt("lemniscate frame lands on the look-at point")
            frames.append(_aimed_pose(template, pos, lookat, up))

    elif mode is TrajectoryMode.INTERPOLATION:
        partner = partner if partner is not None else anchor
        c1 = partner.center()
        for i in range(length):
            t = i / (length - 1)
            q = slerp(anchor.rotation, partner.rotation, t)
            pos = (1 - t) * c0 + t * c1
            pose = replace(template, rotation=q)
            pose = _positioned_pose(pose, pos)
            # preserve the partner's intrinsics only at the far endpoint
            if i == length - 1:
                pose = replace(pose, focal=partner.focal, principal=partner.principal,
                               image_size=partner.image_size)
            frames.append(pose)

    elif mode in (TrajectoryMode.MOVE_UP, TrajectoryMode.MOVE_DOWN,
                  TrajectoryMode.MOVE_LEFT, TrajectoryMode.MOVE_RIGHT):
        axis = anchor.axis(mode.value.split("_")[1])
        delta = step if step is not None else MOVE_STEP_FRACTION * r
        for i in range(length):
            frames.append(_positioned_pose(template, c0 + delta * i * axis))

    elif mode in (TrajectoryMode.DOLLYZOOM_IN, TrajectoryMode.DOLLYZOOM_OUT):
        forward = anchor.axis("forward")
        d0 = float(np.dot(lookat - c0, forward))
        if d0 <= 1e-9:
            raise DegenerateLookAt("dolly look-at plane is behind the camera")
        delta = step if step is not None else MOVE_STEP_FRACTION * r
        sign = 1.0 if mode is TrajectoryMode.DOLLYZOOM_IN else -1.0
        if sign > 0:
            # never cross the look-at plane
            delta = min(delta, 0.8 * d0 / (length - 1))
        for i in range(length):
            pos = c0 + sign * delta * i * forward
            d = d0 - sign * delta * i
            zoom = d / d0
            pose = replace(template, focal=(anchor.focal[0] * zoom, anchor.focal[1] * zoom))
            frames.append(_positioned_pose(pose, pos))
    else:
        raise ValueError(f"unhandled mode {mode}")

    store_lookat = lookat if mode in OBJECT_CENTRIC_MODES else None
    return [
        CandidatePose(pose=f, mode=mode, anchor_id=anchor.id, frame_index=i,
                      lookat=None if store_lookat is None else store_lookat.copy())
        for i, f in enumerate(frames)
    ]


def generate_candidate_pool(training: list[CameraPose], grid: CertaintyGrid,
                            config: PlacementConfig,
                            bounds: SceneBounds | None = None) -> list[CandidatePose]:
    """The full candidate pool: 10 modes x anchors x frames, canonical order.

    Anchors are perturbed once with the anchor-level jitter; a random
    `jitter_fraction` subset of the pool then receives the stronger
    pool-level jitter. All randomness derives from config.seed, so the pool
    is reproducible bit for bit.
    """
    if not training:
        raise ValueError("need a non-empty training set")
    root = np.random.SeedSequence(config.seed)
    anchor_seed, lookat_seed, jitter_seed, pick_seed = root.spawn(4)

    up = estimate_world_up(training)
    anchors = select_anchors(training, config)
    anchor_rngs = anchor_seed.spawn(len(anchors))
    anchors = [
        jitter_pose(a, config.anchor_pos_sigma, config.anchor_rot_jitter_deg, rng)
        for a, rng in zip(anchors, anchor_rngs)
    ]

    diag = bounds.diagonal if bounds is not None else grid.bounds.diagonal
    move_step = MOVE_STEP_FRACTION * diag
    anchor_centers = np.stack([a.center() for a in anchors])

    lookat_children = lookat_seed.spawn(len(TrajectoryMode) * len(anchors))
    pool: list[CandidatePose] = []
    for mi, mode in enumerate(TrajectoryMode):
        for ai, anchor in enumerate(anchors):
            sub = lookat_children[mi * len(anchors) + ai]
            if mode in OBJECT_CENTRIC_MODES:
                lookat = sample_lookat(grid, config.central_fraction,
                                       np.random.default_rng(sub).integers(2**32))
                if np.linalg.norm(lookat - anchor.center()) < 1e-9:
                    # center of the anchor's own voxel: nudge along forward
                    lookat = lookat + 1e-3 * diag * anchor.axis("forward")
            else:
                # cinematic modes follow the anchor's viewing direction
                d_ref = float(np.dot(grid.bounds.center - anchor.center(), anchor.axis("forward")))
                d_ref = max(d_ref, 0.25 * diag)
                lookat = anchor.center() + d_ref * anchor.axis("forward")

            partner = None
            if mode is TrajectoryMode.INTERPOLATION:
                if len(anchors) > 1:
                    d = np.linalg.norm(anchor_centers - anchor_centers[ai], axis=1)
                    d[ai] = np.inf
                    partner = anchors[int(d.argmin())]
                elif len(training) > 1:
                    others = [p for p in training if p.id != anchor.id]
                    d = [np.linalg.norm(p.center() - anchor.center()) for p in others]
                    partner = others[int(np.argmin(d))]

            pool.extend(generate_trajectory(
                mode, anchor, lookat, config.frames_per_traj,
                up=up, step=move_step, partner=partner,
            ))

    if config.jitter_fraction > 0 and (config.pool_pos_sigma > 0 or config.pool_rot_jitter_deg > 0):
        pick_rng = np.random.default_rng(pick_seed)
        hit = pick_rng.random(len(pool)) < config.jitter_fraction
        jitter_children = jitter_seed.spawn(len(pool))
        for i, cand in enumerate(pool):
            if hit[i]:
                pose = jitter_pose(cand.pose, config.pool_pos_sigma,
                                   config.pool_rot_jitter_deg, jitter_children[i])
                pool[i] = replace(cand, pose=pose, jittered=True)
    return pool


def assign_candidate_ids(pool: list[CandidatePose], first_id: int) -> list[CandidatePose]:
    """Renumber candidate poses densely starting at first_id (canonical order)."""
    out = []
    for i, cand in enumerate(pool):
        out.append(replace(cand, pose=replace(cand.pose, id=first_id + i)))
    return out
