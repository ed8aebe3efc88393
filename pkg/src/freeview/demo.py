"""Bundled synthetic scene: a cluttered room the whole pipeline can run on.

Wall and floor primitives are broad and translucent so views from inside the
room stay covered; a few interior clusters of small opaque primitives carry
the certainty mass the look-at sampler targets.
"""

import json
from pathlib import Path

import numpy as np

from .geometry import look_at_rotation, matrix_to_quat, quat_to_matrix
from .scene_io import GaussianScene, write_gaussian_ply

DEMO_PRIMITIVES = 200
DEMO_CAMERAS = 64
DEMO_IMAGE_SIZE = (256, 192)


def make_demo_scene(seed: int = 7, count: int = DEMO_PRIMITIVES) -> GaussianScene:
    """A 2x2x2 room with interior clutter, exactly `count` primitives."""
    rng = np.random.default_rng(seed)
    centers, log_scales, colors, opacities = [], [], [], []

    def add(center, scale, color, opacity):
        centers.append(np.asarray(center, dtype=np.float64))
        log_scales.append(np.log(np.asarray(scale, dtype=np.float64)))
        colors.append(np.asarray(color, dtype=np.float64))
        opacities.append(opacity)

    n_shell = 120
    # floor, ceiling, four walls: broad pancakes flush with each face
    faces = [
        (np.array([0, -1, 0]), 1),  # floor (+y is down in camera terms; world y up)
        (np.array([0, 1, 0]), 1),
        (np.array([-1, 0, 0]), 0),
        (np.array([1, 0, 0]), 0),
        (np.array([0, 0, -1]), 2),
        (np.array([0, 0, 1]), 2),
    ]
    per_face = n_shell // len(faces)
    for normal, axis in faces:
        for _ in range(per_face):
            point = rng.uniform(-0.9, 0.9, size=3)
            point[axis] = normal[axis] * 1.0
            scale = np.full(3, rng.uniform(0.18, 0.30))
            scale[axis] = 0.03
            tint = 0.35 + 0.45 * rng.random(3)
            add(point, scale, tint, rng.uniform(0.75, 0.95))

    # interior clutter: clusters of small, opaque, bright primitives
    n_clutter = count - len(centers)
    cluster_centers = np.array([
        [0.35, -0.45, 0.25],
        [-0.4, -0.3, -0.35],
        [0.05, 0.1, 0.45],
        [-0.25, 0.35, 0.05],
    ])
    for i in range(n_clutter):
        base = cluster_centers[i % len(cluster_centers)]
        offset = rng.normal(0, 0.09, size=3)
        scale = rng.uniform(0.02, 0.06, size=3)
        hue = rng.random(3)
        add(base + offset, scale, 0.25 + 0.7 * hue, rng.uniform(0.85, 0.98))

    quats = rng.normal(size=(count, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    scene = GaussianScene(
        centers=np.stack(centers),
        log_scales=np.stack(log_scales),
        rotations=quats,
        opacities=np.clip(np.array(opacities), 0.02, 0.98),
        dc_colors=np.clip(np.stack(colors), 0.0, 1.0),
    )
    scene.validate()
    return scene


def make_demo_cameras(seed: int = 7, count: int = DEMO_CAMERAS) -> list[dict]:
    """Camera-to-world frames on an interior ring, as transforms_json entries."""
    rng = np.random.default_rng(seed + 1)
    frames = []
    for i in range(count):
        theta = 2 * np.pi * i / count
        radius = 0.62 + 0.06 * np.sin(3 * theta)
        height = 0.15 * np.sin(2 * theta) - 0.1
        position = np.array([radius * np.cos(theta), height, radius * np.sin(theta)])
        target = np.array([
            0.25 * np.cos(theta + 2.4),
            -0.1 + 0.1 * np.sin(theta),
            0.25 * np.sin(theta + 2.4),
        ]) + rng.normal(0, 0.02, size=3)
        R = look_at_rotation(position, target, np.array([0.0, 1.0, 0.0]))
        c2w = np.eye(4)
        c2w[:3, :3] = R.T
        c2w[:3, 3] = position
        frames.append({
            "file_path": f"images/frame_{i:04d}.png",
            "transform_matrix": c2w.tolist(),
        })
    return frames


def write_demo(out_dir, seed: int = 7) -> dict[str, str]:
    """Write scene.ply, cameras.json, and a ready-to-run config; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene_path = out_dir / "scene.ply"
    cameras_path = out_dir / "cameras.json"
    config_path = out_dir / "freeview.cfg"

    write_gaussian_ply(scene_path, make_demo_scene(seed))

    w, h = DEMO_IMAGE_SIZE
    focal = 0.72 * w
    doc = {
        "fl_x": focal, "fl_y": focal,
        "cx": w / 2, "cy": h / 2,
        "w": w, "h": h,
        "frames": make_demo_cameras(seed),
    }
    cameras_path.write_text(json.dumps(doc, indent=1))

    config_path.write_text(f"""# freeview pipeline configuration (demo scene)
[scene]
gaussians = {scene_path.name}
cameras = {cameras_path.name}
camera_format = transforms_json

[output]
directory = out

[grid]
resolution = 128
epsilon = 1e-8
lo_quantile = 0.01
hi_quantile = 0.99
pad = 0.05

[placement]
num_anchors = 10
frames_per_traj = 20
anchor_method = kmeans
anchor_pos_sigma = 0.05
anchor_rot_jitter_deg = 20
pool_pos_sigma = 0.25
pool_rot_jitter_deg = 30
jitter_fraction = 0.5
central_fraction = 0.5

[graph]
edge_cutoff = 0.05

[selector]
nms_wiou_threshold = 0.7
nms_target = 500
quality_max = 0.5
depth_range_min = 0.1
black_ratio_max = 0.15
rectify_steps = 0.7, 0.5, 0.3
final_target = 100
occupancy_reject_percentile = 90

[render]
width = {w}
height = {h}
alpha_floor = 0.05
max_count = 50000

[curriculum]
inputs_per_batch = 4
targets_per_batch = 2
warmup_iters = 3000
total_iters = 20000
frame_dist_warm = 10, 20
frame_dist_full = 15, 40
graph_probability = 0.5
pseudo_gt_interval = 3000
pseudo_gt_per_event = 5

[run]
seed = 0
threads = 1
""")
    return {
        "scene": str(scene_path),
        "cameras": str(cameras_path),
        "config": str(config_path),
    }
