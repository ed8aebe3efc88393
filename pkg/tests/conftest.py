import numpy as np
import pytest

from freeview.geometry import look_at_rotation, matrix_to_quat
from freeview.scene_io import CameraPose, GaussianScene, SceneBounds


def random_scene(rng, count=100, box=1.0) -> GaussianScene:
    quats = rng.normal(size=(count, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return GaussianScene(
        centers=rng.uniform(-box, box, size=(count, 3)),
        log_scales=rng.uniform(-3.5, -0.5, size=(count, 3)),
        rotations=quats,
        opacities=rng.uniform(0.05, 0.95, size=count),
        dc_colors=rng.uniform(0.05, 0.95, size=(count, 3)),
    )


def make_camera(position, target, cam_id=0, kind="training", focal=200.0,
                size=(64, 48), near=0.01, far=100.0, up=(0.0, 1.0, 0.0)) -> CameraPose:
    position = np.asarray(position, dtype=np.float64)
    R = look_at_rotation(position, np.asarray(target, dtype=np.float64), np.asarray(up))
    return CameraPose(
        id=cam_id, kind=kind,
        rotation=matrix_to_quat(R), translation=-R @ position,
        focal=(focal, focal), principal=(size[0] / 2, size[1] / 2),
        image_size=size, near=near, far=far,
    )


def camera_ring(n, radius=2.0, target=(0.0, 0.0, 0.0), height=0.0, **kw) -> list[CameraPose]:
    cams = []
    for i in range(n):
        theta = 2 * np.pi * i / n
        pos = (radius * np.cos(theta), height, radius * np.sin(theta))
        cams.append(make_camera(pos, target, cam_id=i, **kw))
    return cams


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
