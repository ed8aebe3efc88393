"""Quaternion and rigid-pose helpers shared across modules.

Quaternions are (w, x, y, z), matching the COLMAP text convention. Camera
frames are OpenCV-style: +x right, +y down, +z forward.
"""

import numpy as np


def normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("cannot normalize zero vector")
    return v / n


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0:
        raise ValueError("zero quaternion")
    q = q / n
    # canonical sign: w >= 0
    if q[0] < 0:
        q = -q
    return q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * x * z + 2 * w * y],
            [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
            [2 * x * z - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Quaternion of R via the symmetric 4x4 eigenproblem (robust for all R)."""
    Rxx, Ryx, Rzx, Rxy, Ryy, Rzy, Rxz, Ryz, Rzz = np.asarray(R).flat
    K = (
        np.array(
            [
                [Rxx - Ryy - Rzz, 0, 0, 0],
                [Ryx + Rxy, Ryy - Rxx - Rzz, 0, 0],
                [Rzx + Rxz, Rzy + Ryz, Rzz - Rxx - Ryy, 0],
                [Ryz - Rzy, Rzx - Rxz, Rxy - Ryx, Rxx + Ryy + Rzz],
            ]
        )
        / 3.0
    )
    eigvals, eigvecs = np.linalg.eigh(K)
    q = eigvecs[[3, 0, 1, 2], np.argmax(eigvals)]
    return quat_normalize(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    axis = normalize(np.asarray(axis, dtype=np.float64))
    half = 0.5 * angle_rad
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle in radians represented by q, in [0, pi]."""
    w = min(1.0, abs(float(q[0]) / np.linalg.norm(q)))
    return 2.0 * np.arccos(w)


def quat_angle_between(a: np.ndarray, b: np.ndarray) -> float:
    return quat_angle(quat_multiply(quat_conjugate(a), b))


def slerp(q1: np.ndarray, q2: np.ndarray, t: float) -> np.ndarray:
    """Spherical interpolation from q1 (t=0) to q2 (t=1) along the short arc."""
    q1 = np.asarray(q1, dtype=np.float64) / np.linalg.norm(q1)
    q2 = np.asarray(q2, dtype=np.float64) / np.linalg.norm(q2)
    dot = float(np.dot(q1, q2))
    if dot < 0:
        q2 = -q2
        dot = -dot
    if dot > 0.9995:
        out = q1 + t * (q2 - q1)
        return quat_normalize(out)
    theta = np.arccos(min(1.0, dot))
    s = np.sin(theta)
    return quat_normalize(
        (np.sin((1 - t) * theta) / s) * q1 + (np.sin(t * theta) / s) * q2
    )


def rotation_about_axis(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    return quat_to_matrix(quat_from_axis_angle(axis, angle_rad))


def look_at_rotation(position: np.ndarray, target: np.ndarray, up_hint: np.ndarray) -> np.ndarray:
    """World-to-camera rotation: camera at `position` with +z toward `target`.

    OpenCV axes: +z forward, +y down, +x right. `up_hint` is the world up
    direction used to fix the roll.
    """
    forward = normalize(np.asarray(target, dtype=np.float64) - position)
    up_hint = normalize(np.asarray(up_hint, dtype=np.float64))
    right = np.cross(forward, -up_hint)
    if np.linalg.norm(right) < 1e-12:
        # forward parallel to up: pick any perpendicular
        alt = np.array([1.0, 0.0, 0.0])
        if abs(forward[0]) > 0.9:
            alt = np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, alt)
    right = normalize(right)
    down = np.cross(forward, right)
    # rows of world->camera rotation are the camera axes in world coordinates
    return np.stack([right, down, forward])


def orthonormal_basis_perp(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors spanning the plane perpendicular to `axis`."""
    axis = normalize(np.asarray(axis, dtype=np.float64))
    alt = np.array([1.0, 0.0, 0.0])
    if abs(axis[0]) > 0.9:
        alt = np.array([0.0, 1.0, 0.0])
    e1 = normalize(np.cross(axis, alt))
    e2 = np.cross(axis, e1)
    return e1, e2
