"""Scene and camera loading: 3DGS point-cloud PLY, COLMAP text, transforms JSON.

All poses use the COLMAP/OpenCV convention: the stored quaternion/translation
map world points into the camera frame (x_cam = R x_world + t), camera axes
+x right, +y down, +z forward. Camera centers are -R^T t.
"""

import json
import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    EmptyScene,
    MalformedFile,
    MissingProperty,
    PoseCountMismatch,
    UnsupportedCameraModel,
)
from .geometry import matrix_to_quat, quat_to_matrix

logger = logging.getLogger(__name__)

# 3DGS point-cloud property set; extra properties are ignored with a warning.
REQUIRED_PLY_PROPERTIES = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)

# DC spherical-harmonic basis constant: rgb = 0.5 + SH_C0 * f_dc
SH_C0 = 0.28209479177387814

_PLY_TYPES = {
    "float": ("f", 4), "float32": ("f", 4),
    "double": ("d", 8), "float64": ("d", 8),
    "uchar": ("B", 1), "uint8": ("B", 1),
    "char": ("b", 1), "int8": ("b", 1),
    "short": ("h", 2), "int16": ("h", 2),
    "ushort": ("H", 2), "uint16": ("H", 2),
    "int": ("i", 4), "int32": ("i", 4),
    "uint": ("I", 4), "uint32": ("I", 4),
}


@dataclass(frozen=True)
class GaussianScene:
    """All primitives of a reconstructed Gaussian scene.

    centers: (N,3) world positions; log_scales: (N,3) log axis lengths;
    rotations: (N,4) unit quaternions (w,x,y,z); opacities: (N,) in [0,1];
    dc_colors: (N,3) RGB in [0,1].
    """

    centers: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    dc_colors: np.ndarray

    @property
    def count(self) -> int:
        return self.centers.shape[0]

    def validate(self) -> None:
        if self.count == 0:
            raise EmptyScene("scene has no primitives")
        for name in ("centers", "log_scales", "rotations", "opacities", "dc_colors"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise MalformedFile(f"non-finite values in {name}")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-4):
            raise MalformedFile("rotation quaternions not unit norm")
        if np.any(self.opacities < 0) or np.any(self.opacities > 1):
            raise MalformedFile("opacities outside [0,1]")


@dataclass(frozen=True)
class CameraPose:
    """A pinhole camera: world-to-camera rotation (unit quaternion) + translation."""

    id: int
    kind: str  # "training" | "candidate"
    rotation: np.ndarray  # (4,) quaternion w,x,y,z
    translation: np.ndarray  # (3,)
    focal: tuple[float, float]
    principal: tuple[float, float]
    image_size: tuple[int, int]  # (width, height)
    near: float = 0.01
    far: float = 100.0

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def center(self) -> np.ndarray:
        R = self.rotation_matrix()
        return -R.T @ self.translation

    def forward(self) -> np.ndarray:
        """Camera +z axis in world coordinates."""
        return self.rotation_matrix()[2]

    def axis(self, name: str) -> np.ndarray:
        """Camera-frame axis in world coordinates: right/left/up/down/forward."""
        R = self.rotation_matrix()
        table = {
            "right": R[0], "left": -R[0],
            "down": R[1], "up": -R[1],
            "forward": R[2],
        }
        return table[name]


@dataclass(frozen=True)
class SceneBounds:
    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        if not np.all(self.min_corner < self.max_corner):
            raise ValueError("min_corner must be strictly below max_corner")

    @property
    def extent(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= self.min_corner) & (points < self.max_corner), axis=1)


def _logistic(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return np.log(p / (1 - p))


def _parse_ply_header(fh) -> tuple[str, list[tuple[str, str]], int, int]:
    """Returns (format, [(type, name)...], vertex_count, data_offset)."""
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise MalformedFile("not a PLY file (missing 'ply' magic)")
    fmt = None
    props: list[tuple[str, str]] = []
    count = None
    in_vertex = False
    while True:
        line = fh.readline()
        if not line:
            raise MalformedFile("unexpected end of PLY header")
        tokens = line.decode("ascii", "replace").strip().split()
        if not tokens:
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                count = int(tokens[2])
        elif tokens[0] == "property" and in_vertex:
            if tokens[1] == "list":
                raise MalformedFile("list properties unsupported for vertex element")
            props.append((tokens[1], tokens[2]))
        elif tokens[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise MalformedFile(f"unsupported PLY format: {fmt}")
    if count is None:
        raise MalformedFile("PLY header missing vertex element")
    return fmt, props, count, fh.tell()


def load_gaussian_ply(path) -> GaussianScene:
    """Load a 3DGS point cloud from an ASCII or binary-little-endian PLY.

    Opacities pass through the logistic function; scales stay in log form;
    quaternions are renormalized. Spherical-harmonic bands beyond DC are
    dropped.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, props, count, offset = _parse_ply_header(fh)
        names = [n for _, n in props]
        missing = [p for p in REQUIRED_PLY_PROPERTIES if p not in names]
        if missing:
            raise MissingProperty(f"PLY missing required properties: {', '.join(missing)}")
        extra = [n for n in names if n not in REQUIRED_PLY_PROPERTIES
                 and not n.startswith("f_rest_") and n not in ("nx", "ny", "nz")]
        if extra:
            logger.warning("ignoring unexpected PLY properties: %s", ", ".join(extra))
        if count == 0:
            raise EmptyScene(f"{path} declares zero vertices")

        if fmt == "binary_little_endian":
            codes = []
            for typ, _ in props:
                if typ not in _PLY_TYPES:
                    raise MalformedFile(f"unsupported PLY property type: {typ}")
                codes.append(_PLY_TYPES[typ][0])
            rec = np.dtype([(n, "<" + c) for (_, n), c in zip(props, codes)])
            raw = fh.read(rec.itemsize * count)
            if len(raw) < rec.itemsize * count:
                raise MalformedFile(f"{path}: truncated vertex data")
            table = np.frombuffer(raw, dtype=rec, count=count)
            col = lambda n: table[n].astype(np.float64)
        else:
            rows = []
            for _ in range(count):
                line = fh.readline()
                if not line:
                    raise MalformedFile(f"{path}: truncated ASCII vertex data")
                values = line.split()
                if len(values) != len(props):
                    raise MalformedFile(f"{path}: vertex line has {len(values)} values, expected {len(props)}")
                rows.append([float(v) for v in values])
            data = np.asarray(rows, dtype=np.float64)
            index = {n: i for i, (_, n) in enumerate(props)}
            col = lambda n: data[:, index[n]]

    centers = np.stack([col("x"), col("y"), col("z")], axis=1)
    dc = np.stack([col("f_dc_0"), col("f_dc_1"), col("f_dc_2")], axis=1)
    colors = np.clip(0.5 + SH_C0 * dc, 0.0, 1.0)
    opacities = _logistic(col("opacity"))
    log_scales = np.stack([col("scale_0"), col("scale_1"), col("scale_2")], axis=1)
    quats = np.stack([col("rot_0"), col("rot_1"), col("rot_2"), col("rot_3")], axis=1)
    norms = np.linalg.norm(quats, axis=1, keepdims=True)
    if np.any(norms == 0) or not np.all(np.isfinite(quats)):
        raise MalformedFile(f"{path}: degenerate rotation quaternion")
    quats = quats / norms

    scene = GaussianScene(centers, log_scales, quats, opacities, colors)
    scene.validate()
    return scene


def write_gaussian_ply(path, scene: GaussianScene, binary: bool = True) -> None:
    """Write a scene in the standard 3DGS point-cloud layout (inverse of load)."""
    path = Path(path)
    n = scene.count
    dc = (scene.dc_colors - 0.5) / SH_C0
    logits = _logit(scene.opacities)
    columns = np.column_stack([
        scene.centers,
        dc,
        logits,
        scene.log_scales,
        scene.rotations,
    ]).astype(np.float32)

    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {n}")
    header.extend(f"property float {name}" for name in REQUIRED_PLY_PROPERTIES)
    header.append("end_header")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(columns.astype("<f4").tobytes())
        else:
            for row in columns:
                fh.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))


def _load_colmap_text(path: Path) -> list[CameraPose]:
    cameras_file = path / "cameras.txt" if path.is_dir() else path.parent / "cameras.txt"
    images_file = path / "images.txt" if path.is_dir() else path.parent / "images.txt"
    if not cameras_file.exists() or not images_file.exists():
        raise MalformedFile(f"expected cameras.txt and images.txt under {path}")

    intrinsics = {}
    for line in cameras_file.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        cam_id, model = int(parts[0]), parts[1]
        width, height = int(parts[2]), int(parts[3])
        params = [float(v) for v in parts[4:]]
        if model == "PINHOLE":
            fx, fy, cx, cy = params[:4]
        elif model == "SIMPLE_PINHOLE":
            fx = fy = params[0]
            cx, cy = params[1], params[2]
        else:
            raise UnsupportedCameraModel(f"camera model {model} not supported (PINHOLE/SIMPLE_PINHOLE only)")
        intrinsics[cam_id] = ((fx, fy), (cx, cy), (width, height))

    declared = None
    entries = []
    lines = iter(images_file.read_text().splitlines())
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("#"):
            if "Number of images:" in stripped:
                tail = stripped.split("Number of images:")[1]
                declared = int(tail.split(",")[0].strip())
            continue
        if not stripped:
            continue
        parts = stripped.split()
        if len(parts) < 10:
            raise MalformedFile(f"malformed images.txt entry: {stripped!r}")
        qvec = np.array([float(v) for v in parts[1:5]])
        tvec = np.array([float(v) for v in parts[5:8]])
        cam_id = int(parts[8])
        name = parts[9]
        if cam_id not in intrinsics:
            raise MalformedFile(f"image {name} references unknown camera id {cam_id}")
        next(lines, "")  # POINTS2D line, ignored
        entries.append((name, qvec, tvec, cam_id))

    if declared is not None and declared != len(entries):
        raise PoseCountMismatch(f"images.txt declares {declared} images, found {len(entries)}")

    poses = []
    for i, (name, qvec, tvec, cam_id) in enumerate(sorted(entries, key=lambda e: e[0])):
        focal, principal, size = intrinsics[cam_id]
        q = qvec / np.linalg.norm(qvec)
        poses.append(CameraPose(
            id=i, kind="training", rotation=q, translation=tvec,
            focal=focal, principal=principal, image_size=size,
        ))
    return poses


def _load_transforms_json(path: Path) -> list[CameraPose]:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: invalid JSON ({exc})") from exc
    for key in ("fl_x", "fl_y", "cx", "cy", "w", "h", "frames"):
        if key not in doc:
            raise MalformedFile(f"{path}: transforms file missing '{key}'")
    focal = (float(doc["fl_x"]), float(doc["fl_y"]))
    principal = (float(doc["cx"]), float(doc["cy"]))
    size = (int(doc["w"]), int(doc["h"]))

    poses = []
    for i, frame in enumerate(doc["frames"]):
        if "transform_matrix" not in frame:
            raise MalformedFile(f"{path}: frame {i} missing transform_matrix")
        c2w = np.asarray(frame["transform_matrix"], dtype=np.float64)
        if c2w.shape != (4, 4):
            raise MalformedFile(f"{path}: frame {i} transform_matrix is not 4x4")
        R_c2w = c2w[:3, :3]
        # world->camera is the inverse of the stored camera->world transform
        R = R_c2w.T
        t = -R @ c2w[:3, 3]
        poses.append(CameraPose(
            id=i, kind="training", rotation=matrix_to_quat(R), translation=t,
            focal=focal, principal=principal, image_size=size,
        ))
    return poses


def load_cameras(path, format: str) -> list[CameraPose]:
    """Load training cameras from COLMAP text or a transforms JSON manifest.

    Returned poses are tagged kind="training" with ids dense from 0 (COLMAP
    entries ordered by image name).
    """
    path = Path(path)
    if format == "colmap_text":
        poses = _load_colmap_text(path)
    elif format == "transforms_json":
        poses = _load_transforms_json(path)
    else:
        raise ValueError(f"unknown camera format: {format}")
    if not poses:
        raise MalformedFile(f"{path}: no camera poses found")
    return poses


def with_depth_range(poses: list[CameraPose], bounds: SceneBounds) -> list[CameraPose]:
    """Camera files carry no depth range; default near/far to 0.01x / 10x diagonal."""
    diag = bounds.diagonal
    return [replace(p, near=0.01 * diag, far=10.0 * diag) for p in poses]


def compute_bounds(scene: GaussianScene, lo_quantile: float = 0.01,
                   hi_quantile: float = 0.99, pad: float = 0.05) -> SceneBounds:
    """Robust quantile bounding box of the primitive centers.

    The [lo, hi] per-axis quantile box is expanded symmetrically by
    pad * extent on each side; quantiles keep floater outliers from
    inflating the box and starving grid resolution.
    """
    if scene.count == 0:
        raise EmptyScene("cannot bound an empty scene")
    if not (0 <= lo_quantile < hi_quantile <= 1):
        raise ValueError("need 0 <= lo_quantile < hi_quantile <= 1")
    if pad < 0:
        raise ValueError("pad must be >= 0")
    lo = np.quantile(scene.centers, lo_quantile, axis=0)
    hi = np.quantile(scene.centers, hi_quantile, axis=0)
    extent = hi - lo
    # guard degenerate axes (all centers coplanar) to keep min < max strict
    collapsed = extent <= 0
    if np.any(collapsed):
        bump = np.maximum(1e-6, 1e-6 * np.abs(lo))
        lo = np.where(collapsed, lo - bump, lo)
        hi = np.where(collapsed, hi + bump, hi)
        extent = hi - lo
    return SceneBounds(lo - pad * extent, hi + pad * extent)
