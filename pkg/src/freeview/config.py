"""Plain-text pipeline configuration: INI-style sections of key=value pairs.

Every knob defaults to the pipeline-level constant it models; unknown keys
are rejected so typos fail loudly at parse time.
"""

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigParse
from .selector import SelectorConfig
from .trajectory_gen import PlacementConfig
from .training_feeds import CurriculumConfig


@dataclass(frozen=True)
class GridConfig:
    resolution: int = 128
    epsilon: float = 1e-8
    lo_quantile: float = 0.01
    hi_quantile: float = 0.99
    pad: float = 0.05


@dataclass(frozen=True)
class RenderConfig:
    width: int = 256
    height: int = 192
    alpha_floor: float = 0.05
    max_count: int = 50000


@dataclass(frozen=True)
class PipelineConfig:
    scene_path: Path
    camera_path: Path
    camera_format: str = "transforms_json"
    output_dir: Path = Path("out")
    grid: GridConfig = field(default_factory=GridConfig)
    placement: PlacementConfig = field(default_factory=PlacementConfig)
    edge_cutoff: float = 0.05
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    pseudo_gt_interval: int = 3000
    pseudo_gt_per_event: int = 5
    seed: int = 0
    threads: int = 1


def _convert(section: str, key: str, raw: str, kind):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int_pair":
            parts = [int(v) for v in raw.replace(",", " ").split()]
            if len(parts) != 2:
                raise ValueError(raw)
            return (parts[0], parts[1])
        if kind == "float_list":
            return tuple(float(v) for v in raw.replace(",", " ").split())
        return kind(raw)
    except ValueError as exc:
        raise ConfigParse(f"[{section}] {key}: cannot parse {raw!r}") from exc


_SCHEMA = {
    "scene": {"gaussians": str, "cameras": str, "camera_format": str},
    "output": {"directory": str},
    "grid": {"resolution": int, "epsilon": float, "lo_quantile": float,
             "hi_quantile": float, "pad": float},
    "placement": {"num_anchors": int, "frames_per_traj": int, "anchor_method": str,
                  "anchor_pos_sigma": float, "anchor_rot_jitter_deg": float,
                  "pool_pos_sigma": float, "pool_rot_jitter_deg": float,
                  "jitter_fraction": float, "central_fraction": float},
    "graph": {"edge_cutoff": float},
    "selector": {"nms_wiou_threshold": float, "nms_target": int, "quality_max": float,
                 "depth_range_min": float, "black_ratio_max": float,
                 "rectify_steps": "float_list", "final_target": int,
                 "occupancy_reject_percentile": float},
    "render": {"width": int, "height": int, "alpha_floor": float, "max_count": int},
    "curriculum": {"inputs_per_batch": int, "targets_per_batch": int,
                   "warmup_iters": int, "total_iters": int,
                   "frame_dist_warm": "int_pair", "frame_dist_full": "int_pair",
                   "graph_probability": float,
                   "pseudo_gt_interval": int, "pseudo_gt_per_event": int},
    "run": {"seed": int, "threads": int},
}


def load_config(path) -> PipelineConfig:
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigParse(f"{path}: {exc}") from exc
    if not read:
        raise ConfigParse(f"{path}: config file not found")

    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigParse(f"[{section}]: unknown section")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigParse(f"[{section}] {key}: unknown key")
            values[section][key] = _convert(section, key, raw, _SCHEMA[section][key])

    scene = values.get("scene", {})
    if "gaussians" not in scene or "cameras" not in scene:
        raise ConfigParse("[scene]: gaussians and cameras paths are required")
    base = path.parent

    def build(cls, section, rename=None, only=None):
        rename = rename or {}
        allowed = {f.name for f in fields(cls)}
        kwargs = {}
        for key, val in values.get(section, {}).items():
            name = rename.get(key, key)
            if only and name not in only:
                continue
            if name in allowed:
                kwargs[name] = val
        return cls(**kwargs)

    curriculum_extra = values.get("curriculum", {})
    return PipelineConfig(
        scene_path=(base / scene["gaussians"]).resolve(),
        camera_path=(base / scene["cameras"]).resolve(),
        camera_format=scene.get("camera_format", "transforms_json"),
        output_dir=(base / values.get("output", {}).get("directory", "out")).resolve(),
        grid=build(GridConfig, "grid"),
        placement=build(PlacementConfig, "placement"),
        edge_cutoff=values.get("graph", {}).get("edge_cutoff", 0.05),
        selector=build(SelectorConfig, "selector"),
        curriculum=build(CurriculumConfig, "curriculum"),
        render=build(RenderConfig, "render"),
        pseudo_gt_interval=curriculum_extra.get("pseudo_gt_interval", 3000),
        pseudo_gt_per_event=curriculum_extra.get("pseudo_gt_per_event", 5),
        seed=values.get("run", {}).get("seed", 0),
        threads=values.get("run", {}).get("threads", 1),
    )


def with_overrides(config: PipelineConfig, seed=None, threads=None, output=None) -> PipelineConfig:
    if seed is not None:
        config = replace(config, seed=seed)
    if threads is not None:
        config = replace(config, threads=threads)
    if output is not None:
        config = replace(config, output_dir=Path(output).resolve())
    return config
