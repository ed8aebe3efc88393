"""Candidate-to-free-view funnel: feasibility, coverage NMS, quality gating
with pose rectification, and the final quality-sorted quota."""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .certainty_grid import CertaintyGrid, linearize, voxel_indices_of
from .errors import NoReferenceAvailable
from .geometry import quat_to_matrix, slerp
from .scene_io import CameraPose, GaussianScene, SceneBounds
from .splat_renderer import QualityReport, assess_quality, render
from .trajectory_gen import CandidatePose
from .view_graph import ViewGraph, compute_visibility, select_reference
from . import splat_renderer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectorConfig:
    nms_wiou_threshold: float = 0.7
    nms_target: int = 500
    quality_max: float = 0.5
    depth_range_min: float = 0.1
    black_ratio_max: float = 0.15
    rectify_steps: tuple[float, ...] = (0.7, 0.5, 0.3)
    final_target: int = 100
    occupancy_reject_percentile: float = 90.0
    alpha_floor: float = 0.05
    depth_crop: float = 0.7

    def __post_init__(self):
        if not (0 < self.nms_wiou_threshold <= 1):
            raise ValueError("nms_wiou_threshold must be in (0, 1]")
        steps = tuple(self.rectify_steps)
        if any(not (0 < s < 1) for s in steps) or list(steps) != sorted(steps, reverse=True):
            raise ValueError("rectify_steps must be strictly decreasing fractions in (0, 1)")


@dataclass
class FreeViewRecord:
    candidate: CandidatePose
    status: str  # selected | rejected_* | rectified_then_*
    quality: QualityReport | None = None
    rectify_history: list[tuple[float, QualityReport]] = field(default_factory=list)
    reference_id: int | None = None
    render_paths: dict[str, str] | None = None

    @property
    def view_id(self) -> int:
        return self.candidate.pose.id

    def final_pose(self) -> CameraPose:
        return self.candidate.pose

    def is_kept(self) -> bool:
        return self.status in ("selected", "rectified_then_selected")


def feasibility_filter(pool: list[CandidatePose], grid: CertaintyGrid,
                       bounds: SceneBounds, config: SelectorConfig):
    """Split the pool into (feasible, rejected).

    A pose is rejected when its camera center leaves the scene bounds or sits
    inside a voxel whose certainty exceeds the occupancy percentile, i.e.
    inside solid structure.
    """
    if not pool:
        return [], []
    centers = np.stack([c.pose.center() for c in pool])
    inside = bounds.contains(centers)

    occupied_thresh = np.inf
    if grid.occupied:
        occupied_thresh = float(np.percentile(grid.values, config.occupancy_reject_percentile))
    ijk, in_grid = voxel_indices_of(grid.bounds, grid.resolution, centers)
    lin = linearize(grid.resolution, ijk)
    slot = np.searchsorted(grid.indices, lin)
    slot = np.clip(slot, 0, max(grid.occupied - 1, 0))
    hit = in_grid & (grid.occupied > 0)
    hit &= grid.indices[slot] == lin
    cell_value = np.where(hit, grid.values[slot], 0.0)
    in_structure = cell_value > occupied_thresh

    feasible, rejected = [], []
    for cand, ok in zip(pool, inside & ~in_structure):
        (feasible if ok else rejected).append(cand)
    return feasible, rejected


def nms_select(graph: ViewGraph, training_ids, candidate_ids, config: SelectorConfig) -> list[int]:
    """Greedy coverage NMS over exact WIoU.

    Candidates are visited by descending node score (ties to lower id); one
    is accepted only if its WIoU against every already-selected view
    (training set included) stays below the threshold. Stops at nms_target
    acceptances.
    """
    training_ids = sorted(set(training_ids))
    order = sorted(candidate_ids, key=lambda i: (-graph.nodes[i].score, i))
    selected = list(training_ids)
    accepted: list[int] = []
    for cid in order:
        if len(accepted) >= config.nms_target:
            break
        if all(graph.wiou_exact(cid, s) < config.nms_wiou_threshold for s in selected):
            accepted.append(cid)
            selected.append(cid)
    return accepted


def rectify_pose(candidate: CameraPose, anchor: CameraPose, step: float) -> CameraPose:
    """Shift a pose toward an anchor, keeping `step` of the original offset.

    Camera centers interpolate linearly, rotations geodesically; intrinsics
    stay the candidate's. step=1 returns the candidate, step->0 the anchor.
    """
    if not (0 < step <= 1):
        raise ValueError("step must be in (0, 1]")
    center = anchor.center() + step * (candidate.center() - anchor.center())
    rotation = slerp(anchor.rotation, candidate.rotation, step)
    R = quat_to_matrix(rotation)
    return replace(candidate, rotation=rotation, translation=-R @ center)


def _nearest_training(pose: CameraPose, training: list[CameraPose]) -> CameraPose:
    center = pose.center()
    d = [float(np.linalg.norm(t.center() - center)) for t in training]
    return training[int(np.argmin(d))]


def gate_and_rectify(accepted: list[CandidatePose], scene: GaussianScene,
                     grid: CertaintyGrid, graph: ViewGraph,
                     training: list[CameraPose], config: SelectorConfig,
                     scene_diag: float | None = None, scorer=None,
                     threads: int = 1, max_count: int = 200000) -> list[FreeViewRecord]:
    """Render-gate the NMS survivors, rectifying failures toward training poses.

    A failing view is re-posed at each step in rectify_steps (fraction of the
    original offset retained) and re-gated; the first pass wins. Survivors
    get a graph-guided reference view, then the final quota keeps the
    lowest quality scores.
    """
    diag = scene_diag if scene_diag is not None else grid.bounds.diagonal
    scorer = scorer or splat_renderer.quality_score
    training_ids = {t.id for t in training}

    def gate(pose: CameraPose) -> QualityReport:
        out = render(scene, pose, max_count)
        return assess_quality(
            out, diag,
            quality_max=config.quality_max,
            depth_range_min=config.depth_range_min,
            black_ratio_max=config.black_ratio_max,
            alpha_floor=config.alpha_floor,
            crop=config.depth_crop,
            scorer=scorer,
        )

    def process(cand: CandidatePose) -> FreeViewRecord:
        report = gate(cand.pose)
        if report.passed:
            return FreeViewRecord(cand, "selected", quality=report)
        anchor = _nearest_training(cand.pose, training)
        history = []
        for step in config.rectify_steps:
            moved = rectify_pose(cand.pose, anchor, step)
            attempt = gate(moved)
            history.append((step, attempt))
            if attempt.passed:
                fixed = replace(cand, pose=moved)
                return FreeViewRecord(fixed, "rectified_then_selected",
                                      quality=attempt, rectify_history=history)
        return FreeViewRecord(cand, "rectified_then_rejected",
                              quality=history[-1][1], rectify_history=history)

    if threads > 1 and len(accepted) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(process, accepted))
    else:
        records = [process(c) for c in accepted]

    # rectified poses moved: refresh their coverage before reference lookup
    for rec in records:
        if rec.status == "rectified_then_selected":
            graph.replace_visibility(rec.view_id, compute_visibility(rec.final_pose(), grid))

    survivors = [r for r in records if r.is_kept()]
    survivors.sort(key=lambda r: (r.quality.quality_score, r.view_id))
    for rank, rec in enumerate(survivors):
        if rank < config.final_target:
            try:
                rec.reference_id = select_reference(graph, rec.view_id, training_ids)
            except NoReferenceAvailable:
                rec.reference_id = None
        else:
            # quality-sorted quota: the tail is cut by the same quality key
            rec.status = ("rejected_quality" if rec.status == "selected"
                          else "rectified_then_rejected")

    counts = {}
    for rec in records:
        counts[rec.status] = counts.get(rec.status, 0) + 1
    logger.info("gate_and_rectify: %s", counts)
    return records


def export_freeviews_json(path, records: list[FreeViewRecord]) -> None:
    def report_doc(q: QualityReport | None):
        if q is None:
            return None
        return {
            "black_pixel_ratio": q.black_pixel_ratio,
            "depth_range_score": q.depth_range_score,
            "quality_score": q.quality_score,
            "passed": q.passed,
        }

    doc = []
    for rec in sorted(records, key=lambda r: r.view_id):
        pose = rec.final_pose()
        doc.append({
            "id": rec.view_id,
            "status": rec.status,
            "mode": rec.candidate.mode.value,
            "anchor_id": rec.candidate.anchor_id,
            "frame_index": rec.candidate.frame_index,
            "jittered": rec.candidate.jittered,
            "lookat": None if rec.candidate.lookat is None else rec.candidate.lookat.tolist(),
            "rotation": pose.rotation.tolist(),
            "translation": pose.translation.tolist(),
            "focal": list(pose.focal),
            "principal": list(pose.principal),
            "image_size": list(pose.image_size),
            "quality": report_doc(rec.quality),
            "rectify_history": [
                {"step": s, "quality": report_doc(q)} for s, q in rec.rectify_history
            ],
            "reference_id": rec.reference_id,
            "render_paths": rec.render_paths,
        })
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def export_rectify_pairs(path, records: list[FreeViewRecord],
                         render_paths: dict[int, str],
                         training_paths: dict[int, str]) -> None:
    """The (noisy view, reference view) pairing a downstream image
    rectifier consumes: one entry per kept free-view with a reference."""
    pairs = []
    for rec in sorted(records, key=lambda r: r.view_id):
        if not rec.is_kept() or rec.reference_id is None:
            continue
        pairs.append({
            "freeview_id": rec.view_id,
            "reference_training_id": rec.reference_id,
            "freeview_image": render_paths.get(rec.view_id),
            "reference_image": training_paths.get(rec.reference_id),
        })
    with open(path, "w") as fh:
        json.dump(pairs, fh, indent=1)
