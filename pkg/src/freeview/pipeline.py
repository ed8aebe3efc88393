"""Stage orchestration over on-disk sidecars.

Each stage reads only sidecar files (plus the original inputs) and writes its
own, so reruns and partial runs compose: `all` simply executes the stages in
order through the same read/write path. A manifest records input hashes,
funnel counts, and wall time per stage. All randomness derives from the run
seed through named per-stage sub-seeds.
"""

import hashlib
import json
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import certainty_grid as cg
from . import selector as sel
from . import splat_renderer as sr
from . import training_feeds as tf
from . import trajectory_gen as tg
from . import view_graph as vg
from .config import PipelineConfig
from .errors import MissingPrerequisite
from .scene_io import (
    CameraPose,
    compute_bounds,
    load_cameras,
    load_gaussian_ply,
    with_depth_range,
)

logger = logging.getLogger(__name__)

STAGES = ("grid", "candidates", "graph", "select", "render", "batches", "schedule", "report")


def stage_seed(root_seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{root_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingPrerequisite(f"stage '{stage}' needs missing sidecar {path}")
    return path


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.out / "manifest.json"

    # ---- sidecar paths ----
    def path(self, name: str) -> Path:
        return self.out / name

    # ---- shared loads ----
    def _load_scene_and_bounds(self):
        scene = load_gaussian_ply(self.config.scene_path)
        g = self.config.grid
        bounds = compute_bounds(scene, g.lo_quantile, g.hi_quantile, g.pad)
        return scene, bounds

    def _load_training(self, bounds):
        poses = load_cameras(self.config.camera_path, self.config.camera_format)
        poses = with_depth_range(poses, bounds)
        r = self.config.render
        out = []
        for p in poses:
            # gating renders run at the configured resolution
            sx, sy = r.width / p.image_size[0], r.height / p.image_size[1]
            out.append(replace(
                p, image_size=(r.width, r.height),
                focal=(p.focal[0] * sx, p.focal[1] * sy),
                principal=(p.principal[0] * sx, p.principal[1] * sy),
            ))
        return out

    def _load_grid(self, stage: str):
        return cg.load_grid(_require(self.path("grid.bin"), stage))

    def _load_candidates(self, stage: str, bounds) -> list[tg.CandidatePose]:
        doc = json.loads(_require(self.path("candidates.json"), stage).read_text())
        diag = bounds.diagonal
        pool = []
        for entry in doc:
            pose = CameraPose(
                id=entry["id"], kind="candidate",
                rotation=np.array(entry["rotation"]),
                translation=np.array(entry["translation"]),
                focal=tuple(entry["focal"]), principal=tuple(entry["principal"]),
                image_size=tuple(entry["image_size"]),
                near=0.01 * diag, far=10.0 * diag,
            )
            pool.append(tg.CandidatePose(
                pose=pose, mode=tg.TrajectoryMode(entry["mode"]),
                anchor_id=entry["anchor_id"], frame_index=entry["frame_index"],
                lookat=None if entry["lookat"] is None else np.array(entry["lookat"]),
                jittered=entry["jittered"],
            ))
        return pool

    def _load_freeview_records(self, stage: str, bounds) -> list[sel.FreeViewRecord]:
        doc = json.loads(_require(self.path("freeviews.json"), stage).read_text())
        diag = bounds.diagonal
        records = []
        for entry in doc:
            pose = CameraPose(
                id=entry["id"], kind="candidate",
                rotation=np.array(entry["rotation"]),
                translation=np.array(entry["translation"]),
                focal=tuple(entry["focal"]), principal=tuple(entry["principal"]),
                image_size=tuple(entry["image_size"]),
                near=0.01 * diag, far=10.0 * diag,
            )
            cand = tg.CandidatePose(
                pose=pose, mode=tg.TrajectoryMode(entry["mode"]),
                anchor_id=entry["anchor_id"], frame_index=entry["frame_index"],
                lookat=None if entry["lookat"] is None else np.array(entry["lookat"]),
                jittered=entry["jittered"],
            )
            quality = None
            if entry["quality"] is not None:
                quality = sr.QualityReport(**entry["quality"])
            history = [(h["step"], sr.QualityReport(**h["quality"]))
                       for h in entry["rectify_history"]]
            records.append(sel.FreeViewRecord(
                candidate=cand, status=entry["status"], quality=quality,
                rectify_history=history, reference_id=entry["reference_id"],
                render_paths=entry["render_paths"],
            ))
        return records

    # ---- stages ----
    def run_grid(self) -> dict:
        scene, bounds = self._load_scene_and_bounds()
        grid = cg.build_certainty_grid(
            scene, bounds, self.config.grid.resolution, self.config.grid.epsilon,
            threads=self.config.threads)
        cg.save_grid(self.path("grid.bin"), grid)
        return {"primitives": scene.count, "occupied_voxels": grid.occupied,
                "total_certainty": grid.total()}

    def run_candidates(self) -> dict:
        scene, bounds = self._load_scene_and_bounds()
        grid = self._load_grid("candidates")
        training = self._load_training(bounds)
        placement = replace(self.config.placement,
                            seed=stage_seed(self.config.seed, "candidates"))
        pool = tg.generate_candidate_pool(training, grid, placement, bounds=bounds)
        pool = tg.assign_candidate_ids(pool, first_id=len(training))
        doc = []
        for cand in pool:
            doc.append({
                "id": cand.pose.id,
                "mode": cand.mode.value,
                "anchor_id": cand.anchor_id,
                "frame_index": cand.frame_index,
                "lookat": None if cand.lookat is None else cand.lookat.tolist(),
                "jittered": cand.jittered,
                "rotation": cand.pose.rotation.tolist(),
                "translation": cand.pose.translation.tolist(),
                "focal": list(cand.pose.focal),
                "principal": list(cand.pose.principal),
                "image_size": list(cand.pose.image_size),
            })
        self.path("candidates.json").write_text(json.dumps(doc, indent=1))
        return {"pool": len(pool)}

    def run_graph(self) -> dict:
        scene, bounds = self._load_scene_and_bounds()
        grid = self._load_grid("graph")
        training = self._load_training(bounds)
        pool = self._load_candidates("graph", bounds)
        feasible, rejected = sel.feasibility_filter(pool, grid, bounds, self.config.selector)
        poses = training + [c.pose for c in feasible]
        graph = vg.build_view_graph(poses, grid, self.config.edge_cutoff,
                                    threads=self.config.threads)
        vg.export_graph_json(self.path("graph.json"), graph)
        vg.export_graph_dot(self.path("graph.dot"), graph)
        feasible_ids = sorted(c.pose.id for c in feasible)
        self.path("feasible.json").write_text(json.dumps(feasible_ids))
        return {"pool": len(pool), "feasible": len(feasible),
                "rejected_feasibility": len(rejected), "edges": len(graph.edges)}

    def run_select(self) -> dict:
        scene, bounds = self._load_scene_and_bounds()
        grid = self._load_grid("select")
        training = self._load_training(bounds)
        pool = self._load_candidates("select", bounds)
        feasible_ids = set(json.loads(_require(self.path("feasible.json"), "select").read_text()))
        feasible = [c for c in pool if c.pose.id in feasible_ids]
        infeasible = [c for c in pool if c.pose.id not in feasible_ids]
        poses = training + [c.pose for c in feasible]
        graph = vg.load_graph_json(_require(self.path("graph.json"), "select"),
                                   grid=grid, poses=poses)

        training_ids = [t.id for t in training]
        accepted_ids = sel.nms_select(graph, training_ids,
                                      [c.pose.id for c in feasible], self.config.selector)
        accepted = [c for c in feasible if c.pose.id in set(accepted_ids)]
        records = sel.gate_and_rectify(accepted, scene, grid, graph, training,
                                       self.config.selector, scene_diag=bounds.diagonal,
                                       threads=self.config.threads,
                                       max_count=self.config.render.max_count)

        gate_ids = {r.view_id for r in records}
        for cand in infeasible:
            records.append(sel.FreeViewRecord(cand, "rejected_feasibility"))
        for cand in feasible:
            if cand.pose.id not in gate_ids:
                records.append(sel.FreeViewRecord(cand, "rejected_nms"))
        sel.export_freeviews_json(self.path("freeviews.json"), records)

        kept = [r for r in records if r.is_kept()]
        return {
            "pool": len(pool),
            "feasible": len(feasible),
            "nms_accepted": len(accepted),
            "gated": sum(1 for r in records if r.quality is not None and r.quality.passed),
            "final": len(kept),
        }

    def run_render(self) -> dict:
        scene, bounds = self._load_scene_and_bounds()
        training = self._load_training(bounds)
        records = self._load_freeview_records("render", bounds)
        renders_dir = self.path("renders")
        renders_dir.mkdir(exist_ok=True)

        def emit(pose: CameraPose, stem: str) -> dict[str, str]:
            out = sr.render(scene, pose, self.config.render.max_count)
            color = renders_dir / f"{stem}.png"
            depth = renders_dir / f"{stem}_depth.pfm"
            alpha = renders_dir / f"{stem}_alpha.pfm"
            sr.write_png(color, out.color)
            sr.write_pfm(depth, out.depth)
            sr.write_pfm(alpha, out.alpha)
            return {"color": str(color.relative_to(self.out)),
                    "depth": str(depth.relative_to(self.out)),
                    "alpha": str(alpha.relative_to(self.out))}

        render_paths: dict[int, str] = {}
        kept = [r for r in records if r.is_kept()]
        for rec in kept:
            paths = emit(rec.final_pose(), f"fv_{rec.view_id:05d}")
            rec.render_paths = paths
            render_paths[rec.view_id] = paths["color"]

        training_paths: dict[int, str] = {}
        needed = sorted({r.reference_id for r in kept if r.reference_id is not None})
        by_id = {t.id: t for t in training}
        for tid in needed:
            paths = emit(by_id[tid], f"train_{tid:05d}")
            training_paths[tid] = paths["color"]

        sel.export_freeviews_json(self.path("freeviews.json"), records)
        sel.export_rectify_pairs(self.path("rectify_pairs.json"), records,
                                 render_paths, training_paths)
        return {"freeview_renders": len(kept), "reference_renders": len(needed)}

    def run_batches(self) -> dict:
        scene, bounds = self._load_scene_and_bounds()
        grid = self._load_grid("batches")
        training = self._load_training(bounds)
        records = self._load_freeview_records("batches", bounds)
        kept = [r for r in records if r.is_kept()]
        poses = training + [r.final_pose() for r in kept]
        graph = vg.load_graph_json(_require(self.path("graph.json"), "batches"),
                                   grid=grid, poses=None)
        usable = set(p.id for p in poses) & set(graph.nodes)
        sub = graph.subgraph(usable)
        curriculum = replace(self.config.curriculum,
                             seed=stage_seed(self.config.seed, "batches"))
        sequence = [t.id for t in training]
        batches = tf.batch_stream(sub, sequence, curriculum)
        tf.export_batches_jsonl(self.path("batches.jsonl"), batches)
        return {"batches": curriculum.total_iters, "graph_nodes": len(sub.nodes)}

    def run_schedule(self) -> dict:
        scene, bounds = self._load_scene_and_bounds()
        grid = self._load_grid("schedule")
        training = self._load_training(bounds)
        records = self._load_freeview_records("schedule", bounds)
        kept = [r for r in records if r.is_kept()]
        poses = training + [r.final_pose() for r in kept]
        graph = vg.load_graph_json(_require(self.path("graph.json"), "schedule"),
                                   grid=grid, poses=poses)
        schedule = tf.build_pseudo_gt_schedule(
            graph, [t.id for t in training], kept,
            interval=self.config.pseudo_gt_interval,
            per_event=self.config.pseudo_gt_per_event,
            total_iters=self.config.curriculum.total_iters,
            quality_max=self.config.selector.quality_max,
        )
        tf.export_schedule_json(self.path("schedule.json"), schedule)
        return {"events": len(schedule.events), "scheduled": len(schedule.all_ids())}

    def run_report(self) -> dict:
        from . import report

        return report.write_report(self)

    # ---- driver ----
    def run_stage(self, stage: str) -> dict:
        runners = {
            "grid": self.run_grid,
            "candidates": self.run_candidates,
            "graph": self.run_graph,
            "select": self.run_select,
            "render": self.run_render,
            "batches": self.run_batches,
            "schedule": self.run_schedule,
            "report": self.run_report,
        }
        if stage == "all":
            result = {}
            for name in STAGES:
                result[name] = self.run_stage(name)
            return result
        if stage not in runners:
            raise ValueError(f"unknown stage: {stage}")

        inputs = self._stage_inputs(stage)
        t0 = time.perf_counter()
        counts = runners[stage]()
        elapsed = time.perf_counter() - t0
        outputs = {p.name: _hash_file(p) for p in self._stage_outputs(stage) if p.exists()}
        self._update_manifest(stage, inputs, counts, outputs, elapsed)
        logger.info("stage %s done in %.2fs: %s", stage, elapsed, counts)
        return counts

    def _stage_inputs(self, stage: str) -> dict[str, str]:
        deps = {
            "grid": [self.config.scene_path],
            "candidates": [self.config.scene_path, self.config.camera_path,
                           self.path("grid.bin")],
            "graph": [self.config.camera_path, self.path("grid.bin"),
                      self.path("candidates.json")],
            "select": [self.config.scene_path, self.config.camera_path,
                       self.path("grid.bin"), self.path("candidates.json"),
                       self.path("graph.json"), self.path("feasible.json")],
            "render": [self.config.scene_path, self.path("freeviews.json")],
            "batches": [self.path("graph.json"), self.path("freeviews.json")],
            "schedule": [self.path("graph.json"), self.path("freeviews.json")],
            "report": [],
        }
        out = {}
        for p in deps[stage]:
            p = Path(p)
            if p.exists():
                out[p.name] = _hash_file(p)
        return out

    def _stage_outputs(self, stage: str) -> list[Path]:
        table = {
            "grid": [self.path("grid.bin")],
            "candidates": [self.path("candidates.json")],
            "graph": [self.path("graph.json"), self.path("graph.dot"),
                      self.path("feasible.json")],
            "select": [self.path("freeviews.json")],
            "render": [self.path("freeviews.json"), self.path("rectify_pairs.json")],
            "batches": [self.path("batches.jsonl")],
            "schedule": [self.path("schedule.json")],
            "report": [self.path("report.csv")],
        }
        return table[stage]

    def _update_manifest(self, stage, inputs, counts, outputs, elapsed) -> None:
        manifest = {}
        if self.manifest_path.exists():
            manifest = json.loads(self.manifest_path.read_text())
        stages = manifest.setdefault("stages", {})
        stages[stage] = {
            "input_hashes": inputs,
            "counts": counts,
            "output_hashes": outputs,
            "seconds": round(elapsed, 3),
        }
        manifest["seed"] = self.config.seed
        self.manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))


def run_stage(stage: str, config: PipelineConfig) -> dict:
    """Run one named stage (or `all`) against the configured sidecar directory."""
    return Pipeline(config).run_stage(stage)
