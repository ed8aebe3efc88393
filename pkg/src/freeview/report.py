"""Inspection report: summary figures rendered to PNG plus a CSV of the
selection funnel and per-view metrics."""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import certainty_grid as cg

FUNNEL_ORDER = ("pool", "feasible", "nms_accepted", "gated", "final")


def _funnel_from_manifest(manifest: dict) -> list[tuple[str, int]]:
    counts = manifest.get("stages", {}).get("select", {}).get("counts", {})
    return [(name, counts[name]) for name in FUNNEL_ORDER if name in counts]


def write_report(pipeline) -> dict:
    """Render figures and the metrics CSV from whatever sidecars exist."""
    out = pipeline.out
    fig_dir = out / "figures"
    fig_dir.mkdir(exist_ok=True)
    written = []

    manifest = {}
    if pipeline.manifest_path.exists():
        manifest = json.loads(pipeline.manifest_path.read_text())

    funnel = _funnel_from_manifest(manifest)
    if funnel:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        names = [n for n, _ in funnel]
        values = [v for _, v in funnel]
        ax.bar(names, values, color="#4878cf")
        for i, v in enumerate(values):
            ax.text(i, v, str(v), ha="center", va="bottom", fontsize=9)
        ax.set_ylabel("views")
        ax.set_title("selection funnel")
        fig.tight_layout()
        fig.savefig(fig_dir / "funnel.png", dpi=120)
        plt.close(fig)
        written.append("funnel.png")

    grid_path = pipeline.path("grid.bin")
    if grid_path.exists():
        grid = cg.load_grid(grid_path)
        R = grid.resolution
        ijk = grid.unlinearize(grid.indices)
        heat = np.zeros((R, R))
        np.add.at(heat, (ijk[:, 2], ijk[:, 0]), grid.values)
        fig, ax = plt.subplots(figsize=(5, 4.5))
        im = ax.imshow(np.log1p(heat), origin="lower", cmap="magma")
        ax.set_xlabel("x voxel")
        ax.set_ylabel("z voxel")
        ax.set_title("certainty (log, summed over y)")
        fig.colorbar(im, ax=ax, shrink=0.85)
        fig.tight_layout()
        fig.savefig(fig_dir / "certainty_grid.png", dpi=120)
        plt.close(fig)
        written.append("certainty_grid.png")

    graph_path = pipeline.path("graph.json")
    if graph_path.exists():
        doc = json.loads(graph_path.read_text())
        weights = [e["wiou"] for e in doc["edges"]]
        if weights:
            fig, ax = plt.subplots(figsize=(5.5, 3.5))
            ax.hist(weights, bins=40, color="#6acc65")
            ax.set_xlabel("edge WIoU")
            ax.set_ylabel("edges")
            ax.set_title("view-graph overlap distribution")
            fig.tight_layout()
            fig.savefig(fig_dir / "wiou_histogram.png", dpi=120)
            plt.close(fig)
            written.append("wiou_histogram.png")

    rows = []
    fv_path = pipeline.path("freeviews.json")
    if fv_path.exists():
        records = json.loads(fv_path.read_text())
        statuses = {}
        for rec in records:
            statuses[rec["status"]] = statuses.get(rec["status"], 0) + 1
            q = rec.get("quality") or {}
            rows.append({
                "id": rec["id"],
                "status": rec["status"],
                "mode": rec["mode"],
                "anchor_id": rec["anchor_id"],
                "jittered": rec["jittered"],
                "quality_score": q.get("quality_score", ""),
                "depth_range_score": q.get("depth_range_score", ""),
                "black_pixel_ratio": q.get("black_pixel_ratio", ""),
                "reference_id": rec.get("reference_id", ""),
            })

        kept_scores = [r["quality_score"] for r in rows
                       if r["status"] in ("selected", "rectified_then_selected")
                       and r["quality_score"] != ""]
        if kept_scores:
            fig, ax = plt.subplots(figsize=(5.5, 3.5))
            ax.hist(kept_scores, bins=30, color="#d65f5f")
            ax.set_xlabel("quality score (lower is better)")
            ax.set_ylabel("kept free-views")
            ax.set_title("kept free-view quality")
            fig.tight_layout()
            fig.savefig(fig_dir / "quality_histogram.png", dpi=120)
            plt.close(fig)
            written.append("quality_histogram.png")

        fig, ax = plt.subplots(figsize=(6, 3.5))
        names = sorted(statuses)
        ax.barh(names, [statuses[n] for n in names], color="#956cb4")
        ax.set_xlabel("views")
        ax.set_title("free-view record statuses")
        fig.tight_layout()
        fig.savefig(fig_dir / "statuses.png", dpi=120)
        plt.close(fig)
        written.append("statuses.png")

    csv_path = pipeline.path("report.csv")
    with open(csv_path, "w", newline="") as fh:
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(sorted(rows, key=lambda r: r["id"]))
        else:
            writer = csv.writer(fh)
            writer.writerow(["stage", "count"])
            for name, value in funnel:
                writer.writerow([name, value])

    return {"figures": len(written), "csv_rows": len(rows)}
