"""Weighted-visibility view graph: per-view voxel coverage and overlap edges.

Every node carries a sparse visibility vector whose nonzero entries equal the
certainty of the voxels whose centers project into the view's frustum. The
edge weight between two nodes is the weighted IoU of those vectors
(sum of minima over sum of maxima), which for certainty-masked vectors
reduces to certainty-weighted set IoU and admits a blocked matrix-product
evaluation for large graphs.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .certainty_grid import CertaintyGrid
from .errors import EmptyGrid, NoReferenceAvailable
from .scene_io import CameraPose

_BLOCK_VOXELS = 8192


@dataclass(frozen=True)
class VisibilityVector:
    """Sparse weights over occupied voxels: linear voxel index -> certainty."""

    indices: np.ndarray  # (M,) int64 sorted linear voxel indices
    weights: np.ndarray  # (M,) float64 > 0

    @staticmethod
    def empty() -> "VisibilityVector":
        return VisibilityVector(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))

    @property
    def size(self) -> int:
        return int(self.indices.shape[0])

    def score(self) -> float:
        return float(self.weights.sum())

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.indices.tolist(), self.weights.tolist()))

    @staticmethod
    def from_dict(entries: dict[int, float]) -> "VisibilityVector":
        items = sorted((k, v) for k, v in entries.items() if v != 0)
        if not items:
            return VisibilityVector.empty()
        idx, w = zip(*items)
        return VisibilityVector(np.array(idx, dtype=np.int64), np.array(w, dtype=np.float64))


def compute_visibility(pose: CameraPose, grid: CertaintyGrid) -> VisibilityVector:
    """Certainty weights of the occupied voxels whose centers fall in the frustum.

    A voxel is visible when its center projects with camera depth in
    (near, far) and pixel coordinates inside [0, W) x [0, H).
    """
    if grid.occupied == 0:
        raise EmptyGrid("grid has no occupied voxels")
    mask = _visibility_mask(pose, grid.voxel_centers())
    return VisibilityVector(grid.indices[mask], grid.values[mask])


def _visibility_mask(pose: CameraPose, points: np.ndarray) -> np.ndarray:
    R = pose.rotation_matrix()
    cam = points @ R.T + pose.translation
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = pose.focal[0] * cam[:, 0] / z + pose.principal[0]
        v = pose.focal[1] * cam[:, 1] / z + pose.principal[1]
    w, h = pose.image_size
    return (
        (z > pose.near) & (z < pose.far)
        & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    )


def wiou(a: VisibilityVector, b: VisibilityVector) -> float:
    """Weighted IoU: sum of elementwise minima over sum of maxima (0 when both empty).

    Both sums run in sorted union-key order, so the result is exactly
    symmetric in its arguments.
    """
    if a.size == 0 and b.size == 0:
        return 0.0
    union = np.union1d(a.indices, b.indices)
    wa = np.zeros(union.shape[0])
    wb = np.zeros(union.shape[0])
    wa[np.searchsorted(union, a.indices)] = a.weights
    wb[np.searchsorted(union, b.indices)] = b.weights
    min_sum = float(np.minimum(wa, wb).sum())
    max_sum = float(np.maximum(wa, wb).sum())
    if max_sum <= 0:
        return 0.0
    return min_sum / max_sum


@dataclass
class GraphNode:
    id: int
    kind: str  # "training" | "candidate"
    visibility: VisibilityVector
    score: float


@dataclass
class ViewGraph:
    nodes: dict[int, GraphNode]
    edges: dict[tuple[int, int], float]  # keyed (min_id, max_id), wiou >= cutoff
    edge_cutoff: float = 0.05
    adjacency: dict[int, dict[int, float]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.adjacency:
            self.adjacency = {i: {} for i in self.nodes}
            for (i, j), w in self.edges.items():
                self.adjacency[i][j] = w
                self.adjacency[j][i] = w

    def edge(self, i: int, j: int) -> float:
        """Stored-edge query; below-cutoff pairs read as 0, self-edges as 1."""
        if i == j:
            return 1.0 if self.nodes[i].visibility.size > 0 else 0.0
        return self.edges.get((min(i, j), max(i, j)), 0.0)

    def wiou_exact(self, i: int, j: int) -> float:
        if i == j:
            return 1.0 if self.nodes[i].visibility.size > 0 else 0.0
        return wiou(self.nodes[i].visibility, self.nodes[j].visibility)

    def neighbors(self, i: int) -> dict[int, float]:
        return self.adjacency.get(i, {})

    def ids_of_kind(self, kind: str) -> list[int]:
        return sorted(i for i, n in self.nodes.items() if n.kind == kind)

    def subgraph(self, ids) -> "ViewGraph":
        keep = set(ids)
        nodes = {i: self.nodes[i] for i in keep}
        edges = {(i, j): w for (i, j), w in self.edges.items() if i in keep and j in keep}
        return ViewGraph(nodes, edges, self.edge_cutoff)

    def replace_visibility(self, node_id: int, vis: VisibilityVector) -> None:
        """Re-score one node (a rectified pose) and rebuild its incident edges."""
        node = self.nodes[node_id]
        node.visibility = vis
        node.score = vis.score()
        for j in list(self.adjacency.get(node_id, {})):
            self.adjacency[j].pop(node_id, None)
            self.edges.pop((min(node_id, j), max(node_id, j)), None)
        self.adjacency[node_id] = {}
        for j, other in self.nodes.items():
            if j == node_id:
                continue
            w = wiou(vis, other.visibility)
            if w >= self.edge_cutoff:
                self.edges[(min(node_id, j), max(node_id, j))] = w
                self.adjacency[node_id][j] = w
                self.adjacency[j][node_id] = w


def _intersection_sums(vectors: list[VisibilityVector], grid: CertaintyGrid) -> np.ndarray:
    """Pairwise certainty mass shared by each pair of visibility sets.

    Blocked dense product over the occupied-voxel axis: with B[i, k] =
    sqrt(c_k) where voxel k is visible from view i, B @ B.T accumulates
    sum of min weights for every pair at BLAS speed.
    """
    n = len(vectors)
    positions = [np.searchsorted(grid.indices, v.indices) for v in vectors]
    sqrt_c = np.sqrt(grid.values)
    inter = np.zeros((n, n))
    total = grid.occupied
    for lo in range(0, total, _BLOCK_VOXELS):
        hi = min(lo + _BLOCK_VOXELS, total)
        block = np.zeros((n, hi - lo))
        for i, pos in enumerate(positions):
            a = np.searchsorted(pos, lo)
            b = np.searchsorted(pos, hi)
            cols = pos[a:b] - lo
            block[i, cols] = sqrt_c[pos[a:b]]
        inter += block @ block.T
    return inter


def build_view_graph(poses: list[CameraPose], grid: CertaintyGrid,
                     edge_cutoff: float = 0.05, threads: int = 1) -> ViewGraph:
    """One node per pose; all pairwise WIoU values >= edge_cutoff stored."""
    if not poses:
        raise ValueError("need at least one pose")
    if grid.occupied == 0:
        raise EmptyGrid("grid has no occupied voxels")

    centers = grid.voxel_centers()
    if threads > 1 and len(poses) > 8:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            masks = list(pool.map(lambda p: _visibility_mask(p, centers), poses))
    else:
        masks = [_visibility_mask(p, centers) for p in poses]
    vectors = [VisibilityVector(grid.indices[m], grid.values[m]) for m in masks]

    nodes = {
        p.id: GraphNode(id=p.id, kind=p.kind, visibility=v, score=v.score())
        for p, v in zip(poses, vectors)
    }
    if len(nodes) != len(poses):
        raise ValueError("pose ids must be unique")

    inter = _intersection_sums(vectors, grid)
    scores = np.array([v.score() for v in vectors])
    union = scores[:, None] + scores[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(union > 0, inter / union, 0.0)

    ids = [p.id for p in poses]
    edges: dict[tuple[int, int], float] = {}
    iu, ju = np.triu_indices(len(poses), k=1)
    keep = w[iu, ju] >= edge_cutoff
    for a, b, val in zip(iu[keep], ju[keep], w[iu, ju][keep]):
        i, j = ids[a], ids[b]
        edges[(min(i, j), max(i, j))] = float(val)
    return ViewGraph(nodes, edges, edge_cutoff)


def select_reference(graph: ViewGraph, target: int, training_ids) -> int:
    """Training node sharing the most certainty mass with `target`.

    Falls back to the best second-order bottleneck path (max over
    intermediates of min(edge(target, m), edge(m, t))) when no direct edge
    reaches the storage cutoff; ties break toward the lower node id.
    """
    training_ids = sorted(set(training_ids))
    if not training_ids:
        raise ValueError("training_ids must be non-empty")
    if target not in graph.nodes:
        raise KeyError(f"unknown node id {target}")

    neighbors = graph.neighbors(target)
    best_id, best_w = None, 0.0
    for t in training_ids:
        if t == target:
            continue
        w = neighbors.get(t, 0.0)
        if w > best_w + 1e-15:
            best_id, best_w = t, w
    if best_id is not None and best_w >= graph.edge_cutoff:
        return best_id

    best_id, best_w = None, 0.0
    for t in training_ids:
        if t == target:
            continue
        t_adj = graph.neighbors(t)
        bottleneck = 0.0
        for m, w_tm in neighbors.items():
            if m == t:
                continue
            w_mt = t_adj.get(m, 0.0)
            bottleneck = max(bottleneck, min(w_tm, w_mt))
        if bottleneck > best_w + 1e-15:
            best_id, best_w = t, bottleneck
    if best_id is None or best_w <= 0.0:
        raise NoReferenceAvailable(
            f"node {target} has no training connection within two hops")
    return best_id


def export_graph_json(path, graph: ViewGraph) -> None:
    doc = {
        "edge_cutoff": graph.edge_cutoff,
        "nodes": [
            {"id": n.id, "kind": n.kind, "score": n.score}
            for n in sorted(graph.nodes.values(), key=lambda n: n.id)
        ],
        "edges": [
            {"i": i, "j": j, "wiou": w}
            for (i, j), w in sorted(graph.edges.items())
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))


def load_graph_json(path, grid: CertaintyGrid | None = None,
                    poses: list[CameraPose] | None = None) -> ViewGraph:
    """Rebuild a graph from its JSON sidecar.

    Visibility vectors are not serialized; pass the grid and poses to
    recompute them (required for exact-WIoU queries and NMS).
    """
    with open(path) as fh:
        doc = json.load(fh)
    by_id = {}
    if poses is not None:
        if grid is None:
            raise ValueError("poses given without a grid")
        by_id = {p.id: compute_visibility(p, grid) for p in poses}
    nodes = {}
    for entry in doc["nodes"]:
        vis = by_id.get(entry["id"], VisibilityVector.empty())
        nodes[entry["id"]] = GraphNode(entry["id"], entry["kind"], vis, entry["score"])
    edges = {(min(e["i"], e["j"]), max(e["i"], e["j"])): e["wiou"] for e in doc["edges"]}
    return ViewGraph(nodes, edges, doc.get("edge_cutoff", 0.05))


def export_graph_dot(path, graph: ViewGraph) -> None:
    """Graphviz dump for inspection; edge labels carry WIoU to two decimals."""
    lines = ["graph viewgraph {"]
    for n in sorted(graph.nodes.values(), key=lambda n: n.id):
        shape = "box" if n.kind == "training" else "ellipse"
        lines.append(f'  n{n.id} [label="{n.id}\\nf={n.score:.3g}" shape={shape}];')
    for (i, j), w in sorted(graph.edges.items()):
        lines.append(f'  n{i} -- n{j} [label="{w:.2f}"];')
    lines.append("}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
