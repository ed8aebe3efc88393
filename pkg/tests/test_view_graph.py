import numpy as np
import pytest

from freeview.certainty_grid import build_certainty_grid
from freeview.errors import NoReferenceAvailable
from freeview.scene_io import SceneBounds
from freeview.view_graph import (
    GraphNode,
    ViewGraph,
    VisibilityVector,
    build_view_graph,
    compute_visibility,
    export_graph_dot,
    export_graph_json,
    load_graph_json,
    select_reference,
    wiou,
)

from conftest import camera_ring, make_camera, random_scene


def vv(entries: dict[int, float]) -> VisibilityVector:
    return VisibilityVector.from_dict(entries)


def wiou_oracle(a: dict[int, float], b: dict[int, float]) -> float:
    """Literal sum-min over sum-max across the key union."""
    keys = set(a) | set(b)
    if not keys:
        return 0.0
    mins = sum(min(a.get(k, 0.0), b.get(k, 0.0)) for k in keys)
    maxs = sum(max(a.get(k, 0.0), b.get(k, 0.0)) for k in keys)
    return mins / maxs if maxs > 0 else 0.0


def projection_oracle(pose, point) -> bool:
    """Scalar projection check, coded independently of the vectorized path."""
    R = pose.rotation_matrix()
    cam = R @ np.asarray(point, dtype=float) + pose.translation
    if not (pose.near < cam[2] < pose.far):
        return False
    u = pose.focal[0] * cam[0] / cam[2] + pose.principal[0]
    v = pose.focal[1] * cam[1] / cam[2] + pose.principal[1]
    return 0 <= u < pose.image_size[0] and 0 <= v < pose.image_size[1]


@pytest.fixture
def small_grid(rng):
    scene = random_scene(rng, count=500)
    bounds = SceneBounds(np.full(3, -1.0), np.full(3, 1.0))
    return build_certainty_grid(scene, bounds, 8, 1e-8)


class TestWiou:
    def test_identical_vectors(self):
        a = vv({1: 2.0, 5: 0.5})
        assert wiou(a, a) == 1.0

    def test_disjoint_supports(self):
        assert wiou(vv({1: 2.0}), vv({2: 3.0})) == 0.0

    def test_hand_case(self):
        a = vv({1: 2.0, 2: 2.0})
        b = vv({1: 2.0})
        assert wiou(a, b) == pytest.approx(0.5)

    def test_both_empty(self):
        assert wiou(vv({}), vv({})) == 0.0

    def test_symmetry_exact(self, rng):
        for _ in range(50):
            keys_a = rng.choice(100, size=rng.integers(1, 30), replace=False)
            keys_b = rng.choice(100, size=rng.integers(1, 30), replace=False)
            a = vv({int(k): float(rng.uniform(0.1, 5)) for k in keys_a})
            b = vv({int(k): float(rng.uniform(0.1, 5)) for k in keys_b})
            assert wiou(a, b) == wiou(b, a)

    def test_matches_union_oracle(self, rng):
        for _ in range(100):
            da = {int(k): float(rng.uniform(0.1, 5))
                  for k in rng.choice(60, size=rng.integers(0, 25), replace=False)}
            db = {int(k): float(rng.uniform(0.1, 5))
                  for k in rng.choice(60, size=rng.integers(0, 25), replace=False)}
            assert wiou(vv(da), vv(db)) == pytest.approx(wiou_oracle(da, db), abs=1e-12)

    def test_support_restriction_monotone(self, rng):
        for _ in range(50):
            keys = rng.choice(80, size=20, replace=False)
            da = {int(k): float(rng.uniform(0.5, 3)) for k in keys}
            db = dict(da)  # b == a pointwise on its support
            drop = rng.choice(list(db), size=8, replace=False)
            restricted = {k: v for k, v in db.items() if k not in drop}
            assert wiou(vv(da), vv(restricted)) <= wiou(vv(da), vv(db)) + 1e-12


class TestComputeVisibility:
    def test_facing_away_empty(self, small_grid):
        pose = make_camera([0, 0, -5], [0, 0, -10])
        out = compute_visibility(pose, small_grid)
        assert out.size == 0
        assert out.score() == 0.0

    def test_single_voxel_on_axis(self, rng):
        from test_certainty_grid import single_gaussian, unit_bounds

        grid = build_certainty_grid(single_gaussian([0.5] * 3), unit_bounds(), 4, 1e-8)
        pose = make_camera([0.5, 0.5, -2.0], [0.5, 0.5, 0.5])
        out = compute_visibility(pose, grid)
        assert out.size == 1
        assert out.weights[0] == pytest.approx(grid.values[0])

    def test_matches_projection_oracle(self, small_grid):
        centers = small_grid.voxel_centers()
        for pose in camera_ring(20, radius=2.5, target=(0, 0, 0)):
            out = compute_visibility(pose, small_grid)
            expected = {
                int(lin): float(val)
                for lin, val, c in zip(small_grid.indices, small_grid.values, centers)
                if projection_oracle(pose, c)
            }
            assert out.as_dict() == expected


class TestBuildViewGraph:
    def test_single_pose(self, small_grid):
        pose = make_camera([0, 0, -3], [0, 0, 0])
        graph = build_view_graph([pose], small_grid)
        assert len(graph.edges) == 0
        vis = compute_visibility(pose, small_grid)
        assert graph.nodes[0].score == pytest.approx(vis.score())

    def test_identical_poses_edge_one(self, small_grid):
        a = make_camera([0, 0, -3], [0, 0, 0], cam_id=0)
        b = make_camera([0, 0, -3], [0, 0, 0], cam_id=1)
        graph = build_view_graph([a, b], small_grid)
        assert graph.edge(0, 1) == pytest.approx(1.0, abs=1e-12)

    def test_self_wiou_is_one(self, small_grid):
        pose = make_camera([0, 0, -3], [0, 0, 0])
        graph = build_view_graph([pose], small_grid)
        assert graph.wiou_exact(0, 0) == 1.0

    def test_matches_dense_pairwise_oracle(self, small_grid):
        poses = camera_ring(10, radius=2.2, target=(0, 0, 0.2))
        graph = build_view_graph(poses, small_grid, edge_cutoff=0.0)
        vecs = {p.id: compute_visibility(p, small_grid).as_dict() for p in poses}
        for i in range(10):
            for j in range(i + 1, 10):
                expect = wiou_oracle(vecs[i], vecs[j])
                got = graph.edges.get((i, j), 0.0)
                assert got == pytest.approx(expect, abs=1e-9)

    def test_score_is_weight_sum(self, small_grid):
        poses = camera_ring(6, radius=2.0)
        graph = build_view_graph(poses, small_grid)
        for p in poses:
            vis = compute_visibility(p, small_grid)
            assert graph.nodes[p.id].score == pytest.approx(vis.score(), rel=1e-6)

    def test_scale_coherence(self, rng, small_grid):
        poses = camera_ring(6, radius=2.4)
        graph = build_view_graph(poses, small_grid, edge_cutoff=0.0)
        scaled_grid = type(small_grid)(
            small_grid.bounds, small_grid.resolution,
            small_grid.indices, small_grid.values * 3.7, small_grid.epsilon)
        scaled = build_view_graph(poses, scaled_grid, edge_cutoff=0.0)
        for key, w in graph.edges.items():
            assert scaled.edges[key] == pytest.approx(w, abs=1e-9)
        for i in graph.nodes:
            assert scaled.nodes[i].score == pytest.approx(3.7 * graph.nodes[i].score, rel=1e-9)

    def test_sparse_matches_dense_50_poses(self, rng):
        scene = random_scene(rng, count=300)
        bounds = SceneBounds(np.full(3, -1.0), np.full(3, 1.0))
        grid = build_certainty_grid(scene, bounds, 8, 1e-8)
        poses = camera_ring(50, radius=2.0, target=(0.1, 0, 0))
        graph = build_view_graph(poses, grid, edge_cutoff=0.0)
        vecs = {p.id: compute_visibility(p, grid).as_dict() for p in poses}
        for i in range(50):
            for j in range(i + 1, 50):
                expect = wiou_oracle(vecs[i], vecs[j])
                assert graph.edges.get((i, j), 0.0) == pytest.approx(expect, abs=1e-9)


def chain_graph(weights_by_pair, n, cutoff=0.05):
    """Build a ViewGraph directly from an edge table (ids 0..n-1)."""
    nodes = {
        i: GraphNode(i, "training", vv({i: 1.0}), 1.0) for i in range(n)
    }
    edges = {(min(i, j), max(i, j)): w for (i, j), w in weights_by_pair.items()}
    return ViewGraph(nodes, edges, cutoff)


class TestSelectReference:
    def test_direct_best(self, small_grid):
        target = make_camera([0, 0, -3], [0, 0, 0], cam_id=10, kind="candidate")
        t0 = make_camera([0.2, 0, -3], [0, 0, 0], cam_id=0)
        t1 = make_camera([3, 0, 0], [0, 0, 0], cam_id=1)
        graph = build_view_graph([t0, t1, target], small_grid)
        assert select_reference(graph, 10, {0, 1}) == 0

    def test_second_order_bottleneck(self):
        # target 9 reaches training {0,1} only through intermediate 5
        graph = chain_graph({(9, 5): 0.6, (5, 0): 0.5, (5, 1): 0.2}, 10, cutoff=0.1)
        assert select_reference(graph, 9, {0, 1}) == 0

    def test_zero_visibility_raises(self):
        graph = chain_graph({(0, 1): 0.5}, 4, cutoff=0.1)
        with pytest.raises(NoReferenceAvailable):
            select_reference(graph, 3, {0, 1})

    def test_tie_breaks_lower_id(self):
        graph = chain_graph({(5, 0): 0.4, (5, 1): 0.4}, 6, cutoff=0.1)
        assert select_reference(graph, 5, {0, 1}) == 0


class TestGraphSidecar:
    def test_json_roundtrip_with_visibility(self, tmp_path, small_grid):
        poses = camera_ring(8, radius=2.1)
        graph = build_view_graph(poses, small_grid, edge_cutoff=0.02)
        path = tmp_path / "graph.json"
        export_graph_json(path, graph)
        back = load_graph_json(path, grid=small_grid, poses=poses)
        assert set(back.nodes) == set(graph.nodes)
        assert back.edge_cutoff == graph.edge_cutoff
        for key, w in graph.edges.items():
            assert back.edges[key] == pytest.approx(w)
        for i in graph.nodes:
            assert back.wiou_exact(i, (i + 1) % 8) == pytest.approx(
                graph.wiou_exact(i, (i + 1) % 8), abs=1e-12)

    def test_dot_export(self, tmp_path, small_grid):
        poses = camera_ring(4, radius=2.0)
        graph = build_view_graph(poses, small_grid)
        path = tmp_path / "graph.dot"
        export_graph_dot(path, graph)
        text = path.read_text()
        assert text.startswith("graph")
        assert "n0" in text and "--" in text
