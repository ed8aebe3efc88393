import numpy as np
import pytest

from freeview.errors import ShapeMismatch
from freeview.selector import FreeViewRecord
from freeview.splat_renderer import QualityReport
from freeview.trajectory_gen import CandidatePose, TrajectoryMode
from freeview.training_feeds import (
    CurriculumConfig,
    annealed_frame_distance,
    batch_stream,
    build_pseudo_gt_schedule,
    free_view_loss,
    max_training_wiou,
    pseudo_gt_weight,
    sample_batch,
    ssim,
)
from freeview.view_graph import GraphNode, ViewGraph, VisibilityVector

from conftest import make_camera


def edge_graph(edges: dict, n: int, cutoff: float = 0.0, kinds=None) -> ViewGraph:
    kinds = kinds or {}
    nodes = {
        i: GraphNode(i, kinds.get(i, "training"), VisibilityVector.from_dict({i: 1.0}), 1.0)
        for i in range(n)
    }
    table = {(min(i, j), max(i, j)): w for (i, j), w in edges.items()}
    return ViewGraph(nodes, table, cutoff)


def fv_record(view_id, score=0.2):
    pose = make_camera([0, 0, -1], [0, 0, 0], cam_id=view_id, kind="candidate")
    cand = CandidatePose(pose=pose, mode=TrajectoryMode.ORBIT, anchor_id=0,
                         frame_index=0, lookat=np.zeros(3))
    return FreeViewRecord(cand, "selected", quality=QualityReport(0.0, 0.5, score, True))


class TestSampleBatch:
    def chain(self):
        # 6-node chain with one hub: node 2 carries the largest incident mass
        edges = {
            (0, 1): 0.6, (1, 2): 0.9, (2, 3): 0.8, (3, 4): 0.4, (4, 5): 0.3,
            (2, 0): 0.5, (2, 4): 0.45, (2, 5): 0.2, (1, 3): 0.1, (0, 3): 0.05,
        }
        return edge_graph(edges, 6)

    def test_warmup_start_is_hand_computed_hub(self):
        graph = self.chain()
        totals = {i: sum(graph.neighbors(i).values()) for i in graph.nodes}
        assert max(totals, key=totals.get) == 2
        config = CurriculumConfig(inputs_per_batch=2, targets_per_batch=1,
                                  warmup_iters=10, total_iters=20, graph_probability=1.0)
        rng = np.random.default_rng(0)
        for _ in range(10):
            batch = sample_batch(0, graph, [0, 1, 2, 3, 4, 5], config, rng)
            assert batch.source == "graph"
            assert batch.input_ids[0] == 2

    def test_batch_shape_and_distinct(self):
        graph = self.chain()
        config = CurriculumConfig(inputs_per_batch=3, targets_per_batch=2,
                                  warmup_iters=5, total_iters=10, graph_probability=1.0)
        rng = np.random.default_rng(1)
        batch = sample_batch(0, graph, list(range(6)), config, rng)
        assert len(batch.input_ids) == 3
        assert len(batch.target_ids) == 2
        ids = batch.input_ids + batch.target_ids
        assert len(set(ids)) == len(ids)

    def test_graph_probability_zero_always_frame_distance(self):
        graph = self.chain()
        config = CurriculumConfig(graph_probability=0.0, warmup_iters=10, total_iters=100)
        rng = np.random.default_rng(2)
        seq = list(range(64))
        for it in range(50):
            assert sample_batch(it, graph, seq, config, rng).source == "frame_distance"

    def test_frame_distance_bounds_enforced(self):
        graph = self.chain()
        config = CurriculumConfig(graph_probability=0.0, warmup_iters=100, total_iters=1000)
        rng = np.random.default_rng(3)
        seq = list(range(120))
        for it in list(range(0, 100, 7)) + list(range(100, 1000, 83)):
            lo, hi = annealed_frame_distance(it, config)
            batch = sample_batch(it, graph, seq, config, rng)
            for i in batch.input_ids:
                for t in batch.target_ids:
                    assert lo <= abs(t - i) <= hi

    def test_post_warmup_bounds_are_full_range(self):
        config = CurriculumConfig(warmup_iters=100, total_iters=1000)
        assert annealed_frame_distance(0, config) == (10, 20)
        assert annealed_frame_distance(50, config) == (12, 30)
        assert annealed_frame_distance(100, config) == (15, 40)
        assert annealed_frame_distance(900, config) == (15, 40)

    def test_batch_validity_10k_draws(self):
        graph = self.chain()
        config = CurriculumConfig(inputs_per_batch=2, targets_per_batch=1,
                                  warmup_iters=500, total_iters=10_000,
                                  frame_dist_warm=(2, 6), frame_dist_full=(3, 10),
                                  graph_probability=0.5)
        rng = np.random.default_rng(4)
        seq = list(range(30))
        for it in range(10_000):
            batch = sample_batch(it, graph, seq, config, rng)
            assert len(batch.input_ids) == 2
            assert len(batch.target_ids) == 1
            ids = batch.input_ids + batch.target_ids
            assert len(set(ids)) == 3

    def test_curriculum_trend_warm_higher_overlap(self, rng):
        # random geometric-ish graph: close ids overlap strongly
        n = 24
        edges = {}
        for i in range(n):
            for j in range(i + 1, n):
                w = float(np.exp(-abs(i - j) / 3.0))
                if w > 0.02:
                    edges[(i, j)] = w
        graph = edge_graph(edges, n)
        config = CurriculumConfig(inputs_per_batch=3, targets_per_batch=2,
                                  warmup_iters=1000, total_iters=2000,
                                  graph_probability=1.0)
        gen = np.random.default_rng(9)

        def mean_overlap(iters):
            vals = []
            for it in iters:
                batch = sample_batch(it, graph, list(range(n)), config, gen)
                ids = batch.input_ids + batch.target_ids
                pair_w = [graph.edge(a, b) for ai, a in enumerate(ids)
                          for b in ids[ai + 1:]]
                vals.append(np.mean(pair_w))
            return float(np.mean(vals))

        warm = mean_overlap(range(0, 1000))
        late = mean_overlap(range(1000, 2000))
        assert warm > late


class TestPseudoGtSchedule:
    def test_exhaustion_7_views(self):
        graph = edge_graph({}, 10)
        records = [fv_record(i) for i in range(3, 10)]
        schedule = build_pseudo_gt_schedule(graph, [0, 1, 2], records,
                                            interval=3000, per_event=5, total_iters=20000)
        assert [len(e.freeview_ids) for e in schedule.events] == [5, 2]
        assert [e.iteration for e in schedule.events] == [3000, 6000]

    def test_lowest_overlap_first(self):
        # fv 5 overlaps training, fv 6 does not; 6 must be scheduled first
        nodes = {
            0: GraphNode(0, "training", VisibilityVector.from_dict({1: 1.0, 2: 1.0}), 2.0),
            5: GraphNode(5, "candidate", VisibilityVector.from_dict({1: 1.0, 9: 1.0}), 2.0),
            6: GraphNode(6, "candidate", VisibilityVector.from_dict({7: 1.0, 8: 1.0}), 2.0),
        }
        graph = ViewGraph(nodes, {}, 0.0)
        records = [fv_record(5), fv_record(6)]
        schedule = build_pseudo_gt_schedule(graph, [0], records, interval=1000,
                                            per_event=1, total_iters=10_000)
        assert schedule.events[0].freeview_ids == [6]
        assert schedule.events[1].freeview_ids == [5]

    def test_weight_midpoint(self):
        assert pseudo_gt_weight(0.25, 0.5) == pytest.approx(0.4)
        assert pseudo_gt_weight(0.0, 0.5) == pytest.approx(0.5)
        assert pseudo_gt_weight(0.5, 0.5) == pytest.approx(0.3)
        assert pseudo_gt_weight(2.0, 0.5) == pytest.approx(0.3)  # clamped

    def test_partition_and_band(self):
        graph = edge_graph({}, 40)
        records = [fv_record(i, score=0.05 * (i % 10)) for i in range(10, 37)]
        schedule = build_pseudo_gt_schedule(graph, [0], records, interval=2000,
                                            per_event=5, total_iters=50_000)
        ids = schedule.all_ids()
        assert len(ids) == len(set(ids)) == 27
        assert set(ids) <= {r.view_id for r in records}
        for e in schedule.events:
            assert e.iteration % 2000 == 0
            for w in e.weights:
                assert 0.3 <= w <= 0.5

    def test_stops_at_total_iters(self):
        graph = edge_graph({}, 60)
        records = [fv_record(i) for i in range(5, 55)]
        schedule = build_pseudo_gt_schedule(graph, [0], records, interval=3000,
                                            per_event=5, total_iters=12_000)
        assert [e.iteration for e in schedule.events] == [3000, 6000, 9000, 12000]
        assert len(schedule.all_ids()) == 20


class TestSsimAndLoss:
    def test_identical_images_zero_loss(self, rng):
        img = rng.uniform(0, 1, size=(32, 40, 3))
        assert free_view_loss(img, img, 0.4) == pytest.approx(0.0, abs=1e-12)
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_constant_offset_l1(self, rng):
        img = rng.uniform(0.2, 0.7, size=(24, 24, 3))
        shifted = img + 0.1
        loss = free_view_loss(img, shifted, 0.4)
        ssim_val = ssim(img, shifted)
        assert loss == pytest.approx(0.4 * (0.1 + (1 - ssim_val)), abs=1e-9)
        assert loss >= 0.4 * 0.1 - 1e-12

    def test_matches_skimage_reference(self, rng):
        from skimage.metrics import structural_similarity

        for _ in range(20):
            a = rng.uniform(0, 1, size=(36, 44, 3))
            b = np.clip(a + rng.normal(0, 0.15, size=a.shape), 0, 1)
            ours = ssim(a, b)
            ref = structural_similarity(
                a, b, channel_axis=2, gaussian_weights=True, sigma=1.5,
                use_sample_covariance=False, data_range=1.0)
            assert ours == pytest.approx(ref, abs=1e-4)

    def test_symmetry(self, rng):
        a = rng.uniform(0, 1, size=(30, 30))
        b = rng.uniform(0, 1, size=(30, 30))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)

    def test_loss_nonnegative_random(self, rng):
        for _ in range(20):
            a = rng.uniform(0, 1, size=(20, 20, 3))
            b = rng.uniform(0, 1, size=(20, 20, 3))
            assert free_view_loss(a, b, 0.3) >= 0

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            free_view_loss(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)), 0.4)


class TestBatchStream:
    def test_deterministic_and_counted(self):
        edges = {(i, j): 0.5 for i in range(8) for j in range(i + 1, 8)}
        graph = edge_graph(edges, 8)
        config = CurriculumConfig(inputs_per_batch=2, targets_per_batch=1,
                                  warmup_iters=10, total_iters=40,
                                  frame_dist_warm=(2, 5), frame_dist_full=(3, 8),
                                  seed=11)
        a = list(batch_stream(graph, list(range(20)), config))
        b = list(batch_stream(graph, list(range(20)), config))
        assert len(a) == 40
        assert all(x.input_ids == y.input_ids and x.target_ids == y.target_ids
                   and x.source == y.source for x, y in zip(a, b))
