"""Downstream-training artifacts: curriculum batches, the pseudo-GT injection
schedule, and the weighted L1 + SSIM supervision loss."""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .errors import InsufficientNeighbors, ShapeMismatch
from .view_graph import ViewGraph, wiou

# floor on the low-overlap sampling weight so every neighbor stays reachable
_LOW_WIOU_FLOOR = 0.05


@dataclass(frozen=True)
class CurriculumConfig:
    inputs_per_batch: int = 4
    targets_per_batch: int = 2
    warmup_iters: int = 3000
    total_iters: int = 20000
    frame_dist_warm: tuple[int, int] = (10, 20)
    frame_dist_full: tuple[int, int] = (15, 40)
    graph_probability: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.warmup_iters > self.total_iters:
            raise ValueError("warmup_iters must be <= total_iters")
        for name in ("frame_dist_warm", "frame_dist_full"):
            lo, hi = getattr(self, name)
            if not (0 < lo < hi):
                raise ValueError(f"{name} must be an increasing positive range")

    @property
    def batch_size(self) -> int:
        return self.inputs_per_batch + self.targets_per_batch


@dataclass(frozen=True)
class CurriculumBatch:
    iteration: int
    input_ids: list[int]
    target_ids: list[int]
    source: str  # "graph" | "frame_distance"


@dataclass(frozen=True)
class PseudoGtEvent:
    iteration: int
    freeview_ids: list[int]
    weights: list[float]


@dataclass(frozen=True)
class PseudoGtSchedule:
    events: list[PseudoGtEvent]

    def all_ids(self) -> list[int]:
        return [i for e in self.events for i in e.freeview_ids]


def annealed_frame_distance(iteration: int, config: CurriculumConfig) -> tuple[int, int]:
    """Linear ramp of the (lo, hi) frame-distance band across the warm-up."""
    t = 1.0 if config.warmup_iters == 0 else min(iteration / config.warmup_iters, 1.0)
    lo = round(config.frame_dist_warm[0] + t * (config.frame_dist_full[0] - config.frame_dist_warm[0]))
    hi = round(config.frame_dist_warm[1] + t * (config.frame_dist_full[1] - config.frame_dist_warm[1]))
    return int(lo), int(hi)


def _weighted_sample_without_replacement(rng, ids, weights, k):
    ids = list(ids)
    weights = np.asarray(weights, dtype=np.float64)
    chosen = []
    for _ in range(k):
        p = weights / weights.sum()
        pick = int(rng.choice(len(ids), p=p))
        chosen.append(ids.pop(pick))
        weights = np.delete(weights, pick)
    return chosen


def _graph_batch(iteration, graph: ViewGraph, config: CurriculumConfig, rng) -> CurriculumBatch:
    need = config.batch_size - 1
    ids = sorted(graph.nodes)
    eligible = [i for i in ids if len(graph.neighbors(i)) >= need]
    if not eligible:
        raise InsufficientNeighbors(
            f"no node has {need} stored neighbors for a {config.batch_size}-view batch")

    warmup = iteration < config.warmup_iters
    if warmup:
        # most covered start: largest total incident edge weight
        start = max(eligible, key=lambda i: (sum(graph.neighbors(i).values()), -i))
    else:
        start = eligible[int(rng.integers(len(eligible)))]

    neighbors = graph.neighbors(start)
    nbr_ids = sorted(neighbors)
    if warmup:
        weights = [neighbors[i] for i in nbr_ids]
    else:
        weights = [max(1.0 - neighbors[i], _LOW_WIOU_FLOOR) for i in nbr_ids]
    members = _weighted_sample_without_replacement(rng, nbr_ids, weights, need)

    inputs = [start] + members[: config.inputs_per_batch - 1]
    targets = members[config.inputs_per_batch - 1:]
    return CurriculumBatch(iteration, inputs, targets, "graph")


def _frame_distance_batch(iteration, sequence, config: CurriculumConfig, rng) -> CurriculumBatch:
    lo, hi = annealed_frame_distance(iteration, config)
    n_in, n_tg = config.inputs_per_batch, config.targets_per_batch
    n = len(sequence)
    # inputs are consecutive; a target at offset d from the window start has
    # distances [d - n_in + 1, d] to the inputs, so d must sit in this band:
    d_lo, d_hi = lo + n_in - 1, hi
    if d_hi - d_lo + 1 < n_tg:
        raise ValueError(
            f"frame-distance band [{lo},{hi}] cannot fit {n_in} inputs and {n_tg} targets")
    max_start = n - 1 - d_lo - (n_tg - 1)
    if max_start < 0:
        raise ValueError(
            f"sequence of {n} frames too short for frame distance [{lo},{hi}]")
    start = int(rng.integers(max_start + 1))
    inputs = [sequence[start + k] for k in range(n_in)]
    offsets = np.arange(d_lo, min(d_hi, n - 1 - start) + 1)
    picks = sorted(int(d) for d in rng.choice(offsets, size=n_tg, replace=False))
    targets = [sequence[start + d] for d in picks]
    return CurriculumBatch(iteration, inputs, targets, "frame_distance")


def sample_batch(iteration: int, graph: ViewGraph, sequence: list[int],
                 config: CurriculumConfig, rng) -> CurriculumBatch:
    """Draw one training batch.

    With probability graph_probability the batch follows graph adjacency
    (warm-up favors high-overlap neighborhoods, later iterations bias to low
    overlap); otherwise views come from the sequence under the annealed
    frame-distance band.
    """
    if not graph.nodes or not sequence:
        raise ValueError("graph and sequence must be non-empty")
    use_graph = rng.random() < config.graph_probability
    if use_graph:
        return _graph_batch(iteration, graph, config, rng)
    return _frame_distance_batch(iteration, sequence, config, rng)


def batch_stream(graph: ViewGraph, sequence: list[int], config: CurriculumConfig):
    """Batches for iterations 0..total_iters-1 from the config seed."""
    rng = np.random.default_rng(config.seed)
    for iteration in range(config.total_iters):
        yield sample_batch(iteration, graph, sequence, config, rng)


def export_batches_jsonl(path, batches) -> None:
    with open(path, "w") as fh:
        for b in batches:
            fh.write(json.dumps({
                "iteration": b.iteration,
                "input_ids": list(b.input_ids),
                "target_ids": list(b.target_ids),
                "source": b.source,
            }, separators=(",", ":")) + "\n")


def max_training_wiou(graph: ViewGraph, view_id: int, training_ids) -> float:
    """Strongest exact overlap between a view and any training view."""
    vis = graph.nodes[view_id].visibility
    best = 0.0
    for t in training_ids:
        if t == view_id:
            continue
        best = max(best, wiou(vis, graph.nodes[t].visibility))
    return best


def pseudo_gt_weight(quality_score: float, quality_max: float,
                     band: tuple[float, float] = (0.3, 0.5)) -> float:
    """Linear quality-to-weight map: best quality gets the top of the band."""
    lo, hi = band
    t = float(np.clip(quality_score / quality_max, 0.0, 1.0))
    return hi - (hi - lo) * t


def build_pseudo_gt_schedule(graph: ViewGraph, training_ids, freeview_records,
                             interval: int = 3000, per_event: int = 5,
                             weight_band: tuple[float, float] = (0.3, 0.5),
                             total_iters: int = 20000,
                             quality_max: float = 0.5) -> PseudoGtSchedule:
    """Iteration-indexed injections of the least-covered free-views.

    Every `interval` iterations the per_event not-yet-scheduled free-views
    with the lowest max-over-training WIoU are added, each weighted by its
    quality within weight_band, until the pool is exhausted or training ends.
    """
    training_ids = sorted(set(training_ids))
    kept = [r for r in freeview_records if r.is_kept()]
    ranked = sorted(
        kept,
        key=lambda r: (max_training_wiou(graph, r.view_id, training_ids), r.view_id),
    )
    events = []
    cursor = 0
    iteration = interval
    while cursor < len(ranked) and iteration <= total_iters:
        chunk = ranked[cursor:cursor + per_event]
        events.append(PseudoGtEvent(
            iteration=iteration,
            freeview_ids=[r.view_id for r in chunk],
            weights=[pseudo_gt_weight(r.quality.quality_score, quality_max, weight_band)
                     for r in chunk],
        ))
        cursor += per_event
        iteration += interval
    return PseudoGtSchedule(events)


def export_schedule_json(path, schedule: PseudoGtSchedule) -> None:
    doc = {"events": [
        {"iter": e.iteration, "ids": list(e.freeview_ids), "weights": list(e.weights)}
        for e in schedule.events
    ]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity with an 11x11 Gaussian window, sigma 1.5.

    Biased (weighted-moment) covariance estimates, border cropped by the
    window half-width; multichannel inputs average the per-channel values.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        return float(np.mean([ssim(a[..., c], b[..., c], data_range, k1, k2)
                              for c in range(a.shape[2])]))

    kernel = _gaussian_kernel()
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = convolve2d(a, kernel, mode="valid")
    mu_b = convolve2d(b, kernel, mode="valid")
    var_a = convolve2d(a * a, kernel, mode="valid") - mu_a**2
    var_b = convolve2d(b * b, kernel, mode="valid") - mu_b**2
    cov = convolve2d(a * b, kernel, mode="valid") - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def free_view_loss(rendered: np.ndarray, pseudo_gt: np.ndarray, weight: float) -> float:
    """weight * (mean absolute error + (1 - SSIM)); zero iff images match."""
    rendered = np.asarray(rendered, dtype=np.float64)
    pseudo_gt = np.asarray(pseudo_gt, dtype=np.float64)
    if rendered.shape != pseudo_gt.shape:
        raise ShapeMismatch(f"image shapes differ: {rendered.shape} vs {pseudo_gt.shape}")
    l1 = float(np.mean(np.abs(rendered - pseudo_gt)))
    return weight * (l1 + (1.0 - ssim(rendered, pseudo_gt)))
